#include "revkl/corpus/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "revkl/binio.hpp"
#include "revkl/rng.hpp"

namespace revkl {

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "unknown";
}

const std::vector<Sentence>& TokenCorpus::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kValid: return valid;
    case Split::kTest: return test;
  }
  throw std::invalid_argument("unknown split");
}

namespace {

std::size_t sample_index(std::span<const double> cumulative, double u) {
  // First index whose cumulative mass exceeds u * total.
  const double target = u * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

std::vector<Sentence> sample_split(const TrigramWorld& world, std::span<const double> start_cdf,
                                   std::size_t count, Rng& rng) {
  const int v = world.vocab_size();
  std::vector<Sentence> sentences(count);
  std::vector<double> row(v);
  std::vector<double> cdf(v);
  for (auto& s : sentences) {
    s[0] = kStartToken;
    const std::size_t pair = sample_index(start_cdf, rng.uniform());
    s[1] = static_cast<WordId>(pair / v) + 1;
    s[2] = static_cast<WordId>(pair % v) + 1;
    for (int t = 3; t < kSentenceTokens; ++t) {
      world.conditional_row(s[t - 2], s[t - 1], row);
      std::partial_sum(row.begin(), row.end(), cdf.begin());
      s[t] = static_cast<WordId>(sample_index(cdf, rng.uniform())) + 1;
    }
  }
  return sentences;
}

}  // namespace

TokenCorpus sample_corpus(const TrigramWorld& world, const SplitSizes& sizes, std::uint64_t rng_seed) {
  if (sizes.train == 0 || sizes.valid == 0 || sizes.test == 0) {
    throw std::invalid_argument("sample_corpus: split sizes must be positive");
  }
  const auto& joint = world.start_marginal();
  std::vector<double> start_cdf(joint.size());
  std::partial_sum(joint.begin(), joint.end(), start_cdf.begin());

  TokenCorpus corpus;
  corpus.vocab_size = world.vocab_size();
  corpus.world_seed = world.seed();
  corpus.rng_seed = rng_seed;
  Rng train_rng(derive_seed(rng_seed, 1));
  Rng valid_rng(derive_seed(rng_seed, 2));
  Rng test_rng(derive_seed(rng_seed, 3));
  corpus.train = sample_split(world, start_cdf, sizes.train, train_rng);
  corpus.valid = sample_split(world, start_cdf, sizes.valid, valid_rng);
  corpus.test = sample_split(world, start_cdf, sizes.test, test_rng);
  corpus.frequency = count_frequencies(corpus.train, corpus.vocab_size);
  return corpus;
}

std::vector<std::int64_t> count_frequencies(std::span<const Sentence> sentences, int vocab_size) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(vocab_size) + 1, 0);
  for (const auto& s : sentences) {
    for (int t = 1; t < kSentenceTokens; ++t) ++counts.at(s[t]);
  }
  return counts;
}

void validate_sentences(std::span<const Sentence> sentences, int vocab_size) {
  for (const auto& s : sentences) {
    if (s[0] != kStartToken) throw std::invalid_argument("sentence does not begin with the start token");
    for (int t = 1; t < kSentenceTokens; ++t) {
      if (s[t] < 1 || s[t] > vocab_size) {
        throw std::invalid_argument("sentence token out of range: " + std::to_string(s[t]));
      }
    }
  }
}

WordClassPartition word_stats(const TokenCorpus& corpus) {
  if (corpus.train.empty()) throw std::invalid_argument("word_stats: empty training split");
  const auto counts = corpus.frequency.empty() ? count_frequencies(corpus.train, corpus.vocab_size)
                                               : corpus.frequency;
  WordClassPartition p;
  p.ranked.resize(corpus.vocab_size);
  std::iota(p.ranked.begin(), p.ranked.end(), 1);
  std::stable_sort(p.ranked.begin(), p.ranked.end(), [&](WordId a, WordId b) {
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    return a < b;
  });
  p.rank_of.assign(static_cast<std::size_t>(corpus.vocab_size) + 1, 0);
  for (std::size_t r = 0; r < p.ranked.size(); ++r) p.rank_of[p.ranked[r]] = static_cast<int>(r) + 1;

  const std::size_t n_freq = std::min(WordClassPartition::kFrequent, p.ranked.size());
  const std::size_t n_almost =
      std::min(WordClassPartition::kFrequent + WordClassPartition::kAlmostFrequent, p.ranked.size());
  p.frequent.assign(p.ranked.begin(), p.ranked.begin() + n_freq);
  p.almost_frequent.assign(p.ranked.begin() + n_freq, p.ranked.begin() + n_almost);
  p.rare.assign(p.ranked.begin() + n_freq, p.ranked.end());
  return p;
}

FrequencyShares frequency_shares(const TokenCorpus& corpus, const WordClassPartition& partition) {
  const auto counts = corpus.frequency.empty() ? count_frequencies(corpus.train, corpus.vocab_size)
                                               : corpus.frequency;
  double total = 0.0, freq = 0.0, almost = 0.0;
  for (WordId w = 1; w <= corpus.vocab_size; ++w) {
    const auto c = static_cast<double>(counts[w]);
    total += c;
    const int rank = partition.rank_of[w];
    if (rank <= static_cast<int>(WordClassPartition::kFrequent)) {
      freq += c;
    } else if (rank <= static_cast<int>(WordClassPartition::kFrequent + WordClassPartition::kAlmostFrequent)) {
      almost += c;
    }
  }
  return {freq / total, almost / total, (total - freq - almost) / total};
}

namespace {

std::string sentences_to_text(std::span<const Sentence> sentences) {
  std::string out;
  out.reserve(sentences.size() * kSentenceTokens * 4);
  for (const auto& s : sentences) {
    for (int t = 0; t < kSentenceTokens; ++t) {
      if (t > 0) out.push_back(' ');
      out += std::to_string(s[t]);
    }
    out.push_back('\n');
  }
  return out;
}

std::vector<Sentence> sentences_from_text(const std::string& text, const std::filesystem::path& origin) {
  std::vector<Sentence> sentences;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Sentence s{};
    int t = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      if (t >= kSentenceTokens) {
        throw std::runtime_error(origin.string() + ":" + std::to_string(line_no) + ": too many tokens");
      }
      int value = 0;
      auto [next, ec] = std::from_chars(p, end, value);
      if (ec != std::errc{}) {
        throw std::runtime_error(origin.string() + ":" + std::to_string(line_no) + ": bad token");
      }
      s[t++] = value;
      p = next;
    }
    if (t != kSentenceTokens) {
      throw std::runtime_error(origin.string() + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(kSentenceTokens) + " tokens");
    }
    sentences.push_back(s);
  }
  return sentences;
}

}  // namespace

void save_corpus(const TokenCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "train.txt", sentences_to_text(corpus.train));
  write_text_file(dir / "valid.txt", sentences_to_text(corpus.valid));
  write_text_file(dir / "test.txt", sentences_to_text(corpus.test));
  nlohmann::json meta = {
      {"format", "revkl-corpus"},
      {"version", 1},
      {"vocab_size", corpus.vocab_size},
      {"world_seed", corpus.world_seed},
      {"rng_seed", corpus.rng_seed},
      {"sentence_tokens", kSentenceTokens},
      {"start_token", kStartToken},
      {"split_sizes", {{"train", corpus.train.size()}, {"valid", corpus.valid.size()}, {"test", corpus.test.size()}}},
      {"frequency", corpus.frequency},
  };
  write_text_file(dir / "corpus.json", meta.dump(2) + "\n");
}

TokenCorpus load_corpus(const std::filesystem::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(dir / "corpus.json"));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed corpus.json in " + dir.string() + ": " + e.what());
  }
  if (meta.value("format", "") != "revkl-corpus") {
    throw std::runtime_error("not a corpus directory: " + dir.string());
  }
  TokenCorpus corpus;
  corpus.vocab_size = meta.at("vocab_size").get<int>();
  corpus.world_seed = meta.at("world_seed").get<std::uint64_t>();
  corpus.rng_seed = meta.at("rng_seed").get<std::uint64_t>();
  corpus.train = sentences_from_text(read_text_file(dir / "train.txt"), dir / "train.txt");
  corpus.valid = sentences_from_text(read_text_file(dir / "valid.txt"), dir / "valid.txt");
  corpus.test = sentences_from_text(read_text_file(dir / "test.txt"), dir / "test.txt");
  validate_sentences(corpus.train, corpus.vocab_size);
  validate_sentences(corpus.valid, corpus.vocab_size);
  validate_sentences(corpus.test, corpus.vocab_size);
  const auto& sizes = meta.at("split_sizes");
  if (sizes.at("train").get<std::size_t>() != corpus.train.size() ||
      sizes.at("valid").get<std::size_t>() != corpus.valid.size() ||
      sizes.at("test").get<std::size_t>() != corpus.test.size()) {
    throw std::runtime_error("corpus split sizes disagree with corpus.json in " + dir.string());
  }
  corpus.frequency = meta.at("frequency").get<std::vector<std::int64_t>>();
  if (corpus.frequency != count_frequencies(corpus.train, corpus.vocab_size)) {
    throw std::runtime_error("frequency table disagrees with training split in " + dir.string());
  }
  return corpus;
}

}  // namespace revkl
