#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "revkl/corpus/world.hpp"

namespace revkl {

inline constexpr int kSentenceWords = 10;
inline constexpr int kSentenceTokens = kSentenceWords + 1;

// Start token followed by ten real words.
using Sentence = std::array<WordId, kSentenceTokens>;

enum class Split { kTrain, kValid, kTest };
std::string_view split_name(Split split);

struct SplitSizes {
  std::size_t train = 80'000;
  std::size_t valid = 10'000;
  std::size_t test = 10'000;
};

struct TokenCorpus {
  int vocab_size = 0;
  std::uint64_t world_seed = 0;
  std::uint64_t rng_seed = 0;
  std::vector<Sentence> train;
  std::vector<Sentence> valid;
  std::vector<Sentence> test;
  // Occurrence counts over the training split, indexed by word id
  // (entry 0, the start token, is always 0).
  std::vector<std::int64_t> frequency;

  const std::vector<Sentence>& split(Split s) const;
  SplitSizes sizes() const { return {train.size(), valid.size(), test.size()}; }
};

// Samples each split from its own stream derived from rng_seed. The first two
// words come from the world's start marginal; the rest follow conditional rows.
TokenCorpus sample_corpus(const TrigramWorld& world, const SplitSizes& sizes, std::uint64_t rng_seed);

std::vector<std::int64_t> count_frequencies(std::span<const Sentence> sentences, int vocab_size);

// Throws std::invalid_argument if a sentence violates the corpus format.
void validate_sentences(std::span<const Sentence> sentences, int vocab_size);

// Frequency classes from training counts; ties go to the smaller word id.
struct WordClassPartition {
  static constexpr std::size_t kFrequent = 50;
  static constexpr std::size_t kAlmostFrequent = 100;

  std::vector<WordId> ranked;           // all words, most frequent first
  std::vector<WordId> frequent;         // ranks 1..50
  std::vector<WordId> almost_frequent;  // ranks 51..150
  std::vector<WordId> rare;             // everything outside the top 50
  std::vector<int> rank_of;             // 1-based rank, indexed by word id

  bool is_frequent(WordId w) const { return rank_of.at(w) <= static_cast<int>(kFrequent); }
  bool is_rare(WordId w) const { return !is_frequent(w); }
  WordId word_at_rank(int rank) const { return ranked.at(rank - 1); }
};

WordClassPartition word_stats(const TokenCorpus& corpus);

struct FrequencyShares {
  double frequent = 0.0;         // share of training tokens in the top 50
  double almost_frequent = 0.0;  // share in ranks 51..150
  double rest = 0.0;
};
FrequencyShares frequency_shares(const TokenCorpus& corpus, const WordClassPartition& partition);

// On-disk layout: <dir>/{train,valid,test}.txt with one sentence per line
// (space-separated ids, start token written as 0) and <dir>/corpus.json.
void save_corpus(const TokenCorpus& corpus, const std::filesystem::path& dir);
TokenCorpus load_corpus(const std::filesystem::path& dir);

}  // namespace revkl
