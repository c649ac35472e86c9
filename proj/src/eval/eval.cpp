#include "revkl/eval/eval.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "revkl/nncore/tape.hpp"
#include "revkl/objectives/heads.hpp"

namespace revkl {

namespace {

// Converts time-major rows of one batch into sentence-major order.
void scatter_sentence_major(std::span<const double> time_major, std::size_t batch, std::size_t offset,
                            std::vector<double>& out) {
  for (std::size_t row = 0; row < time_major.size(); ++row) {
    const auto [s, pos] = row_position(row, batch);
    out[(offset + s) * kSentenceWords + (pos - 1)] = time_major[row];
  }
}

}  // namespace

std::vector<double> ModelSource::target_log_probs(std::span<const Sentence> sentences) const {
  std::vector<double> out(sentences.size() * kSentenceWords);
  for (std::size_t start = 0; start < sentences.size(); start += batch_size_) {
    const auto batch = sentences.subspan(start, std::min(batch_size_, sentences.size() - start));
    const Matrix logits = lm_forward(params_, batch);
    const auto lp = revkl::target_log_probs(logits, target_columns(batch));
    scatter_sentence_major(lp, batch.size(), start, out);
  }
  return out;
}

std::vector<double> ModelSource::row(const Sentence& sentence, int position) const {
  if (position < 1 || position >= kSentenceTokens) throw std::invalid_argument("row: position out of range");
  const Matrix logits = lm_forward(params_, std::span<const Sentence>(&sentence, 1));
  const Matrix probs = softmax_rows(logits.row(position - 1));
  return {probs.data(), probs.data() + probs.size()};
}

std::vector<double> OracleSource::target_log_probs(std::span<const Sentence> sentences) const {
  std::vector<double> out(sentences.size() * kSentenceWords);
  std::vector<double> row(world_.vocab_size());
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    for (int t = 1; t < kSentenceTokens; ++t) {
      world_.true_conditional(std::span<const WordId>(sentences[s].data(), t), row);
      out[s * kSentenceWords + (t - 1)] = floored_log(row[sentences[s][t] - 1]);
    }
  }
  return out;
}

std::vector<double> OracleSource::row(const Sentence& sentence, int position) const {
  if (position < 1 || position >= kSentenceTokens) throw std::invalid_argument("row: position out of range");
  return world_.true_conditional(std::span<const WordId>(sentence.data(), position));
}

std::vector<double> UniformSource::target_log_probs(std::span<const Sentence> sentences) const {
  return std::vector<double>(sentences.size() * kSentenceWords, floored_log(1.0 / vocab_size_));
}

std::vector<double> UniformSource::row(const Sentence&, int) const {
  return std::vector<double>(vocab_size_, 1.0 / vocab_size_);
}

double perplexity(std::span<const double> log_probs, std::span<const Sentence> sentences, const WordFilter& filter) {
  if (log_probs.size() != sentences.size() * kSentenceWords) {
    throw std::invalid_argument("perplexity: log-probability count does not match sentences");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    for (int t = 1; t < kSentenceTokens; ++t) {
      if (filter && !filter(sentences[s][t])) continue;
      total -= log_probs[s * kSentenceWords + (t - 1)];
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("perplexity: no target passes the filter");
  return std::exp(total / static_cast<double>(count));
}

double perplexity(const ProbabilitySource& source, std::span<const Sentence> sentences, const WordFilter& filter) {
  return perplexity(source.target_log_probs(sentences), sentences, filter);
}

double except_word_perplexity(const ProbabilitySource& source, std::span<const Sentence> sentences, WordId excluded) {
  return perplexity(source, sentences, [excluded](WordId w) { return w != excluded; });
}

EvalReport imbalance_report(std::span<const double> model_log_probs, std::span<const double> true_log_probs,
                            std::span<const Sentence> sentences, const WordClassPartition& partition) {
  if (model_log_probs.size() != true_log_probs.size()) {
    throw std::invalid_argument("imbalance_report: log-probability vectors differ in length");
  }
  EvalReport r;
  r.test_ppl = perplexity(model_log_probs, sentences);
  r.freq_ppl = perplexity(model_log_probs, sentences, [&](WordId w) { return partition.is_frequent(w); });
  r.rare_ppl = perplexity(model_log_probs, sentences, [&](WordId w) { return partition.is_rare(w); });
  r.ratio = r.rare_ppl / r.freq_ppl;

  double sum = 0.0;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    for (int t = 1; t < kSentenceTokens; ++t) {
      const std::size_t i = s * kSentenceWords + (t - 1);
      sum += model_log_probs[i] - true_log_probs[i];
      if (partition.is_frequent(sentences[s][t])) {
        ++r.freq_tokens;
      } else {
        ++r.rare_tokens;
      }
    }
  }
  r.total_tokens = model_log_probs.size();
  const double n = static_cast<double>(r.total_tokens);
  r.logdiff_mean = sum / n;
  double sq = 0.0;
  for (std::size_t i = 0; i < model_log_probs.size(); ++i) {
    const double d = model_log_probs[i] - true_log_probs[i] - r.logdiff_mean;
    sq += d * d;
  }
  r.logdiff_std = std::sqrt(sq / n);
  return r;
}

EvalReport imbalance_report(const ProbabilitySource& model, const TrigramWorld& world,
                            std::span<const Sentence> sentences, const WordClassPartition& partition) {
  const auto q = model.target_log_probs(sentences);
  const auto p = OracleSource(world).target_log_probs(sentences);
  return imbalance_report(q, p, sentences, partition);
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"test_ppl", r.test_ppl},         {"freq_ppl", r.freq_ppl},         {"rare_ppl", r.rare_ppl},
          {"ratio", r.ratio},               {"logdiff_mean", r.logdiff_mean}, {"logdiff_std", r.logdiff_std},
          {"freq_tokens", r.freq_tokens},   {"rare_tokens", r.rare_tokens},   {"total_tokens", r.total_tokens}};
}

std::string csv_header() { return "test_ppl,freq_ppl,rare_ppl,ratio,logdiff_mean,logdiff_std"; }

std::string csv_row(const EvalReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << r.test_ppl << ',' << r.freq_ppl << ',' << r.rare_ppl << ',' << r.ratio << ',' << r.logdiff_mean << ','
      << r.logdiff_std;
  return out.str();
}

LossValue disc_report(const ModelParams& disc, const ModelParams& q0, std::span<const Sentence> sentences,
                      std::size_t batch_size) {
  if (sentences.empty()) throw std::invalid_argument("disc_report: no sentences");
  double model_total = 0.0, data_total = 0.0;
  std::size_t rows = 0;
  for (std::size_t start = 0; start < sentences.size(); start += batch_size) {
    const auto batch = sentences.subspan(start, std::min(batch_size, sentences.size() - start));
    const Matrix q0_probs = softmax_rows(lm_forward(q0, batch));
    Tape tape;
    const Var logits = forward_logits(tape, disc, nullptr, batch);
    const auto targets = target_columns(batch);
    const HeadResult head = disc_head(tape, logits, q0_probs, targets);
    const auto n = static_cast<double>(targets.size());
    model_total += head.mean.first * n;
    data_total += head.mean.second * n;
    rows += targets.size();
  }
  const double inv = 1.0 / static_cast<double>(rows);
  return {(model_total + data_total) * inv, model_total * inv, data_total * inv};
}

}  // namespace revkl
