#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "revkl/corpus/corpus.hpp"
#include "revkl/nncore/model.hpp"
#include "revkl/objectives/objectives.hpp"

namespace revkl {

// Yields floored log-probabilities of every target in a list of sentences,
// sentence-major: entry s * 10 + (t - 1) scores token t of sentence s.
class ProbabilitySource {
 public:
  virtual ~ProbabilitySource() = default;
  virtual std::vector<double> target_log_probs(std::span<const Sentence> sentences) const = 0;
  // Full next-word distribution for one position (t >= 1).
  virtual std::vector<double> row(const Sentence& sentence, int position) const = 0;
};

class ModelSource final : public ProbabilitySource {
 public:
  explicit ModelSource(const ModelParams& params, std::size_t batch_size = 1024)
      : params_(params), batch_size_(batch_size) {}
  std::vector<double> target_log_probs(std::span<const Sentence> sentences) const override;
  std::vector<double> row(const Sentence& sentence, int position) const override;

 private:
  const ModelParams& params_;
  std::size_t batch_size_;
};

class OracleSource final : public ProbabilitySource {
 public:
  explicit OracleSource(const TrigramWorld& world) : world_(world) {}
  std::vector<double> target_log_probs(std::span<const Sentence> sentences) const override;
  std::vector<double> row(const Sentence& sentence, int position) const override;

 private:
  const TrigramWorld& world_;
};

class UniformSource final : public ProbabilitySource {
 public:
  explicit UniformSource(int vocab_size) : vocab_size_(vocab_size) {}
  std::vector<double> target_log_probs(std::span<const Sentence> sentences) const override;
  std::vector<double> row(const Sentence& sentence, int position) const override;

 private:
  int vocab_size_;
};

// Which target words a perplexity counts. An empty filter counts everything.
using WordFilter = std::function<bool(WordId)>;

// exp of the mean negative log-probability over the selected targets,
// reduced sequentially in corpus order. Throws std::invalid_argument when no
// target passes the filter.
double perplexity(std::span<const double> log_probs, std::span<const Sentence> sentences,
                  const WordFilter& filter = {});
double perplexity(const ProbabilitySource& source, std::span<const Sentence> sentences,
                  const WordFilter& filter = {});

double except_word_perplexity(const ProbabilitySource& source, std::span<const Sentence> sentences, WordId excluded);

struct EvalReport {
  double test_ppl = 0.0;
  double freq_ppl = 0.0;
  double rare_ppl = 0.0;
  double ratio = 0.0;         // rare_ppl / freq_ppl
  double logdiff_mean = 0.0;  // log q(w*) - log p(w*) over all test targets
  double logdiff_std = 0.0;   // population form
  std::size_t freq_tokens = 0;
  std::size_t rare_tokens = 0;
  std::size_t total_tokens = 0;
};

EvalReport imbalance_report(const ProbabilitySource& model, const TrigramWorld& world,
                            std::span<const Sentence> sentences, const WordClassPartition& partition);
// Variant that reuses already computed log-probabilities.
EvalReport imbalance_report(std::span<const double> model_log_probs, std::span<const double> true_log_probs,
                            std::span<const Sentence> sentences, const WordClassPartition& partition);

nlohmann::json to_json(const EvalReport& report);
// Columns: test_ppl,freq_ppl,rare_ppl,ratio,logdiff_mean,logdiff_std
std::string csv_header();
std::string csv_row(const EvalReport& report);

// Mean discriminator loss over the sentences with its two terms.
LossValue disc_report(const ModelParams& disc, const ModelParams& q0, std::span<const Sentence> sentences,
                      std::size_t batch_size = 1024);

}  // namespace revkl
