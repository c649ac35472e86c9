#pragma once

#include <span>
#include <vector>

#include "revkl/corpus/corpus.hpp"
#include "revkl/nncore/params.hpp"
#include "revkl/nncore/tape.hpp"
#include "revkl/rng.hpp"

namespace revkl {

struct ModelShape {
  int vocab_size = 1000;  // real words; the embedding has one extra row for the start token
  int embed = 256;
  int hidden = 256;
  int layers = 2;

  bool operator==(const ModelShape&) const = default;
};

// How the shared logits are read: softmax over words for a language model,
// elementwise sigmoid for a discriminator.
enum class HeadType { kLanguageModel, kDiscriminator };
std::string_view head_name(HeadType head);
HeadType parse_head(std::string_view name);

struct InitOptions {
  double range = 0.1;         // weights ~ uniform(-range, range)
  double forget_bias = 1.0;
  bool zero_output = false;   // output layer starts at zero, so every logit is 0
};

// Stacked LSTM language-model network. Canonical tensor order:
//   embedding                  (V + 1) x E
//   lstm<l>.w_input            in x 4H      gate column blocks: input, forget, output, candidate
//   lstm<l>.w_hidden           H x 4H
//   lstm<l>.bias               1 x 4H
//   output.weight              H x V        column w - 1 scores word w
//   output.bias                1 x V
class ModelParams {
 public:
  explicit ModelParams(const ModelShape& shape);
  static ModelParams initialized(const ModelShape& shape, Rng& rng, const InitOptions& options = {});

  const ModelShape& shape() const noexcept { return shape_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }

  const Matrix& embedding() const { return params_.tensor(0); }
  const Matrix& w_input(int layer) const { return params_.tensor(1 + 3 * layer); }
  const Matrix& w_hidden(int layer) const { return params_.tensor(2 + 3 * layer); }
  const Matrix& bias(int layer) const { return params_.tensor(3 + 3 * layer); }
  const Matrix& output_weight() const { return params_.tensor(1 + 3 * shape_.layers); }
  const Matrix& output_bias() const { return params_.tensor(2 + 3 * shape_.layers); }
  Matrix& output_bias() { return params_.tensor(2 + 3 * shape_.layers); }

  static std::size_t parameter_count(const ModelShape& shape);

  bool operator==(const ModelParams& other) const {
    return shape_ == other.shape_ && params_ == other.params_;
  }

 private:
  ModelShape shape_;
  ParamSet params_;
};

// Sets the output bias of one real word; everything else is untouched.
ModelParams perturb_bias(const ModelParams& params, WordId word, double value = -20.0);

// Logits for every prediction position of every sentence. Row t * B + b holds
// the scores for token t + 1 of sentence b given tokens 0..t (time-major).
// Gradients go to `grads` (same layout as params) when it is non-null.
Var forward_logits(Tape& tape, const ModelParams& params, ParamSet* grads, std::span<const Sentence> batch);

// Same layout as forward_logits, with targets as zero-based word columns.
std::vector<int> target_columns(std::span<const Sentence> batch);
// Maps a time-major row to (sentence, position of the predicted token).
inline std::pair<std::size_t, int> row_position(std::size_t row, std::size_t batch_size) {
  return {row % batch_size, static_cast<int>(row / batch_size) + 1};
}

// Gradient-free evaluation.
Matrix lm_forward(const ModelParams& params, std::span<const Sentence> batch);    // logits
Matrix disc_forward(const ModelParams& params, std::span<const Sentence> batch);  // sigmoid(logits)

// Row-wise numerics shared by every loss and metric.
Matrix softmax_rows(const Matrix& logits);
Matrix log_softmax_rows(const Matrix& logits);
double log_sum_exp(const Eigen::Ref<const RowVector>& row);
double stable_sigmoid(double x);
double log_sigmoid(double x);

}  // namespace revkl
