#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "revkl/corpus/world.hpp"

namespace revkl {

// Probabilities are floored inside every log: log(p + kProbFloor).
inline constexpr double kProbFloor = 1e-12;
// Discriminator outputs are clamped to [kRatioClamp, 1 - kRatioClamp].
inline constexpr double kRatioClamp = 1e-6;

enum class RowSource { kModel, kFrozen, kTrue, kEstimated, kDiscriminator };

// A distribution (or, for kDiscriminator / kEstimated, a positive vector) over
// the real words; values[w - 1] belongs to word w.
struct ProbRow {
  std::vector<double> values;
  RowSource source = RowSource::kModel;
  std::int64_t context_id = -1;

  double at(WordId w) const;
  std::size_t size() const { return values.size(); }
};

// total == first + second. For cross-entropy-style losses `first` is the
// cross-entropy term and `second` the reverse-KL term; for the discriminator
// they are the model-sample term D(q) and the data-sample term D(p).
struct LossValue {
  double total = 0.0;
  double first = 0.0;
  double second = 0.0;
};

double floored_log(double p);
double clamp_ratio(double r);
// x log x with the continuous extension 0 at x = 0.
double x_log_x(double x);

// -log q(w*).
LossValue ce_loss(const ProbRow& q, WordId true_word);
// sum p log(p / q); terms with p = 0 contribute 0.
double kl_div(const ProbRow& p, const ProbRow& q);
// sum q log(q / p), the exact reverse divergence against a known p.
double reverse_kl_exact(const ProbRow& q, const ProbRow& p);
// -sum_w q0(w) log r(w) - log(1 - r(w*)), with r clamped.
LossValue disc_loss(const ProbRow& q0, const ProbRow& r, WordId true_word);
// q0 (1 - r) / r elementwise, r clamped; not renormalized.
ProbRow p_hat(const ProbRow& q0, const ProbRow& r);
// The discriminator output that would reproduce p exactly: q0 / (q0 + p).
ProbRow optimal_ratio(const ProbRow& q0, const ProbRow& p);
// t = (q_theta(w*) / q0(w*)) * r(w*) / (1 - r(w*)).
double ratio_t(double q_theta, double q0, double r);
// -log q_theta(w*) + t log t.
LossValue finetune_loss(const ProbRow& q_theta, const ProbRow& q0, const ProbRow& r, WordId true_word);

}  // namespace revkl
