#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "revkl/corpus/corpus.hpp"
#include "revkl/nncore/model.hpp"

namespace revkl {

// Single-word view of the fine-tuning loss with the model probability q and
// the estimated data probability p_hat as free scalars.

enum class Side { kBelow, kAbove };  // q = p_hat - eps or q = p_hat + eps

std::string_view side_name(Side side);

struct PropPoint {
  double p_hat = 0.5;
  double eps = 0.0;
  Side side = Side::kBelow;

  double q() const { return side == Side::kBelow ? p_hat - eps : p_hat + eps; }
};

// Throws std::invalid_argument unless p_hat, q() lie in (0, 1) and eps >= 0.
void validate(const PropPoint& point);

// -log q + (q / p_hat) log(q / p_hat). Throws std::invalid_argument outside (0, 1).
double combined_loss(double q, double p_hat);
// d/dq of combined_loss: -1/q + (1 + log(q / p_hat)) / p_hat.
double combined_loss_dq(double q, double p_hat);

// Quadratic expansion of combined_loss_dq around q = p_hat:
//   below: -2 eps / p_hat^2 - 1.5 eps^2 / p_hat^3
//   above: +2 eps / p_hat^2 - 1.5 eps^2 / p_hat^3
double predicted_dq(const PropPoint& point);
double taylor_residual(const PropPoint& point);

// |combined_loss_dq| relative to the CE derivative |1/q|, i.e. |dq| * q.
// Approximately 2 eps / p_hat for small eps.
double step_scale_ratio(const PropPoint& point);

// Model-level check: for each position the directional derivative of the
// fine-tuning loss along v = grad q_theta(w*|c) must be negative exactly when
// q_theta < p_hat, and a small gradient step must move q the same way.
struct SignCheckPosition {
  std::size_t sentence = 0;
  int position = 1;
  double q = 0.0;
  double p_hat = 0.0;
  double directional = 0.0;  // <grad L, grad q>
  double q_after_step = 0.0;
  bool dead_zone = false;    // |q - p_hat| < dead zone: either sign passes
  bool agrees = false;
};

struct SignCheckResult {
  std::vector<SignCheckPosition> positions;
  std::size_t checked = 0;  // outside the dead zone
  std::size_t agreed = 0;
  bool pass() const { return agreed == checked; }
};

// `r_logits`, when non-empty, overrides the discriminator with one logit per
// evaluated position (sentence-major over every position of `sentences`).
SignCheckResult direction_sign_check(const ModelParams& theta, const ModelParams& q0, const ModelParams* disc,
                                     std::span<const Sentence> sentences, std::span<const double> r_logits = {},
                                     double step = 1e-5, double dead_zone = 1e-6);

struct PropcheckOutput {
  nlohmann::json summary;  // one entry per check plus "pass"
  std::string sweep_csv;   // p_hat,eps,side,exact,predicted,residual,ratio
  bool pass = false;
};

// Runs every scalar check and the sign check on a small random model.
PropcheckOutput run_propcheck(std::uint64_t seed);

}  // namespace revkl
