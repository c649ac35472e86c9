#pragma once

#include <span>
#include <vector>

#include "revkl/nncore/tape.hpp"
#include "revkl/objectives/objectives.hpp"

namespace revkl {

// Batched losses on the tape. `logits` is N x V (one row per prediction
// position), `targets` holds zero-based word columns. Each returns the mean
// loss over rows as a 1 x 1 node plus the per-term means.
struct HeadResult {
  Var loss;
  LossValue mean;
};

// Mean of -log(q(w*) + floor) with q = softmax(logits).
HeadResult ce_head(Tape& tape, Var logits, std::span<const int> targets);

// Discriminator loss with r = sigmoid(clamped logits). `q0` is the frozen
// model's probability matrix (N x V); it is a constant.
HeadResult disc_head(Tape& tape, Var logits, const Matrix& q0, std::span<const int> targets);

// Fine-tuning loss. `q0_log_target[n]` is the frozen model's floored log
// probability of the target and `r_logit_target[n]` the discriminator logit at
// the target; both are constants.
HeadResult finetune_head(Tape& tape, Var logits, std::span<const double> q0_log_target,
                         std::span<const double> r_logit_target, std::span<const int> targets);

// Logit bound equivalent to clamping r to [kRatioClamp, 1 - kRatioClamp].
double ratio_logit_limit();
double clamp_logit(double z);

// Floored log-probability of each row's target under softmax(logits).
std::vector<double> target_log_probs(const Matrix& logits, std::span<const int> targets);

}  // namespace revkl
