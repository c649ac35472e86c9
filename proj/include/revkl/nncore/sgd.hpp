#pragma once

#include <limits>
#include <stdexcept>
#include <string>

#include "revkl/nncore/params.hpp"

namespace revkl {

// Thrown when a loss or gradient stops being finite.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SgdState {
  double learning_rate = 1.0;
  double clip = 1.0;            // global L2 norm threshold; <= 0 disables clipping
  double decay = 0.1;           // plateau multiplier
  double min_improvement = 1e-3;  // relative drop of exp(metric) an epoch must reach
  double stop_learning_rate = 1e-4;
  double best_metric = std::numeric_limits<double>::infinity();
  int decays = 0;

  // Plateau bookkeeping after each validation pass. `metric` is a mean
  // log-loss (lower is better); the epoch counts as an improvement when
  // exp(metric) beats the best so far by min_improvement relative. Returns
  // true on improvement.
  bool end_epoch(double metric);
  // Training ends once the rate has decayed to the stop threshold.
  bool finished() const;
};

struct StepInfo {
  double grad_norm = 0.0;  // before clipping
  bool clipped = false;
};

// params -= lr * clip(grads). Throws NonFiniteError on a non-finite gradient
// (params are left untouched in that case).
StepInfo sgd_step(ParamSet& params, const ParamSet& grads, const SgdState& state);

}  // namespace revkl
