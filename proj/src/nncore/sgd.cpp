#include "revkl/nncore/sgd.hpp"

#include <cmath>

namespace revkl {

bool SgdState::end_epoch(double metric) {
  if (!std::isfinite(metric)) throw NonFiniteError("validation metric is not finite");
  const bool first = !std::isfinite(best_metric);
  // Perplexity-style comparison: exp(metric) must drop by the relative margin.
  const bool improved = first || metric < best_metric + std::log1p(-min_improvement);
  if (improved) {
    best_metric = metric;
  } else {
    learning_rate *= decay;
    ++decays;
    if (metric < best_metric) best_metric = metric;
  }
  return improved;
}

bool SgdState::finished() const {
  // Compare with a relative margin so 1.0 * 0.1^4 counts as reaching 1e-4.
  return learning_rate <= stop_learning_rate * (1.0 + 1e-9);
}

StepInfo sgd_step(ParamSet& params, const ParamSet& grads, const SgdState& state) {
  if (!params.same_shape(grads)) throw std::invalid_argument("sgd_step: gradient shape mismatch");
  if (!(state.learning_rate > 0.0)) throw std::invalid_argument("sgd_step: learning rate must be positive");
  StepInfo info;
  info.grad_norm = std::sqrt(grads.squared_norm());
  if (!std::isfinite(info.grad_norm)) {
    throw NonFiniteError("non-finite gradient (norm " + std::to_string(info.grad_norm) + ")");
  }
  double factor = state.learning_rate;
  if (state.clip > 0.0 && info.grad_norm > state.clip) {
    factor *= state.clip / info.grad_norm;
    info.clipped = true;
  }
  params.add_scaled(grads, -factor);
  return info;
}

}  // namespace revkl
