#include "revkl/nncore/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace revkl {

ParamSet finite_diff_grad(const LossFn& loss, const ParamSet& params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  ParamSet probe = params;
  ParamSet grads = params.zeros_like();
  const std::size_t n = params.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double original = probe.coeff(i);
    auto at = [&](double offset) {
      probe.coeff(i) = original + offset;
      return loss(probe);
    };
    const double up2 = at(2.0 * h), up = at(h), down = at(-h), down2 = at(-2.0 * h);
    probe.coeff(i) = original;
    grads.coeff(i) = (down2 - 8.0 * down + 8.0 * up - up2) / (12.0 * h);
  }
  return grads;
}

GradComparison compare_gradients(const ParamSet& analytic, const ParamSet& numeric, double abs_floor) {
  if (!analytic.same_shape(numeric)) throw std::invalid_argument("compare_gradients: shape mismatch");
  GradComparison result;
  std::size_t flat = 0;
  for (std::size_t t = 0; t < analytic.count(); ++t) {
    const Matrix& a = analytic.tensor(t);
    const Matrix& n = numeric.tensor(t);
    for (Eigen::Index i = 0; i < a.size(); ++i, ++flat) {
      const double x = a.data()[i], y = n.data()[i];
      const double scale = std::max(std::abs(x), std::abs(y));
      const double diff = std::abs(x - y);
      ++result.coordinates;
      if (scale < abs_floor) {
        result.max_absolute_error = std::max(result.max_absolute_error, diff);
        continue;
      }
      const double rel = diff / scale;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_index = flat;
        result.worst_tensor = analytic.name(t);
      }
    }
  }
  return result;
}

}  // namespace revkl
