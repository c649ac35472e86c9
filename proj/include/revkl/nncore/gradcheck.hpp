#pragma once

#include <functional>
#include <string>

#include "revkl/nncore/params.hpp"

namespace revkl {

using LossFn = std::function<double(const ParamSet&)>;

// Five-point central differences
//   (f(p - 2h) - 8 f(p - h) + 8 f(p + h) - f(p + 2h)) / 12h,
// one coordinate at a time. The truncation error is O(h^4), so a fairly large
// h keeps rounding noise low. Intended for tiny models only: costs four loss
// evaluations per scalar.
ParamSet finite_diff_grad(const LossFn& loss, const ParamSet& params, double h = 1e-3);

struct GradComparison {
  double max_relative_error = 0.0;  // over coordinates with |grad| >= abs_floor
  double max_absolute_error = 0.0;  // over coordinates below abs_floor
  std::size_t worst_index = 0;
  std::string worst_tensor;
  std::size_t coordinates = 0;
};

// relative error = |a - n| / max(|a|, |n|); coordinates where both are below
// abs_floor are compared absolutely instead.
GradComparison compare_gradients(const ParamSet& analytic, const ParamSet& numeric, double abs_floor = 1e-8);

}  // namespace revkl
