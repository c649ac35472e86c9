#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "revkl/nncore/gradcheck.hpp"

namespace revkl {

struct HeadGradcheck {
  std::string head;  // "ce", "disc" or "finetune"
  GradComparison comparison;
  double max_abs_gradient = 0.0;
};

// Backpropagated gradients of each loss head on a tiny random network
// (V = 20, embed = hidden = 8, two layers) against central differences.
std::vector<HeadGradcheck> check_head_gradients(std::uint64_t seed, double h = 3e-3);

}  // namespace revkl
