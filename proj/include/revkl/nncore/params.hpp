#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "revkl/nncore/tape.hpp"

namespace revkl {

// An ordered list of named dense tensors. The order is the canonical
// serialization order; each tensor is flattened row-major.
class ParamSet {
 public:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols);

  std::size_t count() const noexcept { return tensors_.size(); }
  Matrix& tensor(std::size_t i) { return tensors_.at(i); }
  const Matrix& tensor(std::size_t i) const { return tensors_.at(i); }
  const std::string& name(std::size_t i) const { return names_.at(i); }

  // Total number of scalars.
  std::size_t size() const;
  // Flat coordinate access in canonical order.
  double& coeff(std::size_t flat);
  double coeff(std::size_t flat) const;

  std::vector<double> flatten() const;
  void assign(const std::vector<double>& flat);

  // Same names and shapes, all zeros.
  ParamSet zeros_like() const;
  void set_zero();
  bool same_shape(const ParamSet& other) const;

  double squared_norm() const;
  bool all_finite() const;

  // this += factor * other
  void add_scaled(const ParamSet& other, double factor);
  void scale(double factor);

  bool operator==(const ParamSet& other) const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> tensors_;
};

}  // namespace revkl
