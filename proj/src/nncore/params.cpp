#include "revkl/nncore/params.hpp"

#include <stdexcept>

namespace revkl {

std::size_t ParamSet::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  names_.push_back(std::move(name));
  tensors_.push_back(Matrix::Zero(rows, cols));
  return tensors_.size() - 1;
}

std::size_t ParamSet::size() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
  return n;
}

double& ParamSet::coeff(std::size_t flat) {
  for (auto& t : tensors_) {
    const auto n = static_cast<std::size_t>(t.size());
    if (flat < n) return t.data()[flat];
    flat -= n;
  }
  throw std::out_of_range("ParamSet::coeff: index out of range");
}

double ParamSet::coeff(std::size_t flat) const { return const_cast<ParamSet*>(this)->coeff(flat); }

std::vector<double> ParamSet::flatten() const {
  std::vector<double> out;
  out.reserve(size());
  for (const auto& t : tensors_) out.insert(out.end(), t.data(), t.data() + t.size());
  return out;
}

void ParamSet::assign(const std::vector<double>& flat) {
  if (flat.size() != size()) throw std::invalid_argument("ParamSet::assign: size mismatch");
  std::size_t offset = 0;
  for (auto& t : tensors_) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset),
              flat.begin() + static_cast<std::ptrdiff_t>(offset + t.size()), t.data());
    offset += static_cast<std::size_t>(t.size());
  }
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (std::size_t i = 0; i < tensors_.size(); ++i) out.add(names_[i], tensors_[i].rows(), tensors_[i].cols());
  return out;
}

void ParamSet::set_zero() {
  for (auto& t : tensors_) t.setZero();
}

bool ParamSet::same_shape(const ParamSet& other) const {
  if (other.tensors_.size() != tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].rows() != other.tensors_[i].rows() || tensors_[i].cols() != other.tensors_[i].cols()) {
      return false;
    }
  }
  return true;
}

double ParamSet::squared_norm() const {
  double s = 0.0;
  for (const auto& t : tensors_) s += t.squaredNorm();
  return s;
}

bool ParamSet::all_finite() const {
  for (const auto& t : tensors_) {
    if (!t.allFinite()) return false;
  }
  return true;
}

void ParamSet::add_scaled(const ParamSet& other, double factor) {
  if (!same_shape(other)) throw std::invalid_argument("ParamSet::add_scaled: shape mismatch");
  for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i] += factor * other.tensors_[i];
}

void ParamSet::scale(double factor) {
  for (auto& t : tensors_) t *= factor;
}

bool ParamSet::operator==(const ParamSet& other) const {
  return names_ == other.names_ && same_shape(other) && flatten() == other.flatten();
}

}  // namespace revkl
