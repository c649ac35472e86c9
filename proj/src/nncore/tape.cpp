#include "revkl/nncore/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace revkl {

std::size_t Tape::check(Var v) const {
  if (v.tape != this || v.index >= nodes_.size()) {
    throw std::invalid_argument("variable does not belong to this tape");
  }
  return v.index;
}

Matrix& Tape::grad_of(std::size_t node) {
  Node& n = nodes_[node];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::push(Matrix value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (std::size_t in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), {}, nullptr); }

Var Tape::parameter(const Matrix& value, Matrix* sink) {
  if (sink != nullptr && (sink->rows() != value.rows() || sink->cols() != value.cols())) {
    throw std::invalid_argument("parameter: gradient sink shape mismatch");
  }
  Node n;
  n.value = value;
  n.sink = sink;
  n.requires_grad = sink != nullptr;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

const Matrix& Tape::value(Var v) const { return nodes_[check(v)].value; }

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw std::invalid_argument("scalar: node is not 1 x 1");
  return m(0, 0);
}

bool Tape::requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }

Var Tape::matmul(Var a, Var b) {
  const auto ia = check(a), ib = check(b);
  if (nodes_[ia].value.cols() != nodes_[ib].value.rows()) throw std::invalid_argument("matmul: shape mismatch");
  Matrix out = nodes_[ia].value * nodes_[ib].value;
  return push(std::move(out), {ia, ib}, [](Tape& t, std::size_t self) {
    const auto ia = t.nodes_[self].inputs[0], ib = t.nodes_[self].inputs[1];
    const Matrix& g = t.nodes_[self].grad;
    if (t.nodes_[ia].requires_grad) t.grad_of(ia).noalias() += g * t.nodes_[ib].value.transpose();
    if (t.nodes_[ib].requires_grad) t.grad_of(ib).noalias() += t.nodes_[ia].value.transpose() * g;
  });
}

Var Tape::add(Var a, Var b) {
  const auto ia = check(a), ib = check(b);
  if (nodes_[ia].value.rows() != nodes_[ib].value.rows() || nodes_[ia].value.cols() != nodes_[ib].value.cols()) {
    throw std::invalid_argument("add: shape mismatch");
  }
  Matrix out = nodes_[ia].value + nodes_[ib].value;
  return push(std::move(out), {ia, ib}, [](Tape& t, std::size_t self) {
    for (std::size_t in : t.nodes_[self].inputs) {
      if (t.nodes_[in].requires_grad) t.grad_of(in) += t.nodes_[self].grad;
    }
  });
}

Var Tape::add_row(Var a, Var row) {
  const auto ia = check(a), ir = check(row);
  if (nodes_[ir].value.rows() != 1 || nodes_[ir].value.cols() != nodes_[ia].value.cols()) {
    throw std::invalid_argument("add_row: shape mismatch");
  }
  Matrix out = nodes_[ia].value.rowwise() + nodes_[ir].value.row(0);
  return push(std::move(out), {ia, ir}, [](Tape& t, std::size_t self) {
    const auto ia = t.nodes_[self].inputs[0], ir = t.nodes_[self].inputs[1];
    const Matrix& g = t.nodes_[self].grad;
    if (t.nodes_[ia].requires_grad) t.grad_of(ia) += g;
    if (t.nodes_[ir].requires_grad) t.grad_of(ir) += g.colwise().sum();
  });
}

Var Tape::hadamard(Var a, Var b) {
  const auto ia = check(a), ib = check(b);
  if (nodes_[ia].value.rows() != nodes_[ib].value.rows() || nodes_[ia].value.cols() != nodes_[ib].value.cols()) {
    throw std::invalid_argument("hadamard: shape mismatch");
  }
  Matrix out = nodes_[ia].value.cwiseProduct(nodes_[ib].value);
  return push(std::move(out), {ia, ib}, [](Tape& t, std::size_t self) {
    const auto ia = t.nodes_[self].inputs[0], ib = t.nodes_[self].inputs[1];
    const Matrix& g = t.nodes_[self].grad;
    if (t.nodes_[ia].requires_grad) t.grad_of(ia) += g.cwiseProduct(t.nodes_[ib].value);
    if (t.nodes_[ib].requires_grad) t.grad_of(ib) += g.cwiseProduct(t.nodes_[ia].value);
  });
}

Var Tape::sigmoid(Var a) {
  const auto ia = check(a);
  Matrix out = nodes_[ia].value.unaryExpr([](double x) {
    // Split by sign so exp never overflows.
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return push(std::move(out), {ia}, [](Tape& t, std::size_t self) {
    const auto ia = t.nodes_[self].inputs[0];
    const Matrix& y = t.nodes_[self].value;
    t.grad_of(ia).array() += t.nodes_[self].grad.array() * y.array() * (1.0 - y.array());
  });
}

Var Tape::tanh(Var a) {
  const auto ia = check(a);
  Matrix out = nodes_[ia].value.array().tanh().matrix();
  return push(std::move(out), {ia}, [](Tape& t, std::size_t self) {
    const auto ia = t.nodes_[self].inputs[0];
    const Matrix& y = t.nodes_[self].value;
    t.grad_of(ia).array() += t.nodes_[self].grad.array() * (1.0 - y.array().square());
  });
}

Var Tape::slice_cols(Var a, Eigen::Index first, Eigen::Index count) {
  const auto ia = check(a);
  if (first < 0 || count < 0 || first + count > nodes_[ia].value.cols()) {
    throw std::invalid_argument("slice_cols: out of range");
  }
  Matrix out = nodes_[ia].value.middleCols(first, count);
  return push(std::move(out), {ia}, [first, count](Tape& t, std::size_t self) {
    const auto ia = t.nodes_[self].inputs[0];
    t.grad_of(ia).middleCols(first, count) += t.nodes_[self].grad;
  });
}

Var Tape::slice_rows(Var a, Eigen::Index first, Eigen::Index count) {
  const auto ia = check(a);
  if (first < 0 || count < 0 || first + count > nodes_[ia].value.rows()) {
    throw std::invalid_argument("slice_rows: out of range");
  }
  Matrix out = nodes_[ia].value.middleRows(first, count);
  return push(std::move(out), {ia}, [first, count](Tape& t, std::size_t self) {
    const auto ia = t.nodes_[self].inputs[0];
    t.grad_of(ia).middleRows(first, count) += t.nodes_[self].grad;
  });
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  std::vector<std::size_t> ids;
  Eigen::Index rows = 0;
  const Eigen::Index cols = nodes_[check(parts[0])].value.cols();
  for (Var p : parts) {
    const auto ip = check(p);
    if (nodes_[ip].value.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += nodes_[ip].value.rows();
    ids.push_back(ip);
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (std::size_t id : ids) {
    out.middleRows(offset, nodes_[id].value.rows()) = nodes_[id].value;
    offset += nodes_[id].value.rows();
  }
  return push(std::move(out), std::move(ids), [](Tape& t, std::size_t self) {
    Eigen::Index offset = 0;
    for (std::size_t in : t.nodes_[self].inputs) {
      const Eigen::Index r = t.nodes_[in].value.rows();
      if (t.nodes_[in].requires_grad) t.grad_of(in) += t.nodes_[self].grad.middleRows(offset, r);
      offset += r;
    }
  });
}

Var Tape::gather_rows(Var table, std::span<const int> rows) {
  const auto it = check(table);
  const Matrix& src = nodes_[it].value;
  Matrix out(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= src.rows()) {
      throw std::out_of_range("gather_rows: row index " + std::to_string(rows[r]) + " out of range");
    }
    out.row(static_cast<Eigen::Index>(r)) = src.row(rows[r]);
  }
  std::vector<int> ids(rows.begin(), rows.end());
  return push(std::move(out), {it}, [ids = std::move(ids)](Tape& t, std::size_t self) {
    const auto it = t.nodes_[self].inputs[0];
    Matrix& g = t.grad_of(it);
    const Matrix& up = t.nodes_[self].grad;
    for (std::size_t r = 0; r < ids.size(); ++r) g.row(ids[r]) += up.row(static_cast<Eigen::Index>(r));
  });
}

Var Tape::sum(Var a) {
  const auto ia = check(a);
  Matrix out(1, 1);
  out(0, 0) = nodes_[ia].value.sum();
  return push(std::move(out), {ia}, [](Tape& t, std::size_t self) {
    const auto ia = t.nodes_[self].inputs[0];
    t.grad_of(ia).array() += t.nodes_[self].grad(0, 0);
  });
}

Var Tape::sum_squares(Var a) {
  const auto ia = check(a);
  Matrix out(1, 1);
  out(0, 0) = nodes_[ia].value.squaredNorm();
  return push(std::move(out), {ia}, [](Tape& t, std::size_t self) {
    const auto ia = t.nodes_[self].inputs[0];
    t.grad_of(ia) += (2.0 * t.nodes_[self].grad(0, 0)) * t.nodes_[ia].value;
  });
}

Var Tape::scale(Var a, double factor) {
  const auto ia = check(a);
  Matrix out = factor * nodes_[ia].value;
  return push(std::move(out), {ia}, [factor](Tape& t, std::size_t self) {
    const auto ia = t.nodes_[self].inputs[0];
    t.grad_of(ia) += factor * t.nodes_[self].grad;
  });
}

Var Tape::custom(std::vector<Var> inputs, Matrix value, BackwardFn backward) {
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (Var v : inputs) ids.push_back(check(v));
  return push(std::move(value), std::move(ids), std::move(backward));
}

void Tape::backward(Var loss) {
  const auto il = check(loss);
  if (nodes_[il].value.rows() != 1 || nodes_[il].value.cols() != 1) {
    throw std::invalid_argument("backward: loss must be a 1 x 1 node");
  }
  grad_of(il).setConstant(1.0);
  for (std::size_t i = il + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
    if (n.sink != nullptr) *n.sink += n.grad;
    n.grad.resize(0, 0);
  }
}

}  // namespace revkl
