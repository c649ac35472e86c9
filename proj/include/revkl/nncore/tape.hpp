#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace revkl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

class Tape;

// Handle to a value recorded on a tape. Only valid for the tape that made it.
struct Var {
  const Tape* tape = nullptr;
  std::size_t index = 0;
};

// Reverse-mode differentiation over dense row-major matrices. Operations are
// recorded in execution order; backward() walks them in reverse and
// accumulates adjoints, finally adding parameter adjoints into the sink
// matrices supplied to parameter().
class Tape {
 public:
  // Called with the tape and the node index once the node's adjoint is final.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves.
  Var constant(Matrix value);
  // A differentiable leaf. After backward(), its adjoint is added into *sink
  // (which must have the same shape). Pass nullptr for a frozen parameter.
  Var parameter(const Matrix& value, Matrix* sink);

  // Primitive operations.
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);  // broadcasts a 1 x n row over every row of a
  Var hadamard(Var a, Var b);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var slice_cols(Var a, Eigen::Index first, Eigen::Index count);
  Var slice_rows(Var a, Eigen::Index first, Eigen::Index count);
  Var concat_rows(std::span<const Var> parts);
  Var gather_rows(Var table, std::span<const int> rows);
  Var sum(Var a);
  Var sum_squares(Var a);
  Var scale(Var a, double factor);

  // Extension point for fused operations. `value` is the forward result; the
  // callback receives the tape and the new node's index and must push the
  // node's adjoint into its inputs via adjoint()/grad_of().
  Var custom(std::vector<Var> inputs, Matrix value, BackwardFn backward);

  const Matrix& value(Var v) const;
  double scalar(Var v) const;
  bool requires_grad(Var v) const;

  // Runs reverse accumulation from a 1 x 1 node. Throws std::invalid_argument
  // if the loss does not belong to this tape or is not a scalar.
  void backward(Var loss);

  // Helpers for backward callbacks.
  const Matrix& adjoint(std::size_t node) const { return nodes_[node].grad; }
  const Matrix& value_at(std::size_t node) const { return nodes_[node].value; }
  const std::vector<std::size_t>& inputs_of(std::size_t node) const { return nodes_[node].inputs; }
  bool input_requires_grad(std::size_t node, std::size_t which) const {
    return nodes_[nodes_[node].inputs[which]].requires_grad;
  }
  // Zero-initialized on first access.
  Matrix& grad_of(std::size_t node);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Matrix* sink = nullptr;
    bool requires_grad = false;
  };

  std::size_t check(Var v) const;
  Var push(Matrix value, std::vector<std::size_t> inputs, BackwardFn backward);

  std::vector<Node> nodes_;
};

}  // namespace revkl
