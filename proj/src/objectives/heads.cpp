#include "revkl/objectives/heads.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "revkl/nncore/model.hpp"

namespace revkl {

namespace {

const double kLogFloor = std::log(kProbFloor);

// log(exp(a) + exp(b))
double log_add_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

void check_targets(const Matrix& logits, std::span<const int> targets) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw std::invalid_argument("head: target count does not match logit rows");
  }
  for (int t : targets) {
    if (t < 0 || t >= logits.cols()) throw std::invalid_argument("head: target word out of range");
  }
}

// For each row: floored log q(target), and the factor d(floored)/d(log q).
struct FlooredTarget {
  double log_q;
  double slope;
};

FlooredTarget floored_target(const Eigen::Ref<const RowVector>& row, int target, double lse) {
  const double raw = row(target) - lse;
  const double floored = log_add_exp(raw, kLogFloor);
  return {floored, std::exp(raw - floored)};
}

}  // namespace

double ratio_logit_limit() { return std::log((1.0 - kRatioClamp) / kRatioClamp); }

double clamp_logit(double z) {
  const double limit = ratio_logit_limit();
  return std::clamp(z, -limit, limit);
}

std::vector<double> target_log_probs(const Matrix& logits, std::span<const int> targets) {
  check_targets(logits, targets);
  std::vector<double> out(targets.size());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    out[r] = floored_target(logits.row(r), targets[r], log_sum_exp(logits.row(r))).log_q;
  }
  return out;
}

HeadResult ce_head(Tape& tape, Var logits, std::span<const int> targets) {
  const Matrix& z = tape.value(logits);
  check_targets(z, targets);
  const Eigen::Index n = z.rows();
  std::vector<double> lse(n), slope(n);
  double total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    lse[r] = log_sum_exp(z.row(r));
    const auto ft = floored_target(z.row(r), targets[r], lse[r]);
    slope[r] = ft.slope;
    total -= ft.log_q;
  }
  const double mean = total / static_cast<double>(n);
  Matrix value(1, 1);
  value(0, 0) = mean;
  std::vector<int> tg(targets.begin(), targets.end());
  Var loss = tape.custom({logits}, std::move(value),
                         [lse = std::move(lse), slope = std::move(slope), tg = std::move(tg)](Tape& t, std::size_t self) {
                           const std::size_t in = t.inputs_of(self)[0];
                           const Matrix& z = t.value_at(in);
                           Matrix& g = t.grad_of(in);
                           const double up = t.adjoint(self)(0, 0) / static_cast<double>(z.rows());
                           for (Eigen::Index r = 0; r < z.rows(); ++r) {
                             const double c = up * slope[r];
                             g.row(r).array() += c * (z.row(r).array() - lse[r]).exp();
                             g(r, tg[r]) -= c;
                           }
                         });
  return {loss, {mean, mean, 0.0}};
}

HeadResult disc_head(Tape& tape, Var logits, const Matrix& q0, std::span<const int> targets) {
  const Matrix& z = tape.value(logits);
  check_targets(z, targets);
  if (q0.rows() != z.rows() || q0.cols() != z.cols()) throw std::invalid_argument("disc_head: q0 shape mismatch");
  const double limit = ratio_logit_limit();
  const Eigen::Index n = z.rows();
  double model_total = 0.0, data_total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    double row_sum = 0.0;
    for (Eigen::Index w = 0; w < z.cols(); ++w) row_sum -= q0(r, w) * log_sigmoid(std::clamp(z(r, w), -limit, limit));
    model_total += row_sum;
    data_total -= log_sigmoid(-std::clamp(z(r, targets[r]), -limit, limit));
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const LossValue mean{(model_total + data_total) * inv_n, model_total * inv_n, data_total * inv_n};
  Matrix value(1, 1);
  value(0, 0) = mean.total;
  std::vector<int> tg(targets.begin(), targets.end());
  Var loss = tape.custom({logits}, std::move(value), [q0, tg = std::move(tg), limit](Tape& t, std::size_t self) {
    const std::size_t in = t.inputs_of(self)[0];
    const Matrix& z = t.value_at(in);
    Matrix& g = t.grad_of(in);
    const double up = t.adjoint(self)(0, 0) / static_cast<double>(z.rows());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      for (Eigen::Index w = 0; w < z.cols(); ++w) {
        const double zw = z(r, w);
        if (zw <= -limit || zw >= limit) continue;  // clamped: flat
        double d = -q0(r, w) * (1.0 - stable_sigmoid(zw));
        if (w == tg[r]) d += stable_sigmoid(zw);
        g(r, w) += up * d;
      }
    }
  });
  return {loss, mean};
}

HeadResult finetune_head(Tape& tape, Var logits, std::span<const double> q0_log_target,
                         std::span<const double> r_logit_target, std::span<const int> targets) {
  const Matrix& z = tape.value(logits);
  check_targets(z, targets);
  const Eigen::Index n = z.rows();
  if (q0_log_target.size() != targets.size() || r_logit_target.size() != targets.size()) {
    throw std::invalid_argument("finetune_head: constant inputs do not match targets");
  }
  std::vector<double> lse(n), coef(n);
  double ce_total = 0.0, rev_total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    lse[r] = log_sum_exp(z.row(r));
    const auto ft = floored_target(z.row(r), targets[r], lse[r]);
    const double log_t = ft.log_q - q0_log_target[r] + clamp_logit(r_logit_target[r]);
    const double t = std::exp(log_t);
    ce_total -= ft.log_q;
    rev_total += t * log_t;
    // d/d(log q) of (-log q + t log t) is -1 + t (log t + 1).
    coef[r] = (-1.0 + t * (log_t + 1.0)) * ft.slope;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const LossValue mean{(ce_total + rev_total) * inv_n, ce_total * inv_n, rev_total * inv_n};
  Matrix value(1, 1);
  value(0, 0) = mean.total;
  std::vector<int> tg(targets.begin(), targets.end());
  Var loss = tape.custom({logits}, std::move(value),
                         [lse = std::move(lse), coef = std::move(coef), tg = std::move(tg)](Tape& t, std::size_t self) {
                           const std::size_t in = t.inputs_of(self)[0];
                           const Matrix& z = t.value_at(in);
                           Matrix& g = t.grad_of(in);
                           const double up = t.adjoint(self)(0, 0) / static_cast<double>(z.rows());
                           for (Eigen::Index r = 0; r < z.rows(); ++r) {
                             // d log q / dz = onehot - softmax
                             const double c = up * coef[r];
                             g.row(r).array() -= c * (z.row(r).array() - lse[r]).exp();
                             g(r, tg[r]) += c;
                           }
                         });
  return {loss, mean};
}

}  // namespace revkl
