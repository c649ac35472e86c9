#include "revkl/objectives/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace revkl {

double ProbRow::at(WordId w) const {
  if (w < 1 || static_cast<std::size_t>(w) > values.size()) {
    throw std::invalid_argument("word id out of range: " + std::to_string(w));
  }
  return values[w - 1];
}

double floored_log(double p) { return std::log(p + kProbFloor); }

double clamp_ratio(double r) { return std::clamp(r, kRatioClamp, 1.0 - kRatioClamp); }

double x_log_x(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

namespace {

void require_same_size(const ProbRow& a, const ProbRow& b) {
  if (a.size() != b.size()) throw std::invalid_argument("probability rows differ in length");
}

}  // namespace

LossValue ce_loss(const ProbRow& q, WordId true_word) {
  const double ce = -floored_log(q.at(true_word));
  return {ce, ce, 0.0};
}

double kl_div(const ProbRow& p, const ProbRow& q) {
  require_same_size(p, q);
  double sum = 0.0;
  for (std::size_t w = 0; w < p.size(); ++w) {
    if (p.values[w] > 0.0) sum += p.values[w] * (std::log(p.values[w]) - std::log(q.values[w]));
  }
  return sum;
}

double reverse_kl_exact(const ProbRow& q, const ProbRow& p) { return kl_div(q, p); }

LossValue disc_loss(const ProbRow& q0, const ProbRow& r, WordId true_word) {
  require_same_size(q0, r);
  double model_term = 0.0;
  for (std::size_t w = 0; w < q0.size(); ++w) model_term -= q0.values[w] * std::log(clamp_ratio(r.values[w]));
  const double data_term = -std::log(1.0 - clamp_ratio(r.at(true_word)));
  return {model_term + data_term, model_term, data_term};
}

ProbRow p_hat(const ProbRow& q0, const ProbRow& r) {
  require_same_size(q0, r);
  ProbRow out{std::vector<double>(q0.size()), RowSource::kEstimated, q0.context_id};
  for (std::size_t w = 0; w < q0.size(); ++w) {
    const double rc = clamp_ratio(r.values[w]);
    out.values[w] = q0.values[w] * (1.0 - rc) / rc;
  }
  return out;
}

ProbRow optimal_ratio(const ProbRow& q0, const ProbRow& p) {
  require_same_size(q0, p);
  ProbRow out{std::vector<double>(q0.size()), RowSource::kDiscriminator, q0.context_id};
  for (std::size_t w = 0; w < q0.size(); ++w) out.values[w] = q0.values[w] / (q0.values[w] + p.values[w]);
  return out;
}

double ratio_t(double q_theta, double q0, double r) {
  const double rc = clamp_ratio(r);
  return std::exp(floored_log(q_theta) - floored_log(q0) + std::log(rc) - std::log1p(-rc));
}

LossValue finetune_loss(const ProbRow& q_theta, const ProbRow& q0, const ProbRow& r, WordId true_word) {
  require_same_size(q_theta, q0);
  require_same_size(q_theta, r);
  const double ce = -floored_log(q_theta.at(true_word));
  const double t = ratio_t(q_theta.at(true_word), q0.at(true_word), r.at(true_word));
  const double rev = x_log_x(t);
  return {ce + rev, ce, rev};
}

}  // namespace revkl
