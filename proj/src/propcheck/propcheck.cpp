#include "revkl/propcheck/propcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "revkl/nncore/tape.hpp"
#include "revkl/objectives/heads.hpp"
#include "revkl/objectives/objectives.hpp"
#include "revkl/rng.hpp"

namespace revkl {

std::string_view side_name(Side side) { return side == Side::kBelow ? "below" : "above"; }

namespace {

void check_unit(double x, const char* name) {
  if (!(x > 0.0 && x < 1.0)) throw std::invalid_argument(std::string(name) + " must lie in (0, 1)");
}

}  // namespace

void validate(const PropPoint& point) {
  check_unit(point.p_hat, "p_hat");
  if (!(point.eps >= 0.0)) throw std::invalid_argument("eps must be non-negative");
  check_unit(point.q(), "q");
}

double combined_loss(double q, double p_hat) {
  check_unit(q, "q");
  check_unit(p_hat, "p_hat");
  const double ratio = q / p_hat;
  return -std::log(q) + ratio * std::log(ratio);
}

double combined_loss_dq(double q, double p_hat) {
  check_unit(q, "q");
  check_unit(p_hat, "p_hat");
  // log1p keeps log(q / p_hat) accurate when q is close to p_hat.
  return -1.0 / q + (1.0 + std::log1p((q - p_hat) / p_hat)) / p_hat;
}

double predicted_dq(const PropPoint& point) {
  const double p = point.p_hat;
  const double e = point.eps;
  const double lead = 2.0 * e / (p * p);
  const double quad = -1.5 * e * e / (p * p * p);
  return (point.side == Side::kBelow ? -lead : lead) + quad;
}

double taylor_residual(const PropPoint& point) {
  validate(point);
  return combined_loss_dq(point.q(), point.p_hat) - predicted_dq(point);
}

double step_scale_ratio(const PropPoint& point) {
  validate(point);
  return std::abs(combined_loss_dq(point.q(), point.p_hat)) * point.q();
}

namespace {

double dot(const ParamSet& a, const ParamSet& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.count(); ++i) sum += (a.tensor(i).array() * b.tensor(i).array()).sum();
  return sum;
}

// q(target) of a 1 x V logit row as a differentiable scalar.
Var target_probability(Tape& tape, Var row, int target) {
  const Matrix& z = tape.value(row);
  const Matrix probs = softmax_rows(z);
  Matrix value(1, 1);
  value(0, 0) = probs(0, target);
  return tape.custom({row}, std::move(value), [probs, target](Tape& t, std::size_t self) {
    const std::size_t in = t.inputs_of(self)[0];
    Matrix& g = t.grad_of(in);
    const double up = t.adjoint(self)(0, 0);
    const double q = probs(0, target);
    // dq/dz = q (onehot - softmax)
    g.row(0).array() -= up * q * probs.row(0).array();
    g(0, target) += up * q;
  });
}

double probability_at(const ModelParams& params, const Sentence& sentence, int position) {
  const Matrix logits = lm_forward(params, std::span<const Sentence>(&sentence, 1));
  const Matrix probs = softmax_rows(logits.row(position - 1));
  return probs(0, sentence[position] - 1);
}

}  // namespace

SignCheckResult direction_sign_check(const ModelParams& theta, const ModelParams& q0, const ModelParams* disc,
                                     std::span<const Sentence> sentences, std::span<const double> r_logits,
                                     double step, double dead_zone) {
  if (!r_logits.empty() && r_logits.size() != sentences.size() * kSentenceWords) {
    throw std::invalid_argument("direction_sign_check: one ratio logit per position is required");
  }
  if (r_logits.empty() && disc == nullptr) {
    throw std::invalid_argument("direction_sign_check: a discriminator or ratio logits are required");
  }
  SignCheckResult result;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    const std::span<const Sentence> one(&sentences[s], 1);
    const Matrix q0_logits = lm_forward(q0, one);
    Matrix disc_logits;
    if (r_logits.empty()) disc_logits = lm_forward(*disc, one);
    for (int t = 1; t < kSentenceTokens; ++t) {
      const int target = sentences[s][t] - 1;
      const std::vector<int> targets{target};
      const double q0_log = target_log_probs(q0_logits.row(t - 1), targets)[0];
      const double z = r_logits.empty() ? disc_logits(t - 1, target) : r_logits[s * kSentenceWords + (t - 1)];

      ParamSet grad_q = theta.params().zeros_like();
      double q = 0.0;
      {
        Tape tape;
        const Var logits = forward_logits(tape, theta, &grad_q, one);
        const Var qv = target_probability(tape, tape.slice_rows(logits, t - 1, 1), target);
        q = tape.scalar(qv);
        tape.backward(qv);
      }
      ParamSet grad_loss = theta.params().zeros_like();
      {
        Tape tape;
        const Var logits = forward_logits(tape, theta, &grad_loss, one);
        const std::vector<double> q0v{q0_log}, zv{z};
        const HeadResult head = finetune_head(tape, tape.slice_rows(logits, t - 1, 1), q0v, zv, targets);
        tape.backward(head.loss);
      }

      SignCheckPosition pos;
      pos.sentence = s;
      pos.position = t;
      pos.q = q;
      // Stationary point of the floored loss: q + floor = (q0 + floor) * (1 - r) / r.
      pos.p_hat = std::exp(q0_log - clamp_logit(z)) - kProbFloor;
      pos.directional = dot(grad_loss, grad_q);
      ModelParams stepped = theta;
      stepped.params().add_scaled(grad_loss, -step);
      pos.q_after_step = probability_at(stepped, sentences[s], t);
      pos.dead_zone = std::abs(q - pos.p_hat) < dead_zone;
      const bool below = q < pos.p_hat;
      pos.agrees = below ? (pos.directional < 0.0 && pos.q_after_step > q)
                         : (pos.directional > 0.0 && pos.q_after_step < q);
      if (!pos.dead_zone) {
        ++result.checked;
        if (pos.agrees) ++result.agreed;
      }
      result.positions.push_back(pos);
    }
  }
  return result;
}

namespace {

constexpr double kPHats[] = {0.01, 0.1, 0.5, 0.9};

std::vector<double> halving_offsets() {
  std::vector<double> out;
  for (double x = 0.1; x >= 1e-4; x /= 2.0) out.push_back(x);
  return out;
}

nlohmann::json check(bool pass, nlohmann::json detail) {
  detail["pass"] = pass;
  return detail;
}

}  // namespace

PropcheckOutput run_propcheck(std::uint64_t seed) {
  PropcheckOutput out;
  nlohmann::json& s = out.summary;
  Rng rng(derive_seed(seed, 7));

  // Stationarity at q = p_hat.
  {
    double worst = 0.0;
    for (int i = 0; i < 10'000; ++i) {
      const double p = rng.uniform(1e-6, 1.0 - 1e-6);
      worst = std::max(worst, std::abs(combined_loss_dq(p, p)));
    }
    s["stationarity"] = check(worst < 1e-12, {{"samples", 10'000}, {"max_abs_dq", worst}});
  }

  // q = p_hat is the grid minimum, and the loss is convex on the grid.
  {
    bool ok = true;
    nlohmann::json rows = nlohmann::json::array();
    constexpr int kGrid = 10'000;
    for (double p : kPHats) {
      double best = std::numeric_limits<double>::infinity();
      double best_q = 0.0;
      bool convex = true;
      double prev2 = combined_loss(1.0 / kGrid, p);
      double prev1 = combined_loss(2.0 / kGrid, p);
      if (prev2 < best) best = prev2, best_q = 1.0 / kGrid;
      if (prev1 < best) best = prev1, best_q = 2.0 / kGrid;
      for (int g = 3; g < kGrid; ++g) {
        const double q = static_cast<double>(g) / kGrid;
        const double cur = combined_loss(q, p);
        if (cur < best) best = cur, best_q = q;
        if (!(cur - 2.0 * prev1 + prev2 > 0.0)) convex = false;
        prev2 = prev1;
        prev1 = cur;
      }
      const bool at_p = std::abs(best_q - p) <= 1.0 / kGrid;
      ok = ok && at_p && convex;
      rows.push_back({{"p_hat", p}, {"argmin_q", best_q}, {"convex", convex}});
    }
    s["unique_minimum"] = check(ok, {{"grid", kGrid}, {"cases", rows}});
  }

  // Analytic derivative against central differences.
  {
    const double h = 1e-6;
    const std::pair<double, double> points[] = {{0.45, 0.5}, {0.25, 0.5}, {0.9, 0.5}, {0.05, 0.1},
                                                {0.2, 0.1},  {0.5, 0.9},  {0.95, 0.9}};
    double worst = 0.0;
    for (const auto& [q, p] : points) {
      const double fd = (combined_loss(q + h, p) - combined_loss(q - h, p)) / (2.0 * h);
      const double exact = combined_loss_dq(q, p);
      worst = std::max(worst, std::abs(fd - exact) / std::abs(exact));
    }
    s["derivative"] = check(worst < 1e-8, {{"h", h}, {"max_relative_error", worst}});
  }

  // Taylor sweep.
  {
    std::ostringstream csv;
    csv.precision(17);
    csv << "p_hat,eps,side,exact,predicted,residual,ratio\n";
    const auto offsets = halving_offsets();
    double min_factor = std::numeric_limits<double>::infinity();
    double max_factor = 0.0;
    double min_sym = std::numeric_limits<double>::infinity();
    double max_sym = 0.0;
    for (double p : kPHats) {
      double prev_res[2] = {0.0, 0.0};
      double prev_sym = 0.0;
      for (std::size_t k = 0; k < offsets.size(); ++k) {
        const double eps = offsets[k] * p;
        double res[2];
        for (Side side : {Side::kBelow, Side::kAbove}) {
          const PropPoint pt{p, eps, side};
          const double exact = combined_loss_dq(pt.q(), p);
          const double predicted = predicted_dq(pt);
          const int i = side == Side::kBelow ? 0 : 1;
          res[i] = exact - predicted;
          csv << p << ',' << eps << ',' << side_name(side) << ',' << exact << ',' << predicted << ',' << res[i] << ','
              << step_scale_ratio(pt) << '\n';
          if (k > 0) {
            const double f = std::abs(prev_res[i]) / std::abs(res[i]);
            min_factor = std::min(min_factor, f);
            max_factor = std::max(max_factor, f);
          }
          prev_res[i] = res[i];
        }
        const double sym = std::abs(res[0] - res[1]);
        if (k > 0) {
          const double f = prev_sym / sym;
          min_sym = std::min(min_sym, f);
          max_sym = std::max(max_sym, f);
        }
        prev_sym = sym;
      }
    }
    out.sweep_csv = csv.str();
    s["residual_shrink"] = check(min_factor >= 6.0 && max_factor <= 10.0,
                                 {{"min_factor", min_factor}, {"max_factor", max_factor}, {"bounds", {6.0, 10.0}}});
    s["symmetry"] = check(min_sym >= 6.0 && max_sym <= 10.0, {{"min_factor", min_sym}, {"max_factor", max_sym}});
    const double example = taylor_residual({0.5, 0.05, Side::kBelow});
    s["residual_example"] = check(std::abs(example - (-0.0029432535378748)) < 1e-12,
                                  {{"p_hat", 0.5}, {"eps", 0.05}, {"residual", example}});
    s["residual_zero"] = check(taylor_residual({0.5, 0.0, Side::kBelow}) == 0.0, nlohmann::json::object());
  }

  // Step scale.
  {
    const double ratio = step_scale_ratio({0.5, 0.005, Side::kBelow});
    bool linear = true;
    double worst = 0.0;
    for (double p : kPHats) {
      for (Side side : {Side::kBelow, Side::kAbove}) {
        for (double x = 1e-4; x <= 0.005 + 1e-15; x *= 2.0) {
          const double r1 = step_scale_ratio({p, x * p, side});
          const double r2 = step_scale_ratio({p, 2.0 * x * p, side});
          const double dev = std::abs(r2 / r1 - 2.0) / 2.0;
          worst = std::max(worst, dev);
          if (dev > 0.05) linear = false;
        }
      }
    }
    const bool zero = step_scale_ratio({0.5, 0.0, Side::kBelow}) == 0.0;
    s["step_scale"] = check(std::abs(ratio / 0.02 - 1.0) < 0.05 && linear && zero,
                            {{"ratio_at_0.5_0.005", ratio}, {"max_doubling_deviation", worst}, {"zero_at_eps_0", zero}});
  }

  // Direction of a fine-tuning step on a small random model.
  {
    const ModelShape shape{20, 8, 8, 2};
    Rng init_rng(derive_seed(seed, 8));
    const ModelParams theta = ModelParams::initialized(shape, init_rng, {0.5, 1.0, false});
    const ModelParams q0 = ModelParams::initialized(shape, init_rng, {0.5, 1.0, false});
    const ModelParams disc = ModelParams::initialized(shape, init_rng, {0.5, 1.0, false});
    std::vector<Sentence> sentences(8);
    for (auto& sentence : sentences) {
      sentence[0] = kStartToken;
      for (int t = 1; t < kSentenceTokens; ++t) sentence[t] = 1 + static_cast<WordId>(init_rng.below(shape.vocab_size));
    }
    const SignCheckResult random = direction_sign_check(theta, q0, &disc, sentences);

    // Constructed positions with q0 = theta: a logit of -log 2 puts p_hat at
    // 2q, a logit of +log 2 at q / 2.
    const std::span<const Sentence> first(sentences.data(), 1);
    const std::vector<double> up(kSentenceWords, -std::log(2.0));
    const std::vector<double> down(kSentenceWords, std::log(2.0));
    const SignCheckResult below = direction_sign_check(theta, theta, nullptr, first, up);
    const SignCheckResult above = direction_sign_check(theta, theta, nullptr, first, down);
    bool constructed = below.pass() && above.pass() && below.checked == kSentenceWords &&
                       above.checked == kSentenceWords;
    for (const auto& p : below.positions) constructed = constructed && p.directional < 0.0;
    for (const auto& p : above.positions) constructed = constructed && p.directional > 0.0;
    s["direction_sign"] = check(random.pass() && random.checked > 0 && constructed,
                                {{"random_checked", random.checked},
                                 {"random_agreed", random.agreed},
                                 {"constructed_below", below.agreed},
                                 {"constructed_above", above.agreed}});
  }

  bool all = true;
  for (const auto& [name, value] : s.items()) all = all && value.at("pass").get<bool>();
  s["pass"] = all;
  out.pass = all;
  return out;
}

}  // namespace revkl
