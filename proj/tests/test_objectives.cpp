#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "revkl/nncore/model.hpp"
#include "revkl/objectives/heads.hpp"
#include "revkl/objectives/objectives.hpp"
#include "revkl/rng.hpp"

using namespace revkl;

namespace {

ProbRow row(std::vector<double> v, RowSource source = RowSource::kModel) { return {std::move(v), source, -1}; }

constexpr double kTight = 1e-9;

}  // namespace

TEST_CASE("cross-entropy of a sampled word") {
  const ProbRow uniform = row(std::vector<double>(1000, 1e-3));
  CHECK(ce_loss(uniform, 17).total == doctest::Approx(std::log(1000.0)).epsilon(kTight));
  const ProbRow certain = row({0.0, 1.0});
  CHECK(std::abs(ce_loss(certain, 2).total) < 1e-11);
  CHECK(std::isfinite(ce_loss(certain, 1).total));
  CHECK_THROWS_AS(ce_loss(certain, 3), std::invalid_argument);
  CHECK_THROWS_AS(ce_loss(certain, 0), std::invalid_argument);
}

TEST_CASE("forward and reverse divergences") {
  const ProbRow p = row({0.9, 0.1});
  const ProbRow q = row({0.5, 0.5});
  CHECK(kl_div(p, q) == doctest::Approx(0.3680642071684971).epsilon(kTight));
  CHECK(reverse_kl_exact(q, p) == doctest::Approx(0.5108256237659907).epsilon(kTight));
  CHECK(std::abs(kl_div(p, p)) < 1e-12);
  CHECK(std::abs(reverse_kl_exact(p, p)) < 1e-12);
  const ProbRow sparse = row({1.0, 0.0});
  CHECK(kl_div(sparse, q) == doctest::Approx(std::log(2.0)).epsilon(kTight));
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(6);
    std::vector<double> b(6);
    double sa = 0.0;
    double sb = 0.0;
    for (int i = 0; i < 6; ++i) {
      a[i] = rng.uniform();
      b[i] = rng.uniform();
      sa += a[i];
      sb += b[i];
    }
    for (int i = 0; i < 6; ++i) {
      a[i] /= sa;
      b[i] /= sb;
    }
    CHECK(kl_div(row(a), row(b)) >= 0.0);
    CHECK(reverse_kl_exact(row(a), row(b)) >= 0.0);
  }
}

TEST_CASE("discriminator loss") {
  const ProbRow q0 = row({0.25, 0.25, 0.5});
  const ProbRow half = row({0.5, 0.5, 0.5}, RowSource::kDiscriminator);
  const LossValue at_half = disc_loss(q0, half, 2);
  CHECK(at_half.total == doctest::Approx(1.3862943611198906).epsilon(kTight));
  CHECK(at_half.first + at_half.second == doctest::Approx(at_half.total));

  const LossValue small = disc_loss(row({0.5, 0.5}), row({0.2, 0.8}, RowSource::kDiscriminator), 1);
  CHECK(small.total == doctest::Approx(1.1394342831883648).epsilon(kTight));
  CHECK(small.first == doctest::Approx(-0.5 * std::log(0.2) - 0.5 * std::log(0.8)).epsilon(kTight));
  CHECK(small.second == doctest::Approx(-std::log(0.8)).epsilon(kTight));

  // Pushing r(w*) towards 1 raises the loss until the clamp bounds it.
  double previous = 0.0;
  for (double r : {0.5, 0.9, 0.99, 0.9999}) {
    const double loss = disc_loss(row({0.5, 0.5}), row({r, 0.5}, RowSource::kDiscriminator), 1).total;
    CHECK(loss > previous);
    previous = loss;
  }
  const double clamped = disc_loss(row({0.5, 0.5}), row({1.0, 0.5}, RowSource::kDiscriminator), 1).total;
  CHECK(std::isfinite(clamped));
  CHECK(clamped == doctest::Approx(-0.5 * std::log(1.0 - kRatioClamp) - 0.5 * std::log(0.5) - std::log(kRatioClamp)));
}

TEST_CASE("density-ratio estimate") {
  const ProbRow q0 = row({0.3, 0.7});
  const ProbRow p = row({0.6, 0.4});
  const ProbRow r = optimal_ratio(q0, p);
  CHECK(r.at(1) == doctest::Approx(1.0 / 3.0));
  const ProbRow est = p_hat(q0, r);
  CHECK(est.at(1) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(est.at(2) == doctest::Approx(0.4).epsilon(1e-14));
  const ProbRow same = p_hat(q0, row({0.5, 0.5}, RowSource::kDiscriminator));
  CHECK(same.values == q0.values);
  CHECK(est.source == RowSource::kEstimated);
}

TEST_CASE("fine-tuning loss") {
  const ProbRow theta = row({0.4, 0.6});
  const ProbRow q0 = row({0.5, 0.5}, RowSource::kFrozen);
  const ProbRow half = row({0.5, 0.5}, RowSource::kDiscriminator);
  CHECK(ratio_t(0.4, 0.5, 0.5) == doctest::Approx(0.8));
  const LossValue l = finetune_loss(theta, q0, half, 1);
  CHECK(l.total == doctest::Approx(0.7377758908227873).epsilon(kTight));
  CHECK(l.first == doctest::Approx(-std::log(0.4)).epsilon(kTight));
  CHECK(l.second == doctest::Approx(0.8 * std::log(0.8)).epsilon(kTight));

  const LossValue at_start = finetune_loss(q0, q0, half, 2);
  CHECK(at_start.second == 0.0);
  CHECK(at_start.total == doctest::Approx(std::log(2.0)).epsilon(kTight));
  CHECK(x_log_x(0.0) == 0.0);
}

TEST_CASE("fine-tuning loss with the oracle ratio estimates CE plus reverse KL") {
  // Ten-word rows, w* ~ p, r from the exact density ratio.
  Rng rng(12);
  std::vector<double> p(10);
  std::vector<double> q0(10);
  std::vector<double> q(10);
  double sp = 0.0;
  double s0 = 0.0;
  double sq = 0.0;
  for (int i = 0; i < 10; ++i) {
    p[i] = 0.2 + rng.uniform();
    q0[i] = 0.2 + rng.uniform();
    q[i] = 0.2 + rng.uniform();
    sp += p[i];
    s0 += q0[i];
    sq += q[i];
  }
  for (int i = 0; i < 10; ++i) {
    p[i] /= sp;
    q0[i] /= s0;
    q[i] /= sq;
  }
  const ProbRow prow = row(p, RowSource::kTrue);
  const ProbRow q0row = row(q0, RowSource::kFrozen);
  const ProbRow qrow = row(q);
  const ProbRow r = optimal_ratio(q0row, prow);
  double exact = reverse_kl_exact(qrow, prow);
  for (int i = 0; i < 10; ++i) exact -= p[i] * std::log(q[i]);

  const int draws = 200000;
  double mean = 0.0;
  double m2 = 0.0;
  for (int n = 1; n <= draws; ++n) {
    double u = rng.uniform();
    int w = 0;
    while (w < 9 && u >= p[w]) u -= p[w++];
    const double x = finetune_loss(qrow, q0row, r, w + 1).total;
    const double delta = x - mean;
    mean += delta / n;
    m2 += delta * (x - mean);
  }
  const double stderr_mean = std::sqrt(m2 / (draws - 1) / draws);
  CHECK(std::abs(mean - exact) < 3.0 * stderr_mean);
}

TEST_CASE("ratio clamp as a logit bound") {
  CHECK(stable_sigmoid(ratio_logit_limit()) == doctest::Approx(1.0 - kRatioClamp).epsilon(1e-12));
  CHECK(clamp_logit(100.0) == ratio_logit_limit());
  CHECK(clamp_logit(-100.0) == -ratio_logit_limit());
  CHECK(clamp_logit(0.3) == 0.3);
  CHECK(clamp_ratio(0.0) == kRatioClamp);
  CHECK(clamp_ratio(1.0) == 1.0 - kRatioClamp);
}

TEST_CASE("batched heads agree with the per-row losses") {
  Rng rng(6);
  const int n = 4;
  const int v = 5;
  Matrix logits(n, v);
  Matrix zlogits(n, v);
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    logits.data()[i] = rng.uniform(-2.0, 2.0);
    zlogits.data()[i] = rng.uniform(-2.0, 2.0);
  }
  const std::vector<int> targets{0, 4, 2, 2};
  const Matrix q = softmax_rows(logits);
  const Matrix q0 = softmax_rows(zlogits);

  Tape t1;
  const HeadResult ce = ce_head(t1, t1.constant(logits), targets);
  Tape t2;
  const HeadResult disc = disc_head(t2, t2.constant(zlogits), q0, targets);
  std::vector<double> q0_log(n);
  std::vector<double> r_logit(n);
  for (int i = 0; i < n; ++i) {
    q0_log[i] = floored_log(q0(i, targets[i]));
    r_logit[i] = zlogits(i, targets[i]);
  }
  Tape t3;
  const HeadResult ft = finetune_head(t3, t3.constant(logits), q0_log, r_logit, targets);

  double ce_sum = 0.0;
  double disc_sum = 0.0;
  double ft_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    ProbRow qi = row(std::vector<double>(q.row(i).data(), q.row(i).data() + v));
    ProbRow q0i = row(std::vector<double>(q0.row(i).data(), q0.row(i).data() + v), RowSource::kFrozen);
    std::vector<double> rv(v);
    for (int w = 0; w < v; ++w) rv[w] = stable_sigmoid(zlogits(i, w));
    const ProbRow ri = row(rv, RowSource::kDiscriminator);
    ce_sum += ce_loss(qi, targets[i] + 1).total;
    disc_sum += disc_loss(q0i, ri, targets[i] + 1).total;
    ft_sum += finetune_loss(qi, q0i, ri, targets[i] + 1).total;
  }
  CHECK(ce.mean.total == doctest::Approx(ce_sum / n).epsilon(1e-12));
  CHECK(t1.scalar(ce.loss) == doctest::Approx(ce_sum / n).epsilon(1e-12));
  CHECK(disc.mean.total == doctest::Approx(disc_sum / n).epsilon(1e-12));
  CHECK(ft.mean.total == doctest::Approx(ft_sum / n).epsilon(1e-12));

  const auto lp = target_log_probs(logits, targets);
  for (int i = 0; i < n; ++i) CHECK(lp[i] == doctest::Approx(floored_log(q(i, targets[i]))).epsilon(1e-12));
}
