#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "revkl/corpus/corpus.hpp"
#include "revkl/nncore/model.hpp"
#include "revkl/propcheck/propcheck.hpp"
#include "revkl/rng.hpp"

using namespace revkl;

TEST_CASE("combined loss and its derivative at hand-evaluated points") {
  CHECK(combined_loss(0.45, 0.5) == doctest::Approx(0.7036832321257279).epsilon(1e-13));
  CHECK(combined_loss_dq(0.45, 0.5) == doctest::Approx(-0.4329432535378748).epsilon(1e-13));
  const PropPoint below{0.5, 0.05, Side::kBelow};
  CHECK(below.q() == doctest::Approx(0.45));
  CHECK(predicted_dq(below) == doctest::Approx(-0.43).epsilon(1e-13));
  CHECK(taylor_residual(below) == doctest::Approx(-0.0029432535378748).epsilon(1e-9));
  CHECK(taylor_residual({0.3, 0.0, Side::kAbove}) == 0.0);
  CHECK(step_scale_ratio({0.5, 0.005, Side::kBelow}) == doctest::Approx(0.01994983).epsilon(1e-6));
  CHECK(step_scale_ratio({0.5, 0.0, Side::kBelow}) == 0.0);
}

TEST_CASE("the derivative vanishes only at q = p_hat") {
  Rng rng(17);
  for (int i = 0; i < 10000; ++i) {
    const double p = rng.uniform(1e-6, 1.0 - 1e-6);
    CHECK(std::abs(combined_loss_dq(p, p)) < 1e-12);
    const double lo = p * rng.uniform(0.01, 0.99);
    CHECK(combined_loss_dq(lo, p) < 0.0);
  }
}

TEST_CASE("residual shrinks cubically on both sides") {
  for (double p : {0.01, 0.1, 0.5, 0.9}) {
    for (Side side : {Side::kBelow, Side::kAbove}) {
      for (double rel : {1e-1, 1e-2, 1e-3}) {
        if (side == Side::kAbove && p * (1.0 + rel) >= 1.0) continue;
        const double big = std::abs(taylor_residual({p, rel * p, side}));
        const double small = std::abs(taylor_residual({p, 0.5 * rel * p, side}));
        CAPTURE(p);
        CAPTURE(rel);
        const double factor = big / small;
        CHECK(factor >= 6.0);
        CHECK(factor <= 10.0);
      }
    }
  }
}

TEST_CASE("points outside the unit interval are rejected") {
  CHECK_THROWS_AS(validate(PropPoint{0.5, 0.6, Side::kBelow}), std::invalid_argument);
  CHECK_THROWS_AS(validate(PropPoint{0.9, 0.2, Side::kAbove}), std::invalid_argument);
  CHECK_THROWS_AS(validate(PropPoint{0.5, -0.1, Side::kBelow}), std::invalid_argument);
  CHECK_THROWS_AS(combined_loss(0.0, 0.5), std::invalid_argument);
  CHECK_NOTHROW(validate(PropPoint{0.5, 0.1, Side::kAbove}));
}

TEST_CASE("gradient direction follows the sign of q - p_hat on a network") {
  Rng rng(2);
  const ModelShape shape{20, 8, 8, 1};
  const auto theta = ModelParams::initialized(shape, rng, {0.5, 1.0, false});
  std::vector<Sentence> sentences(2);
  for (auto& s : sentences) {
    s[0] = kStartToken;
    for (int t = 1; t < kSentenceTokens; ++t) s[t] = 1 + static_cast<int>(rng.below(20));
  }
  // Logit +log 2 halves p_hat against q0 = theta; -log 2 doubles it.
  for (double z : {std::log(2.0), -std::log(2.0)}) {
    const std::vector<double> logits(20, z);
    const SignCheckResult r = direction_sign_check(theta, theta, nullptr, sentences, logits);
    CHECK(r.checked == 20u);
    CHECK(r.pass());
    for (const auto& pos : r.positions) CHECK((pos.q > pos.p_hat) == (z > 0.0));
  }
  const auto disc = ModelParams::initialized(shape, rng, {0.5, 1.0, false});
  const SignCheckResult trained = direction_sign_check(theta, theta, &disc, sentences);
  CHECK(trained.checked > 0u);
  CHECK(trained.pass());
}

TEST_CASE("full property run passes") {
  const PropcheckOutput out = run_propcheck(1);
  CHECK(out.pass);
  CHECK(out.summary.at("pass").get<bool>());
  CHECK(out.sweep_csv.rfind("p_hat,eps,side,exact,predicted,residual,ratio\n", 0) == 0);
}
