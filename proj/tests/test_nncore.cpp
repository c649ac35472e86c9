#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "revkl/corpus/corpus.hpp"
#include "revkl/nncore/checkpoint.hpp"
#include "revkl/nncore/gradcheck.hpp"
#include "revkl/nncore/model.hpp"
#include "revkl/nncore/sgd.hpp"
#include "revkl/objectives/head_gradcheck.hpp"
#include "revkl/objectives/heads.hpp"

namespace fs = std::filesystem;
using namespace revkl;

namespace {

std::vector<Sentence> random_sentences(Rng& rng, int count, int vocab) {
  std::vector<Sentence> out(count);
  for (auto& s : out) {
    s[0] = kStartToken;
    for (int t = 1; t < kSentenceTokens; ++t) s[t] = 1 + static_cast<int>(rng.below(vocab));
  }
  return out;
}

// A scalar function of two parameter tensors exercising every primitive op.
double primitive_graph(const ParamSet& p, ParamSet* grads) {
  Tape tape;
  const Var a = tape.parameter(p.tensor(0), grads ? &grads->tensor(0) : nullptr);
  const Var b = tape.parameter(p.tensor(1), grads ? &grads->tensor(1) : nullptr);
  const Var bias = tape.parameter(p.tensor(2), grads ? &grads->tensor(2) : nullptr);
  const Var ab = tape.add_row(tape.matmul(a, b), bias);  // 3 x 4
  const Var s = tape.sigmoid(tape.slice_cols(ab, 0, 2));
  const Var t = tape.tanh(tape.slice_cols(ab, 2, 2));
  const Var h = tape.hadamard(s, t);  // 3 x 2
  const std::vector<Var> parts{tape.slice_rows(h, 0, 1), h};
  const Var stacked = tape.concat_rows(parts);  // 4 x 2
  const std::vector<int> pick{3, 0, 3};
  const Var gathered = tape.gather_rows(stacked, pick);
  const Var loss = tape.add(tape.scale(tape.sum_squares(gathered), 0.7), tape.sum(tape.add(h, h)));
  if (grads) tape.backward(loss);
  return tape.scalar(loss);
}

}  // namespace

TEST_CASE("tape primitives backpropagate like finite differences") {
  Rng rng(3);
  ParamSet p;
  p.add("a", 3, 5);
  p.add("b", 5, 4);
  p.add("bias", 1, 4);
  for (std::size_t i = 0; i < p.size(); ++i) p.coeff(i) = rng.uniform(-1.0, 1.0);
  ParamSet analytic = p.zeros_like();
  primitive_graph(p, &analytic);
  const ParamSet numeric = finite_diff_grad([](const ParamSet& q) { return primitive_graph(q, nullptr); }, p, 1e-3);
  const GradComparison cmp = compare_gradients(analytic, numeric);
  CHECK(cmp.coordinates == p.size());
  CHECK(cmp.max_relative_error < 1e-7);
}

TEST_CASE("backward rejects a foreign or non-scalar loss") {
  Tape one;
  Tape two;
  const Var m = one.constant(Matrix::Ones(2, 2));
  const Var s = two.constant(Matrix::Ones(1, 1));
  CHECK_THROWS_AS(one.backward(m), std::invalid_argument);
  CHECK_THROWS_AS(one.backward(s), std::invalid_argument);
}

TEST_CASE("frozen parameters receive no gradient") {
  Tape tape;
  Matrix sink = Matrix::Zero(2, 2);
  const Var w = tape.parameter(Matrix::Ones(2, 2), &sink);
  const Var frozen = tape.parameter(Matrix::Constant(2, 2, 3.0), nullptr);
  CHECK_FALSE(tape.requires_grad(frozen));
  tape.backward(tape.sum(tape.hadamard(w, frozen)));
  CHECK(sink.isApprox(Matrix::Constant(2, 2, 3.0)));
}

TEST_CASE("ParamSet flattening is canonical and reversible") {
  ParamSet p;
  p.add("x", 2, 3);
  p.add("y", 1, 2);
  CHECK(p.size() == 8u);
  std::vector<double> flat(8);
  for (int i = 0; i < 8; ++i) flat[i] = i + 0.5;
  p.assign(flat);
  CHECK(p.flatten() == flat);
  CHECK(p.tensor(0)(1, 0) == 3.5);
  CHECK(p.tensor(1)(0, 1) == 7.5);
  CHECK(p.coeff(6) == 6.5);
  CHECK_THROWS(p.assign(std::vector<double>(7)));
}

TEST_CASE("model initialization is seeded and shaped") {
  const ModelShape shape{30, 6, 5, 2};
  Rng r1(8);
  Rng r2(8);
  Rng r3(9);
  const auto a = ModelParams::initialized(shape, r1);
  const auto b = ModelParams::initialized(shape, r2);
  const auto c = ModelParams::initialized(shape, r3);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.embedding().rows() == 31);
  CHECK(a.w_input(1).rows() == 5);
  CHECK(a.output_weight().cols() == 30);
  CHECK(a.params().size() == ModelParams::parameter_count(shape));
  // Forget gate bias block starts at the configured value.
  CHECK(a.bias(0)(0, 5) == 1.0);

  Rng r4(8);
  const auto zero = ModelParams::initialized(shape, r4, {0.1, 1.0, true});
  CHECK(zero.output_weight().isZero());
  CHECK(zero.output_bias().isZero());
}

TEST_CASE("perturb_bias touches exactly one coordinate") {
  Rng rng(1);
  const auto a = ModelParams::initialized({30, 6, 5, 1}, rng);
  const auto b = perturb_bias(a, 7, -20.0);
  CHECK(b.output_bias()(0, 6) == -20.0);
  const auto fa = a.params().flatten();
  const auto fb = b.params().flatten();
  int differing = 0;
  for (std::size_t i = 0; i < fa.size(); ++i) differing += fa[i] != fb[i];
  CHECK(differing == 1);
  CHECK_THROWS_AS(perturb_bias(a, 31), std::invalid_argument);
}

TEST_CASE("forward logits agree with gradient-free evaluation and are causal") {
  Rng rng(2);
  const auto params = ModelParams::initialized({25, 6, 7, 2}, rng, {0.5, 1.0, false});
  auto batch = random_sentences(rng, 3, 25);
  Tape tape;
  const Var logits = forward_logits(tape, params, nullptr, batch);
  const Matrix free = lm_forward(params, batch);
  CHECK(tape.value(logits).rows() == 30);
  CHECK(tape.value(logits).isApprox(free, 1e-14));
  const auto [sentence, position] = row_position(4, 3);
  CHECK(sentence == 1u);
  CHECK(position == 2);
  // Changing a later token leaves earlier predictions untouched.
  auto changed = batch;
  changed[1][5] = changed[1][5] % 25 + 1;
  const Matrix after = lm_forward(params, changed);
  for (int t = 0; t < 5; ++t) CHECK(after.row(t * 3 + 1) == free.row(t * 3 + 1));
  CHECK(after.row(5 * 3 + 1) != free.row(5 * 3 + 1));
  const Matrix r = disc_forward(params, batch);
  CHECK((r.array() > 0.0).all());
  CHECK((r.array() < 1.0).all());
}

TEST_CASE("row numerics are stable for extreme logits") {
  RowVector row(3);
  row << 1000.0, 1000.0, -1000.0;
  CHECK(log_sum_exp(row) == doctest::Approx(1000.0 + std::log(2.0)));
  Matrix m(1, 3);
  m << 1000.0, 1000.0, -1000.0;
  const Matrix p = softmax_rows(m);
  CHECK(p.sum() == doctest::Approx(1.0));
  CHECK(p(0, 0) == doctest::Approx(0.5));
  CHECK(std::isfinite(log_softmax_rows(m)(0, 2)));
  CHECK(stable_sigmoid(-800.0) >= 0.0);
  CHECK(stable_sigmoid(800.0) == 1.0);
  CHECK(log_sigmoid(-800.0) == doctest::Approx(-800.0));
  CHECK(log_sigmoid(0.0) == doctest::Approx(-std::log(2.0)));
}

TEST_CASE("sgd step clips the global norm") {
  ParamSet p;
  p.add("w", 1, 2);
  ParamSet g = p.zeros_like();
  g.tensor(0) << 3.0, 4.0;
  SgdState state;
  state.learning_rate = 0.5;
  state.clip = 1.0;
  const StepInfo info = sgd_step(p, g, state);
  CHECK(info.clipped);
  CHECK(info.grad_norm == doctest::Approx(5.0));
  CHECK(p.tensor(0)(0, 0) == doctest::Approx(-0.3));
  CHECK(p.tensor(0)(0, 1) == doctest::Approx(-0.4));

  state.clip = 0.0;
  ParamSet q = p.zeros_like();
  CHECK_FALSE(sgd_step(q, g, state).clipped);
  CHECK(q.tensor(0)(0, 1) == doctest::Approx(-2.0));

  g.tensor(0)(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const auto before = q.flatten();
  CHECK_THROWS_AS(sgd_step(q, g, state), NonFiniteError);
  CHECK(q.flatten() == before);
}

TEST_CASE("plateau decay multiplies the rate and stops at the threshold") {
  SgdState s;
  CHECK(s.end_epoch(10.0));
  CHECK(s.end_epoch(9.0));
  CHECK_FALSE(s.end_epoch(8.999));  // below the relative threshold
  CHECK(s.learning_rate == doctest::Approx(0.1));
  CHECK_FALSE(s.end_epoch(9.5));
  CHECK_FALSE(s.end_epoch(9.5));
  CHECK_FALSE(s.finished());
  CHECK_FALSE(s.end_epoch(9.5));
  CHECK(s.decays == 4);
  CHECK(s.finished());
  CHECK_THROWS_AS(s.end_epoch(std::nan("")), NonFiniteError);
}

TEST_CASE("checkpoints round-trip bit-exactly and reject bad files") {
  const fs::path dir = fs::temp_directory_path() / "revkl_test_checkpoint";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Rng rng(4);
  Checkpoint ck{ModelParams::initialized({20, 4, 3, 2}, rng), HeadType::kDiscriminator, {{"note", "x"}}};
  save_checkpoint(dir / "c.bin", ck);
  const Checkpoint back = load_checkpoint(dir / "c.bin");
  CHECK(back.params == ck.params);
  CHECK(back.head == HeadType::kDiscriminator);
  CHECK(back.metadata.at("note") == "x");
  CHECK_THROWS_AS(load_checkpoint(dir / "c.bin", HeadType::kLanguageModel), std::runtime_error);

  const auto full = fs::file_size(dir / "c.bin");
  fs::copy_file(dir / "c.bin", dir / "short.bin");
  fs::resize_file(dir / "short.bin", full - 8);
  CHECK_THROWS_AS(load_checkpoint(dir / "short.bin"), std::runtime_error);
  {
    std::ofstream junk(dir / "junk.bin");
    junk << "not a checkpoint\n";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.bin"), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), std::runtime_error);
}

TEST_CASE("every loss head passes the gradient check") {
  for (const auto& r : check_head_gradients(5)) {
    CAPTURE(r.head);
    CHECK(r.comparison.max_relative_error < 1e-4);
    CHECK(r.max_abs_gradient > 0.0);
  }
}

TEST_CASE("gradient comparison flags a wrong gradient") {
  ParamSet a;
  a.add("w", 1, 3);
  ParamSet b = a.zeros_like();
  a.tensor(0) << 1.0, 2.0, 3.0;
  b.tensor(0) << 1.0, 2.0, 3.3;
  const auto cmp = compare_gradients(a, b);
  CHECK(cmp.max_relative_error == doctest::Approx(0.3 / 3.3));
  CHECK(cmp.worst_index == 2u);
  CHECK(cmp.worst_tensor == "w");
}
