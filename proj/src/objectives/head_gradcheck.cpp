#include "revkl/objectives/head_gradcheck.hpp"

#include <cmath>
#include <functional>

#include "revkl/nncore/model.hpp"
#include "revkl/objectives/heads.hpp"

namespace revkl {

namespace {

using HeadFn = std::function<HeadResult(Tape&, Var, std::span<const Sentence>)>;

HeadGradcheck check_one(const std::string& name, const ModelParams& model, std::span<const Sentence> batch,
                        const HeadFn& head, double h) {
  ParamSet analytic = model.params().zeros_like();
  {
    Tape tape;
    const Var logits = forward_logits(tape, model, &analytic, batch);
    tape.backward(head(tape, logits, batch).loss);
  }
  ModelParams probe = model;
  const LossFn loss = [&](const ParamSet& p) {
    probe.params() = p;
    Tape tape;
    const Var logits = forward_logits(tape, probe, nullptr, batch);
    return head(tape, logits, batch).mean.total;
  };
  const ParamSet numeric = finite_diff_grad(loss, model.params(), h);
  HeadGradcheck out{name, compare_gradients(analytic, numeric), 0.0};
  for (std::size_t i = 0; i < analytic.count(); ++i) {
    out.max_abs_gradient = std::max(out.max_abs_gradient, analytic.tensor(i).cwiseAbs().maxCoeff());
  }
  return out;
}

}  // namespace

std::vector<HeadGradcheck> check_head_gradients(std::uint64_t seed, double h) {
  const ModelShape shape{20, 8, 8, 2};
  Rng rng(derive_seed(seed, 30));
  const InitOptions wide{0.5, 1.0, false};
  const ModelParams model = ModelParams::initialized(shape, rng, wide);
  const ModelParams q0 = ModelParams::initialized(shape, rng, wide);
  const ModelParams disc = ModelParams::initialized(shape, rng, wide);
  std::vector<Sentence> batch(3);
  for (auto& s : batch) {
    s[0] = kStartToken;
    for (int t = 1; t < kSentenceTokens; ++t) s[t] = 1 + static_cast<WordId>(rng.below(shape.vocab_size));
  }
  const auto targets = target_columns(batch);
  const Matrix q0_logits = lm_forward(q0, batch);
  const Matrix q0_probs = softmax_rows(q0_logits);
  const std::vector<double> q0_log = target_log_probs(q0_logits, targets);
  const Matrix disc_logits = lm_forward(disc, batch);
  std::vector<double> r_logit(targets.size());
  for (std::size_t r = 0; r < targets.size(); ++r) r_logit[r] = disc_logits(static_cast<Eigen::Index>(r), targets[r]);

  std::vector<HeadGradcheck> out;
  out.push_back(check_one(
      "ce", model, batch, [&](Tape& t, Var z, std::span<const Sentence>) { return ce_head(t, z, targets); }, h));
  out.push_back(check_one(
      "disc", model, batch,
      [&](Tape& t, Var z, std::span<const Sentence>) { return disc_head(t, z, q0_probs, targets); }, h));
  out.push_back(check_one(
      "finetune", model, batch,
      [&](Tape& t, Var z, std::span<const Sentence>) { return finetune_head(t, z, q0_log, r_logit, targets); }, h));
  return out;
}

}  // namespace revkl
