#include "revkl/nncore/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace revkl {

std::string_view head_name(HeadType head) {
  return head == HeadType::kLanguageModel ? "lm" : "disc";
}

HeadType parse_head(std::string_view name) {
  if (name == "lm") return HeadType::kLanguageModel;
  if (name == "disc") return HeadType::kDiscriminator;
  throw std::invalid_argument("unknown head type: " + std::string(name));
}

ModelParams::ModelParams(const ModelShape& shape) : shape_(shape) {
  if (shape.vocab_size < 2 || shape.embed < 1 || shape.hidden < 1 || shape.layers < 1) {
    throw std::invalid_argument("invalid model shape");
  }
  const Eigen::Index h = shape.hidden;
  params_.add("embedding", shape.vocab_size + 1, shape.embed);
  for (int l = 0; l < shape.layers; ++l) {
    const Eigen::Index in = l == 0 ? shape.embed : shape.hidden;
    const std::string prefix = "lstm" + std::to_string(l) + ".";
    params_.add(prefix + "w_input", in, 4 * h);
    params_.add(prefix + "w_hidden", h, 4 * h);
    params_.add(prefix + "bias", 1, 4 * h);
  }
  params_.add("output.weight", h, shape.vocab_size);
  params_.add("output.bias", 1, shape.vocab_size);
}

std::size_t ModelParams::parameter_count(const ModelShape& shape) {
  const std::size_t v = shape.vocab_size, e = shape.embed, h = shape.hidden;
  std::size_t n = (v + 1) * e + h * v + v;
  for (int l = 0; l < shape.layers; ++l) n += ((l == 0 ? e : h) + h + 1) * 4 * h;
  return n;
}

ModelParams ModelParams::initialized(const ModelShape& shape, Rng& rng, const InitOptions& options) {
  ModelParams m(shape);
  auto fill = [&](Matrix& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-options.range, options.range);
  };
  fill(m.params_.tensor(0));
  for (int l = 0; l < shape.layers; ++l) {
    fill(m.params_.tensor(1 + 3 * l));
    fill(m.params_.tensor(2 + 3 * l));
    m.params_.tensor(3 + 3 * l).middleCols(shape.hidden, shape.hidden).setConstant(options.forget_bias);
  }
  if (!options.zero_output) fill(m.params_.tensor(1 + 3 * shape.layers));
  return m;
}

ModelParams perturb_bias(const ModelParams& params, WordId word, double value) {
  if (word < 1 || word > params.shape().vocab_size) {
    throw std::invalid_argument("perturb_bias: invalid word id " + std::to_string(word));
  }
  ModelParams out = params;
  out.output_bias()(0, word - 1) = value;
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sigmoid(x)) = -softplus(-x)
double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

double log_sum_exp(const Eigen::Ref<const RowVector>& row) {
  const double m = row.maxCoeff();
  return m + std::log((row.array() - m).exp().sum());
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    out.row(r) = logits.row(r).array() - log_sum_exp(logits.row(r));
  }
  return out;
}

namespace {

using RowArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_batch(const ModelShape& shape, std::span<const Sentence> batch) {
  if (batch.empty()) throw std::invalid_argument("forward: empty batch");
  for (const auto& s : batch) {
    for (int t = 0; t < kSentenceTokens; ++t) {
      const bool ok = t == 0 ? (s[t] >= 0 && s[t] <= shape.vocab_size) : (s[t] >= 1 && s[t] <= shape.vocab_size);
      if (!ok) throw std::invalid_argument("forward: token id out of range: " + std::to_string(s[t]));
    }
  }
}

// One LSTM step fused into a single tape node. Input: pre-activation gates
// (B x 4H) and, except at t = 0, the previous cell state. Output: [h | c].
Var lstm_cell(Tape& tape, Var gates, const Var* c_prev, Eigen::Index hidden) {
  const Matrix& g = tape.value(gates);
  const Eigen::Index h = hidden;
  auto sig = [](const auto& x) { return (1.0 / (1.0 + (-x).exp())); };
  Matrix out(g.rows(), 2 * h);
  {
    const RowArray i = sig(g.middleCols(0, h).array());
    const RowArray f = sig(g.middleCols(h, h).array());
    const RowArray o = sig(g.middleCols(2 * h, h).array());
    const RowArray cand = g.middleCols(3 * h, h).array().tanh();
    RowArray c = i * cand;
    if (c_prev != nullptr) c += f * tape.value(*c_prev).array();
    out.middleCols(h, h) = c.matrix();
    out.middleCols(0, h) = (o * c.tanh()).matrix();
  }
  std::vector<Var> inputs{gates};
  if (c_prev != nullptr) inputs.push_back(*c_prev);
  const bool has_prev = c_prev != nullptr;
  return tape.custom(std::move(inputs), std::move(out), [h, has_prev, sig](Tape& t, std::size_t self) {
    const auto& ins = t.inputs_of(self);
    const Matrix& g = t.value_at(ins[0]);
    const Matrix& y = t.value_at(self);
    const Matrix& dy = t.adjoint(self);
    const RowArray i = sig(g.middleCols(0, h).array());
    const RowArray f = sig(g.middleCols(h, h).array());
    const RowArray o = sig(g.middleCols(2 * h, h).array());
    const RowArray cand = g.middleCols(3 * h, h).array().tanh();
    const RowArray tc = y.middleCols(h, h).array().tanh();
    const RowArray dh = dy.middleCols(0, h).array();
    const RowArray dc = dy.middleCols(h, h).array() + dh * o * (1.0 - tc.square());
    if (t.input_requires_grad(self, 0)) {
      Matrix& dg = t.grad_of(ins[0]);
      dg.middleCols(0, h).array() += dc * cand * i * (1.0 - i);
      if (has_prev) dg.middleCols(h, h).array() += dc * t.value_at(ins[1]).array() * f * (1.0 - f);
      dg.middleCols(2 * h, h).array() += dh * tc * o * (1.0 - o);
      dg.middleCols(3 * h, h).array() += dc * i * (1.0 - cand.square());
    }
    if (has_prev && t.input_requires_grad(self, 1)) t.grad_of(ins[1]).array() += dc * f;
  });
}

}  // namespace

std::vector<int> target_columns(std::span<const Sentence> batch) {
  const std::size_t b = batch.size();
  std::vector<int> targets(b * kSentenceWords);
  for (int t = 0; t < kSentenceWords; ++t) {
    for (std::size_t s = 0; s < b; ++s) targets[t * b + s] = batch[s][t + 1] - 1;
  }
  return targets;
}

Var forward_logits(Tape& tape, const ModelParams& params, ParamSet* grads, std::span<const Sentence> batch) {
  const ModelShape& shape = params.shape();
  check_batch(shape, batch);
  if (grads != nullptr && !grads->same_shape(params.params())) {
    throw std::invalid_argument("forward: gradient set does not match parameters");
  }
  auto param = [&](std::size_t i) {
    return tape.parameter(params.params().tensor(i), grads != nullptr ? &grads->tensor(i) : nullptr);
  };
  const auto b = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index h = shape.hidden;
  constexpr int steps = kSentenceWords;

  std::vector<int> input_ids(static_cast<std::size_t>(b) * steps);
  for (int t = 0; t < steps; ++t) {
    for (Eigen::Index s = 0; s < b; ++s) input_ids[t * b + s] = batch[s][t];
  }
  Var layer_input = tape.gather_rows(param(0), input_ids);

  for (int l = 0; l < shape.layers; ++l) {
    const Var w_in = param(1 + 3 * l);
    const Var w_hid = param(2 + 3 * l);
    const Var bias = param(3 + 3 * l);
    const Var pre = tape.matmul(layer_input, w_in);  // all time steps at once
    std::vector<Var> outputs;
    outputs.reserve(steps);
    Var h_prev{}, c_prev{};
    for (int t = 0; t < steps; ++t) {
      Var gates = tape.slice_rows(pre, t * b, b);
      if (t > 0) gates = tape.add(gates, tape.matmul(h_prev, w_hid));
      gates = tape.add_row(gates, bias);
      const Var hc = lstm_cell(tape, gates, t > 0 ? &c_prev : nullptr, h);
      h_prev = tape.slice_cols(hc, 0, h);
      c_prev = tape.slice_cols(hc, h, h);
      outputs.push_back(h_prev);
    }
    layer_input = tape.concat_rows(outputs);
  }
  const Var out_w = param(1 + 3 * shape.layers);
  const Var out_b = param(2 + 3 * shape.layers);
  return tape.add_row(tape.matmul(layer_input, out_w), out_b);
}

Matrix lm_forward(const ModelParams& params, std::span<const Sentence> batch) {
  Tape tape;
  return tape.value(forward_logits(tape, params, nullptr, batch));
}

Matrix disc_forward(const ModelParams& params, std::span<const Sentence> batch) {
  return lm_forward(params, batch).unaryExpr([](double z) { return stable_sigmoid(z); });
}

}  // namespace revkl
