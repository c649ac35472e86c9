#include "revkl/pipeline/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

#include "revkl/binio.hpp"
#include "revkl/eval/eval.hpp"
#include "revkl/nncore/sgd.hpp"
#include "revkl/nncore/tape.hpp"
#include "revkl/objectives/heads.hpp"

namespace revkl {

std::string_view phase_name(Phase phase) {
  switch (phase) {
    case Phase::kLm: return "lm";
    case Phase::kDisc: return "disc";
    case Phase::kFinetune: return "finetune";
    case Phase::kFinetuneCe: return "finetune-ce";
  }
  return "unknown";
}

Phase parse_phase(std::string_view name) {
  if (name == "lm") return Phase::kLm;
  if (name == "disc") return Phase::kDisc;
  if (name == "finetune") return Phase::kFinetune;
  if (name == "finetune-ce") return Phase::kFinetuneCe;
  throw std::invalid_argument("unknown phase: " + std::string(name));
}

namespace {

// Loss of one batch. `indices` are the batch's sentence indices within
// `split`, for objectives that read precomputed per-position constants.
using BatchObjective = std::function<HeadResult(Tape&, Var logits, std::span<const Sentence> batch,
                                                std::span<const std::size_t> indices, Split split)>;

struct Totals {
  double total = 0.0;
  double first = 0.0;
  double second = 0.0;
  std::size_t rows = 0;

  void add(const LossValue& mean, std::size_t n) {
    const auto w = static_cast<double>(n);
    total += mean.total * w;
    first += mean.first * w;
    second += mean.second * w;
    rows += n;
  }
  LossValue mean() const {
    const double inv = 1.0 / static_cast<double>(rows);
    return {total * inv, first * inv, second * inv};
  }
};

std::vector<Sentence> gather(const std::vector<Sentence>& split, std::span<const std::size_t> indices) {
  std::vector<Sentence> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(split[i]);
  return out;
}

void require_finite(double value, Phase phase, int epoch, std::int64_t iteration) {
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "non-finite loss in phase " << phase_name(phase) << " at epoch " << epoch << ", iteration " << iteration;
    throw NonFiniteError(msg.str());
  }
}

LossValue evaluate_split(const ModelParams& params, const TokenCorpus& corpus, Split split, std::size_t batch_size,
                         const BatchObjective& objective) {
  const auto& sentences = corpus.split(split);
  std::vector<std::size_t> indices(sentences.size());
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  Totals totals;
  for (std::size_t start = 0; start < sentences.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, sentences.size() - start);
    const std::span<const std::size_t> idx(indices.data() + start, n);
    const std::span<const Sentence> batch(sentences.data() + start, n);
    Tape tape;
    const Var logits = forward_logits(tape, params, nullptr, batch);
    const HeadResult head = objective(tape, logits, batch, idx, split);
    totals.add(head.mean, n * kSentenceWords);
  }
  return totals.mean();
}

// Lower is better. The plateau schedule and checkpoint selection follow it.
double validation_metric(Phase phase, const LossValue& val) {
  return phase == Phase::kLm || phase == Phase::kFinetuneCe ? val.first : val.total;
}

void validate_config(const TrainConfig& config, const TokenCorpus& corpus) {
  if (config.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(config.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (config.max_epochs < 0) throw std::invalid_argument("max epochs must be non-negative");
  if (corpus.train.empty() || corpus.valid.empty()) throw std::invalid_argument("training and validation splits must be non-empty");
  for (const auto& w : config.watched) {
    if (w.position < 1 || w.position >= kSentenceTokens) throw std::invalid_argument("watched position out of range");
    if (w.word < 1 || w.word > corpus.vocab_size) throw std::invalid_argument("watched word out of range");
  }
}

TrainResult run_training(ModelParams params, const TokenCorpus& corpus, const TrainConfig& config,
                         const BatchObjective& objective) {
  validate_config(config, corpus);
  if (params.shape().vocab_size != corpus.vocab_size) {
    throw std::invalid_argument("model vocabulary does not match the corpus");
  }
  TrainResult result{params, {}};
  RunRecord& record = result.record;
  record.phase = config.phase;
  record.initial_probabilities = watched_probabilities(params, config.watched);

  SgdState state;
  state.learning_rate = config.learning_rate;
  state.clip = config.clip;
  state.decay = config.decay;
  state.min_improvement = config.min_improvement;
  state.stop_learning_rate = config.stop_learning_rate;

  Rng rng(derive_seed(config.run_seed, 100 + static_cast<std::uint64_t>(config.phase)));
  std::vector<std::size_t> order(corpus.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto finish_epoch = [&](EpochRecord rec, const LossValue& val) {
    rec.val_loss = val.total;
    rec.val_first = val.first;
    rec.val_second = val.second;
    rec.val_ppl = config.phase == Phase::kDisc ? std::numeric_limits<double>::quiet_NaN() : std::exp(val.first);
    rec.learning_rate = state.learning_rate;
    rec.iterations = record.iterations;
    const double metric = validation_metric(config.phase, val);
    require_finite(metric, config.phase, rec.epoch, record.iterations);
    if (rec.epoch == 0 || metric < record.best_metric) {
      record.best_metric = metric;
      record.best_epoch = rec.epoch;
      result.params = params;
    }
    if (config.plateau) state.end_epoch(metric);
    record.epochs.push_back(rec);
    if (config.on_epoch) config.on_epoch(config.phase, rec);
  };

  // Epoch 0: the starting parameters are a checkpoint candidate too.
  {
    EpochRecord rec;
    rec.epoch = 0;
    const LossValue train = evaluate_split(params, corpus, Split::kTrain, config.batch_size, objective);
    rec.train_loss = train.total;
    rec.train_first = train.first;
    rec.train_second = train.second;
    finish_epoch(rec, evaluate_split(params, corpus, Split::kValid, config.batch_size, objective));
  }

  ParamSet grads = params.params().zeros_like();
  auto budget_left = [&] { return config.max_iterations <= 0 || record.iterations < config.max_iterations; };

  for (int epoch = 1; epoch <= config.max_epochs && budget_left() && !(config.plateau && state.finished()); ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    Totals train;
    for (std::size_t start = 0; start < order.size() && budget_left(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, n);
      const std::vector<Sentence> batch = gather(corpus.train, idx);
      grads.set_zero();
      Tape tape;
      const Var logits = forward_logits(tape, params, &grads, batch);
      const HeadResult head = objective(tape, logits, batch, idx, Split::kTrain);
      require_finite(head.mean.total, config.phase, epoch, record.iterations);
      tape.backward(head.loss);
      sgd_step(params.params(), grads, state);
      ++record.iterations;
      train.add(head.mean, n * kSentenceWords);
      if (!config.watched.empty()) {
        const auto probs = watched_probabilities(params, config.watched);
        for (std::size_t w = 0; w < probs.size(); ++w) {
          record.traces.push_back({record.iterations, config.watched[w].context_id, config.watched[w].word, probs[w]});
        }
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    const LossValue tm = train.mean();
    rec.train_loss = tm.total;
    rec.train_first = tm.first;
    rec.train_second = tm.second;
    finish_epoch(rec, evaluate_split(params, corpus, Split::kValid, config.batch_size, objective));
  }
  return result;
}

// Frozen per-position constants for one split, sentence-major.
struct FrozenTargets {
  std::vector<double> q0_log;   // floored log q0(target)
  std::vector<double> r_logit;  // discriminator logit at the target
};

FrozenTargets frozen_targets(const ModelParams& q0, const ModelParams* disc, std::span<const Sentence> sentences,
                             std::size_t batch_size) {
  FrozenTargets out;
  out.q0_log = ModelSource(q0, batch_size).target_log_probs(sentences);
  out.r_logit.assign(sentences.size() * kSentenceWords, 0.0);
  if (disc == nullptr) return out;
  for (std::size_t start = 0; start < sentences.size(); start += batch_size) {
    const auto batch = sentences.subspan(start, std::min(batch_size, sentences.size() - start));
    const Matrix logits = lm_forward(*disc, batch);
    const auto targets = target_columns(batch);
    for (std::size_t row = 0; row < targets.size(); ++row) {
      const auto [s, pos] = row_position(row, batch.size());
      out.r_logit[(start + s) * kSentenceWords + (pos - 1)] = logits(static_cast<Eigen::Index>(row), targets[row]);
    }
  }
  return out;
}

}  // namespace

std::vector<double> watched_probabilities(const ModelParams& params, const std::vector<WatchedPair>& watched) {
  std::vector<double> out;
  if (watched.empty()) return out;
  std::vector<Sentence> batch;
  batch.reserve(watched.size());
  for (const auto& w : watched) batch.push_back(w.sentence);
  const Matrix logits = lm_forward(params, batch);
  out.reserve(watched.size());
  for (std::size_t i = 0; i < watched.size(); ++i) {
    const auto row = static_cast<Eigen::Index>((watched[i].position - 1) * batch.size() + i);
    const double lse = log_sum_exp(logits.row(row));
    out.push_back(std::exp(logits(row, watched[i].word - 1) - lse));
  }
  return out;
}

TrainResult train_lm(const TokenCorpus& corpus, const TrainConfig& config) {
  if (config.phase != Phase::kLm) throw std::invalid_argument("train_lm: config phase must be lm");
  if (config.shape.vocab_size != corpus.vocab_size) throw std::invalid_argument("train_lm: model vocabulary does not match the corpus");
  Rng rng(derive_seed(config.run_seed, 10));
  InitOptions init = config.init;
  init.zero_output = false;
  auto params = ModelParams::initialized(config.shape, rng, init);
  const BatchObjective objective = [](Tape& tape, Var logits, std::span<const Sentence> batch,
                                      std::span<const std::size_t>, Split) {
    return ce_head(tape, logits, target_columns(batch));
  };
  return run_training(std::move(params), corpus, config, objective);
}

TrainResult train_discriminator(const ModelParams& q0, const TokenCorpus& corpus, const TrainConfig& config) {
  if (config.phase != Phase::kDisc) throw std::invalid_argument("train_discriminator: config phase must be disc");
  if (q0.shape().vocab_size != corpus.vocab_size) throw std::invalid_argument("train_discriminator: q0 vocabulary does not match the corpus");
  ModelShape shape = config.shape;
  shape.vocab_size = corpus.vocab_size;
  Rng rng(derive_seed(config.run_seed, 20));
  InitOptions init = config.init;
  init.zero_output = true;
  auto params = ModelParams::initialized(shape, rng, init);
  const BatchObjective objective = [&q0](Tape& tape, Var logits, std::span<const Sentence> batch,
                                         std::span<const std::size_t>, Split) {
    const Matrix q0_probs = softmax_rows(lm_forward(q0, batch));
    return disc_head(tape, logits, q0_probs, target_columns(batch));
  };
  return run_training(std::move(params), corpus, config, objective);
}

TrainResult finetune(const ModelParams& q0, const ModelParams* disc, const TokenCorpus& corpus,
                     const TrainConfig& config) {
  if (config.phase != Phase::kFinetune) throw std::invalid_argument("finetune: config phase must be finetune");
  if (disc == nullptr && !config.uniform_ratio) throw std::invalid_argument("finetune: a discriminator is required");
  const ModelParams* ratio = config.uniform_ratio ? nullptr : disc;
  if (ratio != nullptr && ratio->shape().vocab_size != q0.shape().vocab_size) {
    throw std::invalid_argument("finetune: discriminator vocabulary does not match q0");
  }
  const FrozenTargets train = frozen_targets(q0, ratio, corpus.train, config.batch_size);
  const FrozenTargets valid = frozen_targets(q0, ratio, corpus.valid, config.batch_size);
  const BatchObjective objective = [&train, &valid](Tape& tape, Var logits, std::span<const Sentence> batch,
                                                    std::span<const std::size_t> indices, Split split) {
    const FrozenTargets& f = split == Split::kTrain ? train : valid;
    const std::size_t rows = batch.size() * kSentenceWords;
    std::vector<double> q0_log(rows), r_logit(rows);
    for (std::size_t row = 0; row < rows; ++row) {
      const auto [s, pos] = row_position(row, batch.size());
      const std::size_t at = indices[s] * kSentenceWords + (pos - 1);
      q0_log[row] = f.q0_log[at];
      r_logit[row] = f.r_logit[at];
    }
    return finetune_head(tape, logits, q0_log, r_logit, target_columns(batch));
  };
  return run_training(q0, corpus, config, objective);
}

TrainResult finetune_ce(const ModelParams& init, const TokenCorpus& corpus, const TrainConfig& config) {
  if (config.phase != Phase::kFinetuneCe) throw std::invalid_argument("finetune_ce: config phase must be finetune-ce");
  const BatchObjective objective = [](Tape& tape, Var logits, std::span<const Sentence> batch,
                                      std::span<const std::size_t>, Split) {
    return ce_head(tape, logits, target_columns(batch));
  };
  return run_training(init, corpus, config, objective);
}

void write_epoch_csv(const std::filesystem::path& path, const RunRecord& record) {
  const bool disc = record.phase == Phase::kDisc;
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_loss,val_loss,val_ppl,lr,iterations,"
      << (disc ? "train_dq_term,train_dp_term,val_dq_term,val_dp_term"
               : "train_ce_term,train_revkl_term,val_ce_term,val_revkl_term")
      << '\n';
  for (const auto& e : record.epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',';
    if (!disc) out << e.val_ppl;
    out << ',' << e.learning_rate << ',' << e.iterations << ',' << e.train_first << ',' << e.train_second << ','
        << e.val_first << ',' << e.val_second << '\n';
  }
  write_text_file(path, out.str());
}

void write_trace_csv(const std::filesystem::path& path, const RunRecord& record) {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,context_id,word_id,probability\n";
  for (const auto& t : record.traces) {
    out << t.iteration << ',' << t.context_id << ',' << t.word << ',' << t.probability << '\n';
  }
  write_text_file(path, out.str());
}

}  // namespace revkl
