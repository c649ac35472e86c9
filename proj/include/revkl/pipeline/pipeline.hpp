#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string_view>
#include <vector>

#include "revkl/corpus/corpus.hpp"
#include "revkl/nncore/model.hpp"

namespace revkl {

enum class Phase { kLm, kDisc, kFinetune, kFinetuneCe };

std::string_view phase_name(Phase phase);
Phase parse_phase(std::string_view name);

// A (context, word) pair whose model probability is traced after every SGD
// step. The context is the prefix of `sentence` before `position`.
struct WatchedPair {
  std::int64_t context_id = 0;  // sentence index * 10 + (position - 1) in its split
  Sentence sentence{};
  int position = 1;
  WordId word = 1;
};

struct EpochRecord {
  int epoch = 0;  // 0 is the starting point, before any update
  double train_loss = 0.0;
  double train_first = 0.0;   // CE term, or the model term of the discriminator loss
  double train_second = 0.0;  // reverse-KL term, or the data term
  double val_loss = 0.0;
  double val_first = 0.0;
  double val_second = 0.0;
  double val_ppl = 0.0;  // exp of the validation CE term; NaN for the discriminator
  double learning_rate = 0.0;
  std::int64_t iterations = 0;
};

struct TracePoint {
  std::int64_t iteration = 0;
  std::int64_t context_id = 0;
  WordId word = 0;
  double probability = 0.0;
};

struct RunRecord {
  Phase phase = Phase::kLm;
  std::vector<EpochRecord> epochs;
  // One point per watched pair after every completed iteration.
  std::vector<TracePoint> traces;
  std::vector<double> initial_probabilities;  // watched probabilities before training
  std::int64_t iterations = 0;
  int best_epoch = 0;
  double best_metric = 0.0;
  std::filesystem::path checkpoint;
};

using EpochCallback = std::function<void(Phase, const EpochRecord&)>;

struct TrainConfig {
  Phase phase = Phase::kLm;
  double learning_rate = 1.0;
  double clip = 1.0;
  std::size_t batch_size = 1024;
  double decay = 0.1;
  double min_improvement = 1e-3;
  int max_epochs = 100;
  double stop_learning_rate = 1e-4;
  bool plateau = true;              // false keeps the learning rate fixed
  std::int64_t max_iterations = 0;  // 0 means no iteration budget
  std::uint64_t run_seed = 1;
  ModelShape shape;                 // used when a network is created from scratch
  InitOptions init;
  std::vector<WatchedPair> watched;
  bool uniform_ratio = false;       // fine-tune with r = 0.5 everywhere
  EpochCallback on_epoch;
};

struct TrainResult {
  ModelParams params;  // best-validation parameters
  RunRecord record;
};

// Trains a fresh language model on the training split with the CE loss.
TrainResult train_lm(const TokenCorpus& corpus, const TrainConfig& config);

// Trains a fresh discriminator against the frozen model q0. The output layer
// starts at zero so every initial ratio is exactly 0.5.
TrainResult train_discriminator(const ModelParams& q0, const TokenCorpus& corpus, const TrainConfig& config);

// Fine-tunes a copy of q0 with the discriminator-estimated loss. `disc` may be
// null only when config.uniform_ratio is set.
TrainResult finetune(const ModelParams& q0, const ModelParams* disc, const TokenCorpus& corpus,
                     const TrainConfig& config);

// Continues training `init` with the plain CE loss.
TrainResult finetune_ce(const ModelParams& init, const TokenCorpus& corpus, const TrainConfig& config);

// Probability of each watched word under `params`, in watched order.
std::vector<double> watched_probabilities(const ModelParams& params, const std::vector<WatchedPair>& watched);

// CSV columns: epoch,train_loss,val_loss,val_ppl,lr,iterations followed by the
// per-term columns named after the phase (ce_term/revkl_term or dq_term/dp_term).
void write_epoch_csv(const std::filesystem::path& path, const RunRecord& record);
// CSV columns: iteration,context_id,word_id,probability
void write_trace_csv(const std::filesystem::path& path, const RunRecord& record);

}  // namespace revkl
