#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "revkl/corpus/corpus.hpp"
#include "revkl/pipeline/pipeline.hpp"
#include "revkl/rng.hpp"

namespace revkl {

// Optimizer settings of one training phase.
struct PhaseSettings {
  double learning_rate = 1.0;
  double clip = 1.0;
  std::size_t batch_size = 1024;
  double decay = 0.1;
  double min_improvement = 1e-3;
  int max_epochs = 100;
  double stop_learning_rate = 1e-4;
  bool plateau = true;

  bool operator==(const PhaseSettings&) const = default;
};

// Everything that determines an experiment's outputs.
struct ExperimentConfig {
  std::string profile = "paper";
  // world
  int vocab_size = 1000;
  double gamma = kDefaultGamma;
  int start_steps = 10;  // trigram steps applied to the start-pair distribution
  std::uint64_t world_seed = 1;
  // corpus, sampled from a stream derived from world_seed
  SplitSizes splits;
  // networks (the discriminator shares the language model's shape)
  int embed = 256;
  int hidden = 256;
  int layers = 2;
  double init_range = 0.1;
  double forget_bias = 1.0;
  // phases
  PhaseSettings lm;
  PhaseSettings disc;
  PhaseSettings finetune;
  PhaseSettings finetune_ce{0.01, 1.0, 1024, 0.1, 1e-3, 1000, 1e-4, false};
  std::vector<double> ce_learning_rates{0.01, 0.1};
  // perturbation experiment
  int chosen_rank = 60;
  double perturb_value = -20.0;
  int watched_contexts = 5;
  // execution
  std::uint64_t run_seed = 1;
  int threads = 1;

  std::uint64_t corpus_seed() const { return derive_seed(world_seed, 1); }
  ModelShape shape() const { return {vocab_size, embed, hidden, layers}; }
  InitOptions init() const { return {init_range, forget_bias, false}; }
};

ExperimentConfig paper_profile();
ExperimentConfig ci_profile();
// Throws std::invalid_argument for an unknown name.
ExperimentConfig profile_config(const std::string& name);
// Throws std::invalid_argument when a field is out of range.
void validate(const ExperimentConfig& config);

TrainConfig train_config(const ExperimentConfig& config, Phase phase);

// Builds the world, loading or writing its start-pair cache under `cache_dir`
// when that is non-empty.
TrigramWorld make_world(const ExperimentConfig& config, const std::filesystem::path& cache_dir = {});

// Watched pairs for the perturbation experiment: validation positions whose
// target is `word`, ranked by true probability (ties to the earlier position),
// with at most one pair per distinct context.
std::vector<WatchedPair> select_watched(const TrigramWorld& world, const std::vector<Sentence>& sentences,
                                        WordId word, int count);

// Mean absolute change of log q between consecutive trace points of one pair.
double oscillation_amplitude(const RunRecord& record, std::int64_t context_id, WordId word, double initial);

using ProgressFn = std::function<void(const std::string&)>;

// Full perturbation experiment: data, initial model, perturbation,
// discriminators, fine-tuning arms and reports. Writes every artifact under
// `out_dir` and returns the report, which depends only on the config.
nlohmann::json run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                              const ProgressFn& progress = {});

// Perplexity and imbalance table in CSV form, built from a report.
std::string table_csv(const nlohmann::json& report);

}  // namespace revkl
