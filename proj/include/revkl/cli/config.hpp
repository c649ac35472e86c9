#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "revkl/pipeline/experiment.hpp"

namespace revkl {

// Config files are INI with one section per concern:
//   [run] profile, seed, threads
//   [world] vocab_size, gamma, start_steps, seed
//   [corpus] train, valid, test
//   [model] embed, hidden, layers, init_range, forget_bias
//   [lm] [disc] [finetune] [finetune_ce] learning_rate, clip, batch_size,
//       decay, min_improvement, max_epochs, stop_learning_rate, plateau
//   [finetune_ce] learning_rates (comma-separated, one CE arm each)
//   [experiment] chosen_rank, perturb_value, watched_contexts
// A manifest.json written by any command is accepted too; its "config" object
// holds the same sections.

struct ConfigOverrides {
  std::optional<std::string> profile;
  std::optional<std::uint64_t> world_seed;
  std::optional<std::uint64_t> run_seed;
  std::optional<int> threads;
};

// Defaults come from the profile (flag, else the file's run.profile, else
// "paper"); file values override them and flags override both. Throws
// std::invalid_argument for unknown keys, malformed values or a config that
// fails validation.
ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file, const ConfigOverrides& overrides);

// Applies section -> key -> string values on top of `config`.
void apply_sections(ExperimentConfig& config, const nlohmann::json& sections);

// Every field, values as strings, grouped by section.
nlohmann::json config_sections(const ExperimentConfig& config);
std::string to_ini(const ExperimentConfig& config);

}  // namespace revkl
