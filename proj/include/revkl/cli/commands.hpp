#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "revkl/cli/config.hpp"

namespace revkl {

inline constexpr const char* kToolVersion = "0.1.0";

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

const std::vector<std::string>& command_names();

// Parsed command line. Which inputs a command reads is listed in its help.
struct CommandArgs {
  std::string command;
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  ConfigOverrides overrides;
  bool force = false;

  std::optional<std::filesystem::path> data;   // directory written by gen-data
  std::optional<std::filesystem::path> model;  // language-model or discriminator checkpoint
  std::optional<std::filesystem::path> q0;     // frozen language model
  std::optional<std::filesystem::path> disc;   // frozen discriminator
  std::optional<int> word;                     // perturb: word id
  std::optional<int> rank;                     // perturb: frequency rank
  std::optional<double> value;                 // perturb: bias value
  std::optional<double> learning_rate;         // finetune-ce
  std::optional<std::int64_t> iterations;      // finetune-ce budget
  bool uniform_ratio = false;                  // finetune with r = 0.5
  std::optional<int> watch_word;               // finetune, finetune-ce
  std::string source = "model";                // eval: model, oracle or uniform
  std::string split = "test";                  // eval
  std::optional<int> except_word;              // eval
};

// Runs one command. Progress goes to `log`, a one-line JSON result to `out`
// and a JSON error object to `err`. Returns the process exit code.
int execute(const CommandArgs& args, std::ostream& out, std::ostream& err, std::ostream& log);

}  // namespace revkl
