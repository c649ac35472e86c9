#pragma once

#include <filesystem>

#include <json.hpp>

#include "revkl/nncore/model.hpp"

namespace revkl {

// Checkpoint file: one JSON header line
//   {"format":"revkl-checkpoint","version":1,"vocab_size":V,"embed":E,
//    "hidden":H,"layers":L,"head":"lm"|"disc","parameter_count":N,"metadata":{...}}
// followed by N little-endian doubles in ModelParams canonical order.
struct Checkpoint {
  ModelParams params;
  HeadType head = HeadType::kLanguageModel;
  nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

// Throws std::runtime_error on a malformed or inconsistent file.
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Same, and additionally requires the given head type.
Checkpoint load_checkpoint(const std::filesystem::path& path, HeadType expected);

}  // namespace revkl
