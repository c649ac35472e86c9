#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace revkl {

// Binary container used by checkpoints and the start-marginal cache:
// one line of compact JSON terminated by '\n', followed by a flat array of
// little-endian IEEE-754 doubles.
void write_header_and_doubles(const std::filesystem::path& path, const nlohmann::json& header,
                              std::span<const double> values);

struct HeaderAndDoubles {
  nlohmann::json header;
  std::vector<double> values;
};

HeaderAndDoubles read_header_and_doubles(const std::filesystem::path& path);

// Writes text to `path` through a temporary file and rename, so readers never
// observe a partially written artifact.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace revkl
