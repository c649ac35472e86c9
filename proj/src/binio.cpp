#include "revkl/binio.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace revkl {

namespace {

std::uint64_t to_little(std::uint64_t bits) {
  if constexpr (std::endian::native == std::endian::little) {
    return bits;
  } else {
    return __builtin_bswap64(bits);
  }
}

void write_atomically(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void write_header_and_doubles(const std::filesystem::path& path, const nlohmann::json& header,
                              std::span<const double> values) {
  std::string bytes = header.dump();
  bytes.push_back('\n');
  const std::size_t offset = bytes.size();
  bytes.resize(offset + values.size() * sizeof(double));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(values[i]));
    std::memcpy(bytes.data() + offset + i * sizeof(double), &bits, sizeof(bits));
  }
  write_atomically(path, bytes);
}

HeaderAndDoubles read_header_and_doubles(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  const auto newline = bytes.find('\n');
  if (newline == std::string::npos) throw std::runtime_error("missing header line: " + path.string());
  HeaderAndDoubles result;
  try {
    result.header = nlohmann::json::parse(bytes.substr(0, newline));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed header in " + path.string() + ": " + e.what());
  }
  const std::size_t payload = bytes.size() - newline - 1;
  if (payload % sizeof(double) != 0) {
    throw std::runtime_error("payload is not a whole number of doubles: " + path.string());
  }
  result.values.resize(payload / sizeof(double));
  for (std::size_t i = 0; i < result.values.size(); ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, bytes.data() + newline + 1 + i * sizeof(double), sizeof(bits));
    result.values[i] = std::bit_cast<double>(to_little(bits));
  }
  return result;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_atomically(path, text);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace revkl
