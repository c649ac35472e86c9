#include "revkl/nncore/checkpoint.hpp"

#include <stdexcept>
#include <string>

#include "revkl/binio.hpp"

namespace revkl {

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const ModelShape& shape = checkpoint.params.shape();
  const nlohmann::json header = {
      {"format", "revkl-checkpoint"},
      {"version", 1},
      {"vocab_size", shape.vocab_size},
      {"embed", shape.embed},
      {"hidden", shape.hidden},
      {"layers", shape.layers},
      {"head", std::string(head_name(checkpoint.head))},
      {"parameter_count", checkpoint.params.params().size()},
      {"metadata", checkpoint.metadata},
  };
  write_header_and_doubles(path, header, checkpoint.params.params().flatten());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto data = read_header_and_doubles(path);
  const auto& h = data.header;
  if (h.value("format", "") != "revkl-checkpoint") throw std::runtime_error("not a checkpoint: " + path.string());
  if (h.value("version", 0) != 1) throw std::runtime_error("unsupported checkpoint version: " + path.string());
  ModelShape shape;
  try {
    shape.vocab_size = h.at("vocab_size").get<int>();
    shape.embed = h.at("embed").get<int>();
    shape.hidden = h.at("hidden").get<int>();
    shape.layers = h.at("layers").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint header incomplete in " + path.string() + ": " + e.what());
  }
  Checkpoint cp{ModelParams(shape), parse_head(h.value("head", "")), h.value("metadata", nlohmann::json::object())};
  if (data.values.size() != cp.params.params().size() ||
      h.value("parameter_count", std::size_t{0}) != data.values.size()) {
    throw std::runtime_error("checkpoint parameter count mismatch in " + path.string());
  }
  cp.params.params().assign(data.values);
  return cp;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, HeadType expected) {
  Checkpoint cp = load_checkpoint(path);
  if (cp.head != expected) {
    throw std::runtime_error("checkpoint " + path.string() + " has head '" + std::string(head_name(cp.head)) +
                             "', expected '" + std::string(head_name(expected)) + "'");
  }
  return cp;
}

}  // namespace revkl
