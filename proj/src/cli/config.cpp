#include "revkl/cli/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace revkl {

namespace {

std::string format_double(double x) { return nlohmann::json(x).dump(); }

template <typename T>
T parse_number(const std::string& text, const std::string& where) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument(where + ": cannot parse '" + text + "'");
  return value;
}

bool parse_bool(const std::string& text, const std::string& where) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw std::invalid_argument(where + ": expected true or false, got '" + text + "'");
}

std::string format_list(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + format_double(values[i]);
  return out;
}

std::vector<double> parse_list(const std::string& text, const std::string& where) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(' ');
    const auto last = item.find_last_not_of(' ');
    if (first == std::string::npos) throw std::invalid_argument(where + ": empty list item");
    out.push_back(parse_number<double>(item.substr(first, last - first + 1), where));
  }
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
Field number_field(std::string section, std::string key, T ExperimentConfig::*member) {
  return {std::move(section), std::move(key),
          [member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          },
          [member](ExperimentConfig& c, const std::string& v, const std::string& where) {
            c.*member = parse_number<T>(v, where);
          }};
}

template <typename T>
Field split_field(std::string key, T SplitSizes::*member) {
  return {"corpus", key, [member](const ExperimentConfig& c) { return std::to_string(c.splits.*member); },
          [member](ExperimentConfig& c, const std::string& v, const std::string& where) {
            c.splits.*member = parse_number<T>(v, where);
          }};
}

void add_phase_fields(std::vector<Field>& out, const std::string& section, PhaseSettings ExperimentConfig::*phase) {
  auto add = [&](const std::string& key, auto PhaseSettings::*member) {
    using T = std::remove_reference_t<decltype(std::declval<PhaseSettings>().*member)>;
    out.push_back({section, key,
                   [phase, member](const ExperimentConfig& c) {
                     if constexpr (std::is_same_v<T, bool>) {
                       return std::string((c.*phase).*member ? "true" : "false");
                     } else if constexpr (std::is_floating_point_v<T>) {
                       return format_double((c.*phase).*member);
                     } else {
                       return std::to_string((c.*phase).*member);
                     }
                   },
                   [phase, member](ExperimentConfig& c, const std::string& v, const std::string& where) {
                     if constexpr (std::is_same_v<T, bool>) {
                       (c.*phase).*member = parse_bool(v, where);
                     } else {
                       (c.*phase).*member = parse_number<T>(v, where);
                     }
                   }});
  };
  add("learning_rate", &PhaseSettings::learning_rate);
  add("clip", &PhaseSettings::clip);
  add("batch_size", &PhaseSettings::batch_size);
  add("decay", &PhaseSettings::decay);
  add("min_improvement", &PhaseSettings::min_improvement);
  add("max_epochs", &PhaseSettings::max_epochs);
  add("stop_learning_rate", &PhaseSettings::stop_learning_rate);
  add("plateau", &PhaseSettings::plateau);
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"run", "profile", [](const ExperimentConfig& c) { return c.profile; },
                 [](ExperimentConfig& c, const std::string& v, const std::string&) { c.profile = v; }});
    f.push_back(number_field("run", "seed", &ExperimentConfig::run_seed));
    f.push_back(number_field("run", "threads", &ExperimentConfig::threads));
    f.push_back(number_field("world", "vocab_size", &ExperimentConfig::vocab_size));
    f.push_back(number_field("world", "gamma", &ExperimentConfig::gamma));
    f.push_back(number_field("world", "start_steps", &ExperimentConfig::start_steps));
    f.push_back(number_field("world", "seed", &ExperimentConfig::world_seed));
    f.push_back(split_field("train", &SplitSizes::train));
    f.push_back(split_field("valid", &SplitSizes::valid));
    f.push_back(split_field("test", &SplitSizes::test));
    f.push_back(number_field("model", "embed", &ExperimentConfig::embed));
    f.push_back(number_field("model", "hidden", &ExperimentConfig::hidden));
    f.push_back(number_field("model", "layers", &ExperimentConfig::layers));
    f.push_back(number_field("model", "init_range", &ExperimentConfig::init_range));
    f.push_back(number_field("model", "forget_bias", &ExperimentConfig::forget_bias));
    add_phase_fields(f, "lm", &ExperimentConfig::lm);
    add_phase_fields(f, "disc", &ExperimentConfig::disc);
    add_phase_fields(f, "finetune", &ExperimentConfig::finetune);
    add_phase_fields(f, "finetune_ce", &ExperimentConfig::finetune_ce);
    f.push_back({"finetune_ce", "learning_rates",
                 [](const ExperimentConfig& c) { return format_list(c.ce_learning_rates); },
                 [](ExperimentConfig& c, const std::string& v, const std::string& where) {
                   c.ce_learning_rates = parse_list(v, where);
                 }});
    f.push_back(number_field("experiment", "chosen_rank", &ExperimentConfig::chosen_rank));
    f.push_back(number_field("experiment", "perturb_value", &ExperimentConfig::perturb_value));
    f.push_back(number_field("experiment", "watched_contexts", &ExperimentConfig::watched_contexts));
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) return &f;
  }
  return nullptr;
}

std::string value_string(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number()) return v.dump();
  throw std::invalid_argument("config values must be scalars");
}

nlohmann::json read_sections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::invalid_argument("malformed JSON config " + path.string() + ": " + e.what());
    }
    return j.contains("config") ? j.at("config") : j;
  }
  boost::property_tree::ptree tree;
  std::istringstream stream(text);
  try {
    boost::property_tree::ini_parser::read_ini(stream, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::invalid_argument("malformed config " + path.string() + ": " + e.message());
  }
  nlohmann::json sections = nlohmann::json::object();
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw std::invalid_argument("config key outside a section: " + section);
    for (const auto& [key, value] : body) sections[section][key] = value.data();
  }
  return sections;
}

}  // namespace

void apply_sections(ExperimentConfig& config, const nlohmann::json& sections) {
  if (!sections.is_object()) throw std::invalid_argument("config must map sections to keys");
  for (const auto& [section, body] : sections.items()) {
    if (!body.is_object()) throw std::invalid_argument("config section '" + section + "' must hold keys");
    for (const auto& [key, value] : body.items()) {
      const Field* f = find_field(section, key);
      if (f == nullptr) throw std::invalid_argument("unknown config key: " + section + "." + key);
      f->set(config, value_string(value), section + "." + key);
    }
  }
}

ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file, const ConfigOverrides& overrides) {
  nlohmann::json sections = nlohmann::json::object();
  if (file) sections = read_sections(*file);
  std::string profile = "paper";
  if (sections.contains("run") && sections["run"].contains("profile")) {
    profile = value_string(sections["run"]["profile"]);
  }
  if (overrides.profile) profile = *overrides.profile;
  ExperimentConfig config = profile_config(profile);
  apply_sections(config, sections);
  config.profile = profile;
  if (overrides.world_seed) config.world_seed = *overrides.world_seed;
  if (overrides.run_seed) config.run_seed = *overrides.run_seed;
  if (overrides.threads) config.threads = *overrides.threads;
  validate(config);
  return config;
}

nlohmann::json config_sections(const ExperimentConfig& config) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& f : fields()) out[f.section][f.key] = f.get(config);
  return out;
}

std::string to_ini(const ExperimentConfig& config) {
  std::ostringstream out;
  std::string current;
  for (const auto& f : fields()) {
    if (f.section != current) {
      if (!current.empty()) out << '\n';
      out << '[' << f.section << "]\n";
      current = f.section;
    }
    out << f.key << " = " << f.get(config) << '\n';
  }
  return out.str();
}

}  // namespace revkl
