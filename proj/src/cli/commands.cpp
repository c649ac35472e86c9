#include "revkl/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <Eigen/Core>

#include "revkl/binio.hpp"
#include "revkl/eval/eval.hpp"
#include "revkl/nncore/checkpoint.hpp"
#include "revkl/nncore/sgd.hpp"
#include "revkl/objectives/head_gradcheck.hpp"
#include "revkl/propcheck/propcheck.hpp"

namespace revkl {

namespace fs = std::filesystem;

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"gen-data", "train",     "perturb",  "train-disc",
                                                 "finetune", "finetune-ce", "eval",   "propcheck",
                                                 "gradcheck", "reproduce-table1"};
  return names;
}

namespace {

// Gradient checks pass below this relative error.
constexpr double kGradTolerance = 1e-4;

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

// Shared state of one command invocation.
class Run {
 public:
  Run(const CommandArgs& args, std::ostream& log) : args_(args), log_(log) {}

  ExperimentConfig config;

  void prepare() {
    config = resolve_config(args_.config, args_.overrides);
    if (args_.out.empty()) throw std::invalid_argument("--out is required");
    if (fs::exists(args_.out / "manifest.json") && !args_.force) {
      throw std::invalid_argument("output directory already holds a run: " + args_.out.string() +
                                  " (pass --force to overwrite)");
    }
    fs::create_directories(args_.out);
    Eigen::setNbThreads(config.threads);
    manifest_ = {{"tool", "revkl"},
                 {"version", kToolVersion},
                 {"command", args_.command},
                 {"config", config_sections(config)},
                 {"seeds", {{"world", config.world_seed}, {"run", config.run_seed}}},
                 {"inputs", inputs()},
                 {"output", args_.out.string()},
                 {"started_at", utc_now()},
                 {"status", "running"}};
    write_manifest();
  }

  void finish(const std::string& status) {
    if (manifest_.is_null()) return;
    manifest_["status"] = status;
    manifest_["finished_at"] = utc_now();
    write_manifest();
  }

  void say(const std::string& msg) const { log_ << "[" << args_.command << "] " << msg << std::endl; }

  EpochCallback epoch_logger() const {
    return [this](Phase phase, const EpochRecord& e) {
      std::ostringstream msg;
      msg << phase_name(phase) << " epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss;
      if (phase != Phase::kDisc) msg << " val_ppl " << e.val_ppl;
      msg << " lr " << e.learning_rate;
      say(msg.str());
    };
  }

 private:
  nlohmann::json inputs() const {
    nlohmann::json j = nlohmann::json::object();
    if (args_.config) j["config"] = args_.config->string();
    if (args_.data) j["data"] = args_.data->string();
    if (args_.model) j["model"] = args_.model->string();
    if (args_.q0) j["q0"] = args_.q0->string();
    if (args_.disc) j["disc"] = args_.disc->string();
    return j;
  }

  void write_manifest() const { write_text_file(args_.out / "manifest.json", manifest_.dump(2) + "\n"); }

  const CommandArgs& args_;
  std::ostream& log_;
  nlohmann::json manifest_;
};

template <typename T>
const T& require(const std::optional<T>& value, const char* flag) {
  if (!value) throw std::invalid_argument(std::string(flag) + " is required for this command");
  return *value;
}

TokenCorpus load_data(const CommandArgs& args, const ExperimentConfig& config) {
  const fs::path& dir = require(args.data, "--data");
  TokenCorpus corpus = load_corpus(dir / "corpus");
  if (corpus.vocab_size != config.vocab_size || corpus.world_seed != config.world_seed) {
    throw std::invalid_argument("corpus in " + dir.string() + " was generated with a different world config");
  }
  return corpus;
}

TrigramWorld load_world(const CommandArgs& args, const ExperimentConfig& config) {
  return make_world(config, require(args.data, "--data") / "world");
}

void check_shape(const ModelParams& params, const ExperimentConfig& config, const fs::path& path) {
  if (params.shape().vocab_size != config.vocab_size) {
    throw std::invalid_argument("checkpoint " + path.string() + " has a different vocabulary size than the config");
  }
}

void save_run(const fs::path& dir, const ModelParams& params, HeadType head, const RunRecord& record,
              nlohmann::json metadata) {
  metadata["phase"] = phase_name(record.phase);
  metadata["best_epoch"] = record.best_epoch;
  metadata["iterations"] = record.iterations;
  save_checkpoint(dir / "checkpoint.bin", {params, head, std::move(metadata)});
  write_epoch_csv(dir / "epochs.csv", record);
  if (!record.traces.empty()) write_trace_csv(dir / "trace.csv", record);
}

nlohmann::json run_summary(const RunRecord& record) {
  const auto& last = record.epochs.back();
  return {{"epochs", static_cast<int>(record.epochs.size()) - 1},
          {"iterations", record.iterations},
          {"best_epoch", record.best_epoch},
          {"best_metric", record.best_metric},
          {"final_lr", last.learning_rate}};
}

// Watched word: an explicit flag, else the word a perturbed checkpoint crushed.
std::optional<WordId> watched_word(const CommandArgs& args, const Checkpoint& model) {
  if (args.watch_word) return *args.watch_word;
  if (model.metadata.contains("chosen_word")) return model.metadata.at("chosen_word").get<WordId>();
  return std::nullopt;
}

nlohmann::json cmd_gen_data(Run& run, const CommandArgs& args) {
  run.say("building world (vocab " + std::to_string(run.config.vocab_size) + ")");
  const TrigramWorld world = make_world(run.config, args.out / "world");
  run.say("sampling corpus");
  const TokenCorpus corpus = sample_corpus(world, run.config.splits, run.config.corpus_seed());
  save_corpus(corpus, args.out / "corpus");
  const WordClassPartition partition = word_stats(corpus);
  const FrequencyShares shares = frequency_shares(corpus, partition);
  const nlohmann::json stats = {{"top50_share", shares.frequent},
                                {"next100_share", shares.almost_frequent},
                                {"rest_share", shares.rest},
                                {"train", corpus.train.size()},
                                {"valid", corpus.valid.size()},
                                {"test", corpus.test.size()},
                                {"chosen_word", partition.word_at_rank(run.config.chosen_rank)}};
  write_text_file(args.out / "stats.json", stats.dump(2) + "\n");
  return stats;
}

nlohmann::json cmd_train(Run& run, const CommandArgs& args) {
  const TokenCorpus corpus = load_data(args, run.config);
  TrainConfig tc = train_config(run.config, Phase::kLm);
  tc.on_epoch = run.epoch_logger();
  const TrainResult result = train_lm(corpus, tc);
  save_run(args.out, result.params, HeadType::kLanguageModel, result.record, nlohmann::json::object());
  return run_summary(result.record);
}

nlohmann::json cmd_perturb(Run& run, const CommandArgs& args) {
  const fs::path& path = require(args.model, "--model");
  const Checkpoint model = load_checkpoint(path, HeadType::kLanguageModel);
  check_shape(model.params, run.config, path);
  WordId word = 0;
  int rank = 0;
  if (args.word) {
    word = *args.word;
  } else {
    const TokenCorpus corpus = load_data(args, run.config);
    rank = args.rank.value_or(run.config.chosen_rank);
    word = word_stats(corpus).word_at_rank(rank);
  }
  const double value = args.value.value_or(run.config.perturb_value);
  const ModelParams perturbed = perturb_bias(model.params, word, value);
  nlohmann::json meta = {{"chosen_word", word}, {"value", value}, {"source", path.string()}};
  if (rank > 0) meta["chosen_rank"] = rank;
  save_checkpoint(args.out / "checkpoint.bin", {perturbed, HeadType::kLanguageModel, meta});
  return meta;
}

nlohmann::json cmd_train_disc(Run& run, const CommandArgs& args) {
  const fs::path& path = require(args.model, "--model");
  const Checkpoint q0 = load_checkpoint(path, HeadType::kLanguageModel);
  check_shape(q0.params, run.config, path);
  const TokenCorpus corpus = load_data(args, run.config);
  TrainConfig tc = train_config(run.config, Phase::kDisc);
  tc.on_epoch = run.epoch_logger();
  const TrainResult result = train_discriminator(q0.params, corpus, tc);
  save_run(args.out, result.params, HeadType::kDiscriminator, result.record, {{"q0", path.string()}});
  nlohmann::json summary = run_summary(result.record);
  summary["initial_val_loss"] = result.record.epochs.front().val_loss;
  return summary;
}

nlohmann::json cmd_finetune(Run& run, const CommandArgs& args, bool ce) {
  const fs::path& path = require(args.model, "--model");
  const Checkpoint model = load_checkpoint(path, HeadType::kLanguageModel);
  check_shape(model.params, run.config, path);
  const TokenCorpus corpus = load_data(args, run.config);
  TrainConfig tc = train_config(run.config, ce ? Phase::kFinetuneCe : Phase::kFinetune);
  tc.on_epoch = run.epoch_logger();
  if (const auto word = watched_word(args, model)) {
    const TrigramWorld world = load_world(args, run.config);
    tc.watched = select_watched(world, corpus.valid, *word, run.config.watched_contexts);
  }
  nlohmann::json meta = {{"init", path.string()}};
  if (model.metadata.contains("chosen_word")) meta["chosen_word"] = model.metadata.at("chosen_word");
  TrainResult result{model.params, {}};
  if (ce) {
    if (args.learning_rate) tc.learning_rate = *args.learning_rate;
    if (args.iterations) tc.max_iterations = *args.iterations;
    meta["learning_rate"] = tc.learning_rate;
    result = finetune_ce(model.params, corpus, tc);
  } else {
    tc.uniform_ratio = args.uniform_ratio;
    std::optional<Checkpoint> disc;
    if (!args.uniform_ratio) {
      const fs::path& disc_path = require(args.disc, "--disc (or --uniform-ratio)");
      disc = load_checkpoint(disc_path, HeadType::kDiscriminator);
      check_shape(disc->params, run.config, disc_path);
      meta["disc"] = disc_path.string();
    }
    meta["uniform_ratio"] = args.uniform_ratio;
    result = finetune(model.params, disc ? &disc->params : nullptr, corpus, tc);
  }
  save_run(args.out, result.params, HeadType::kLanguageModel, result.record, meta);
  nlohmann::json summary = run_summary(result.record);
  if (!tc.watched.empty()) {
    const auto final_q = watched_probabilities(result.params, tc.watched);
    double log_lift = 0.0;
    for (std::size_t i = 0; i < final_q.size(); ++i) {
      log_lift += std::log(final_q[i]) - std::log(result.record.initial_probabilities[i]);
    }
    summary["watched_lift"] = std::exp(log_lift / static_cast<double>(final_q.size()));
  }
  return summary;
}

nlohmann::json cmd_eval(Run& run, const CommandArgs& args) {
  const TokenCorpus corpus = load_data(args, run.config);
  const TrigramWorld world = load_world(args, run.config);
  Split split = Split::kTest;
  if (args.split == "train") {
    split = Split::kTrain;
  } else if (args.split == "valid") {
    split = Split::kValid;
  } else if (args.split != "test") {
    throw std::invalid_argument("--split must be train, valid or test");
  }
  const auto& sentences = corpus.split(split);
  const WordClassPartition partition = word_stats(corpus);
  nlohmann::json result = {{"split", split_name(split)}, {"source", args.source}};

  std::optional<Checkpoint> model;
  if (args.source == "model") {
    const fs::path& path = require(args.model, "--model");
    model = load_checkpoint(path);
    check_shape(model->params, run.config, path);
    if (model->head == HeadType::kDiscriminator) {
      const fs::path& q0_path = require(args.q0, "--q0 (evaluating a discriminator)");
      const Checkpoint q0 = load_checkpoint(q0_path, HeadType::kLanguageModel);
      const LossValue loss = disc_report(model->params, q0.params, sentences);
      result["disc_loss"] = {{"total", loss.total}, {"dq_term", loss.first}, {"dp_term", loss.second},
                             {"ln4", std::log(4.0)}};
      write_text_file(args.out / "eval.json", result.dump(2) + "\n");
      return result;
    }
  } else if (args.source != "oracle" && args.source != "uniform") {
    throw std::invalid_argument("--source must be model, oracle or uniform");
  }

  std::unique_ptr<ProbabilitySource> source;
  if (model) {
    source = std::make_unique<ModelSource>(model->params);
  } else if (args.source == "oracle") {
    source = std::make_unique<OracleSource>(world);
  } else {
    source = std::make_unique<UniformSource>(world.vocab_size());
  }
  const EvalReport report = imbalance_report(*source, world, sentences, partition);
  result["report"] = to_json(report);
  std::optional<WordId> except = args.except_word;
  if (!except && model && model->metadata.contains("chosen_word")) except = model->metadata.at("chosen_word").get<WordId>();
  if (except) {
    result["except_word"] = *except;
    result["except_word_ppl"] = except_word_perplexity(*source, sentences, *except);
  }
  write_text_file(args.out / "eval.json", result.dump(2) + "\n");
  write_text_file(args.out / "eval.csv", csv_header() + "\n" + csv_row(report) + "\n");
  return result;
}

nlohmann::json cmd_propcheck(Run& run, const CommandArgs& args, bool& pass) {
  PropcheckOutput result = run_propcheck(run.config.run_seed);
  if (args.model) {
    // Sign check on trained artifacts: theta = --model, q0 = --q0 (default
    // --model), r = --disc, positions from the validation split.
    const Checkpoint theta = load_checkpoint(*args.model, HeadType::kLanguageModel);
    const Checkpoint q0 = args.q0 ? load_checkpoint(*args.q0, HeadType::kLanguageModel) : theta;
    const Checkpoint disc = load_checkpoint(require(args.disc, "--disc"), HeadType::kDiscriminator);
    const TokenCorpus corpus = load_data(args, run.config);
    const std::size_t n = std::min<std::size_t>(corpus.valid.size(), 16);
    const SignCheckResult sign = direction_sign_check(theta.params, q0.params, &disc.params,
                                                      std::span<const Sentence>(corpus.valid.data(), n));
    result.summary["trained_direction_sign"] = {
        {"checked", sign.checked}, {"agreed", sign.agreed}, {"pass", sign.pass() && sign.checked > 0}};
    result.pass = result.pass && sign.pass() && sign.checked > 0;
    result.summary["pass"] = result.pass;
  }
  write_text_file(args.out / "sweep.csv", result.sweep_csv);
  write_text_file(args.out / "summary.json", result.summary.dump(2) + "\n");
  pass = result.pass;
  return {{"pass", result.pass}};
}

nlohmann::json cmd_gradcheck(Run& run, const CommandArgs& args, bool& pass) {
  const auto checks = check_head_gradients(run.config.run_seed);
  nlohmann::json heads = nlohmann::json::array();
  pass = true;
  for (const auto& c : checks) {
    const bool ok = c.comparison.max_relative_error < kGradTolerance;
    pass = pass && ok;
    heads.push_back({{"head", c.head},
                     {"max_relative_error", c.comparison.max_relative_error},
                     {"max_absolute_error", c.comparison.max_absolute_error},
                     {"worst_tensor", c.comparison.worst_tensor},
                     {"coordinates", c.comparison.coordinates},
                     {"pass", ok}});
  }
  const nlohmann::json result = {{"model", {{"vocab_size", 20}, {"embed", 8}, {"hidden", 8}, {"layers", 2}}},
                                 {"tolerance", kGradTolerance},
                                 {"heads", heads},
                                 {"pass", pass}};
  write_text_file(args.out / "gradcheck.json", result.dump(2) + "\n");
  return result;
}

nlohmann::json cmd_reproduce(Run& run, const CommandArgs& args) {
  const nlohmann::json report = run_experiment(run.config, args.out, [&](const std::string& msg) { run.say(msg); });
  return {{"report", (args.out / "report.json").string()}, {"table", report.at("table")}};
}

}  // namespace

int execute(const CommandArgs& args, std::ostream& out, std::ostream& err, std::ostream& log) {
  Run run(args, log);
  auto fail = [&](const char* kind, const std::string& message, int code) {
    try {
      run.finish("failed");
    } catch (const std::exception&) {
      // The error below is what matters.
    }
    err << nlohmann::json{{"error", {{"kind", kind}, {"command", args.command}, {"message", message}}}}.dump()
        << std::endl;
    return code;
  };
  try {
    const auto& names = command_names();
    if (std::find(names.begin(), names.end(), args.command) == names.end()) {
      throw std::invalid_argument("unknown command: " + args.command);
    }
    run.prepare();
    nlohmann::json result;
    bool pass = true;
    const std::string& c = args.command;
    if (c == "gen-data") {
      result = cmd_gen_data(run, args);
    } else if (c == "train") {
      result = cmd_train(run, args);
    } else if (c == "perturb") {
      result = cmd_perturb(run, args);
    } else if (c == "train-disc") {
      result = cmd_train_disc(run, args);
    } else if (c == "finetune") {
      result = cmd_finetune(run, args, false);
    } else if (c == "finetune-ce") {
      result = cmd_finetune(run, args, true);
    } else if (c == "eval") {
      result = cmd_eval(run, args);
    } else if (c == "propcheck") {
      result = cmd_propcheck(run, args, pass);
    } else if (c == "gradcheck") {
      result = cmd_gradcheck(run, args, pass);
    } else if (c == "reproduce-table1") {
      result = cmd_reproduce(run, args);
    } else {
      throw std::invalid_argument("unknown command: " + c);
    }
    out << result.dump() << std::endl;
    if (!pass) return fail("check", "one or more checks failed", kExitRuntime);
    run.finish("ok");
    return kExitOk;
  } catch (const std::invalid_argument& e) {
    return fail("validation", e.what(), kExitValidation);
  } catch (const std::out_of_range& e) {
    return fail("validation", e.what(), kExitValidation);
  } catch (const NonFiniteError& e) {
    return fail("non_finite", e.what(), kExitRuntime);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), kExitRuntime);
  }
}

}  // namespace revkl
