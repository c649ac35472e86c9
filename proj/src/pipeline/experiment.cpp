#include "revkl/pipeline/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "revkl/binio.hpp"
#include "revkl/eval/eval.hpp"
#include "revkl/nncore/checkpoint.hpp"

namespace revkl {

ExperimentConfig paper_profile() { return {}; }

ExperimentConfig ci_profile() {
  ExperimentConfig c;
  c.profile = "ci";
  c.vocab_size = 200;
  c.splits = {20'000, 2'000, 2'000};
  c.embed = 64;
  c.hidden = 64;
  c.lm.batch_size = 64;
  c.lm.max_epochs = 40;
  c.disc = c.lm;
  c.disc.batch_size = 16;
  c.disc.learning_rate = 20.0;
  c.disc.decay = 0.5;
  c.disc.max_epochs = 10;
  c.finetune = c.lm;
  c.finetune.max_epochs = 3;
  c.finetune_ce.batch_size = 64;
  return c;
}

ExperimentConfig profile_config(const std::string& name) {
  if (name == "paper") return paper_profile();
  if (name == "ci") return ci_profile();
  throw std::invalid_argument("unknown profile: " + name + " (expected paper or ci)");
}

namespace {

void validate_phase(const PhaseSettings& p, const std::string& name) {
  auto fail = [&](const std::string& what) { throw std::invalid_argument(name + ": " + what); };
  if (!(p.learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(p.clip >= 0.0)) fail("clip must be non-negative");
  if (p.batch_size == 0) fail("batch_size must be positive");
  if (!(p.decay > 0.0 && p.decay < 1.0)) fail("decay must lie in (0, 1)");
  if (!(p.min_improvement >= 0.0)) fail("min_improvement must be non-negative");
  if (p.max_epochs < 0) fail("max_epochs must be non-negative");
  if (!(p.stop_learning_rate > 0.0)) fail("stop_learning_rate must be positive");
}

}  // namespace

void validate(const ExperimentConfig& c) {
  if (c.vocab_size < 2 || c.vocab_size > kMaxVocab) {
    throw std::invalid_argument("world.vocab_size must lie in [2, " + std::to_string(kMaxVocab) + "]");
  }
  if (c.vocab_size <= static_cast<int>(WordClassPartition::kFrequent + WordClassPartition::kAlmostFrequent)) {
    throw std::invalid_argument("world.vocab_size must exceed 150 so every frequency class is non-empty");
  }
  if (!(c.gamma > 0.0)) throw std::invalid_argument("world.gamma must be positive");
  if (c.start_steps < 0) throw std::invalid_argument("world.start_steps must be non-negative");
  if (c.splits.train == 0 || c.splits.valid == 0 || c.splits.test == 0) {
    throw std::invalid_argument("corpus split sizes must be positive");
  }
  if (c.embed < 1 || c.hidden < 1 || c.layers < 1) throw std::invalid_argument("model sizes must be positive");
  if (!(c.init_range > 0.0)) throw std::invalid_argument("model.init_range must be positive");
  validate_phase(c.lm, "lm");
  validate_phase(c.disc, "disc");
  validate_phase(c.finetune, "finetune");
  validate_phase(c.finetune_ce, "finetune_ce");
  if (c.ce_learning_rates.empty()) throw std::invalid_argument("finetune_ce.learning_rates must not be empty");
  for (double lr : c.ce_learning_rates) {
    if (!(lr > 0.0)) throw std::invalid_argument("finetune_ce.learning_rates must be positive");
  }
  if (c.chosen_rank < 1 || c.chosen_rank > c.vocab_size) {
    throw std::invalid_argument("experiment.chosen_rank must lie in [1, vocab_size]");
  }
  if (!std::isfinite(c.perturb_value)) throw std::invalid_argument("experiment.perturb_value must be finite");
  if (c.watched_contexts < 1) throw std::invalid_argument("experiment.watched_contexts must be positive");
  if (c.threads < 1) throw std::invalid_argument("run.threads must be positive");
}

TrainConfig train_config(const ExperimentConfig& c, Phase phase) {
  const PhaseSettings& p = phase == Phase::kLm         ? c.lm
                           : phase == Phase::kDisc     ? c.disc
                           : phase == Phase::kFinetune ? c.finetune
                                                       : c.finetune_ce;
  TrainConfig t;
  t.phase = phase;
  t.learning_rate = p.learning_rate;
  t.clip = p.clip;
  t.batch_size = p.batch_size;
  t.decay = p.decay;
  t.min_improvement = p.min_improvement;
  t.max_epochs = p.max_epochs;
  t.stop_learning_rate = p.stop_learning_rate;
  t.plateau = p.plateau;
  t.run_seed = c.run_seed;
  t.shape = c.shape();
  t.init = c.init();
  return t;
}

TrigramWorld make_world(const ExperimentConfig& c, const std::filesystem::path& cache_dir) {
  TrigramWorld world(c.vocab_size, c.world_seed, c.gamma, c.start_steps);
  const auto cache = cache_dir.empty() ? std::filesystem::path{} : cache_dir / "start_marginal.bin";
  if (!cache.empty() && std::filesystem::exists(cache)) {
    try {
      world.load_start_marginal(cache);
      return world;
    } catch (const std::runtime_error&) {
      // Stale cache for a different world; rebuild below.
    }
  }
  world.build_start_marginal(c.threads);
  if (!cache.empty()) world.save_start_marginal(cache);
  return world;
}

std::vector<WatchedPair> select_watched(const TrigramWorld& world, const std::vector<Sentence>& sentences, WordId word,
                                        int count) {
  struct Candidate {
    double p;
    WatchedPair pair;
  };
  std::vector<Candidate> candidates;
  std::vector<double> row(world.vocab_size());
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    for (int t = 1; t < kSentenceTokens; ++t) {
      if (sentences[s][t] != word) continue;
      world.true_conditional(std::span<const WordId>(sentences[s].data(), t), row);
      WatchedPair pair;
      pair.context_id = static_cast<std::int64_t>(s) * kSentenceWords + (t - 1);
      pair.sentence = sentences[s];
      pair.position = t;
      pair.word = word;
      candidates.push_back({row[word - 1], pair});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.p > b.p; });
  std::vector<WatchedPair> out;
  std::vector<std::vector<WordId>> seen;
  for (const auto& c : candidates) {
    if (static_cast<int>(out.size()) == count) break;
    std::vector<WordId> prefix(c.pair.sentence.begin(), c.pair.sentence.begin() + c.pair.position);
    if (std::find(seen.begin(), seen.end(), prefix) != seen.end()) continue;
    seen.push_back(std::move(prefix));
    out.push_back(c.pair);
  }
  return out;
}

double oscillation_amplitude(const RunRecord& record, std::int64_t context_id, WordId word, double initial) {
  double previous = std::log(initial);
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& t : record.traces) {
    if (t.context_id != context_id || t.word != word) continue;
    const double current = std::log(t.probability);
    total += std::abs(current - previous);
    previous = current;
    ++steps;
  }
  return steps == 0 ? 0.0 : total / static_cast<double>(steps);
}

namespace {

std::string format_number(double x) {
  std::ostringstream out;
  out << x;
  return out.str();
}

double geometric_mean_ratio(const std::vector<double>& after, const std::vector<double>& before, std::size_t count) {
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) sum += std::log(after[i]) - std::log(before[i]);
  return std::exp(sum / static_cast<double>(count));
}

nlohmann::json phase_summary(const RunRecord& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    nlohmann::json row = {{"epoch", e.epoch},           {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                          {"val_first", e.val_first},   {"val_second", e.val_second}, {"lr", e.learning_rate},
                          {"iterations", e.iterations}};
    if (r.phase != Phase::kDisc) row["val_ppl"] = e.val_ppl;
    epochs.push_back(row);
  }
  return {{"phase", phase_name(r.phase)},
          {"iterations", r.iterations},
          {"best_epoch", r.best_epoch},
          {"best_metric", r.best_metric},
          {"epochs", epochs}};
}

nlohmann::json row_json(const std::string& name, const EvalReport& report) {
  nlohmann::json j = to_json(report);
  j["row"] = name;
  return j;
}

nlohmann::json config_json(const ExperimentConfig& c) {
  auto phase = [](const PhaseSettings& p) {
    return nlohmann::json{{"learning_rate", p.learning_rate}, {"clip", p.clip},
                          {"batch_size", p.batch_size},       {"decay", p.decay},
                          {"min_improvement", p.min_improvement}, {"max_epochs", p.max_epochs},
                          {"stop_learning_rate", p.stop_learning_rate}, {"plateau", p.plateau}};
  };
  return {{"profile", c.profile},
          {"world", {{"vocab_size", c.vocab_size}, {"gamma", c.gamma}, {"start_steps", c.start_steps}, {"seed", c.world_seed}}},
          {"corpus", {{"train", c.splits.train}, {"valid", c.splits.valid}, {"test", c.splits.test}}},
          {"model", {{"embed", c.embed}, {"hidden", c.hidden}, {"layers", c.layers}, {"init_range", c.init_range},
                     {"forget_bias", c.forget_bias}}},
          {"lm", phase(c.lm)},
          {"disc", phase(c.disc)},
          {"finetune", phase(c.finetune)},
          {"finetune_ce", phase(c.finetune_ce)},
          {"ce_learning_rates", c.ce_learning_rates},
          {"experiment", {{"chosen_rank", c.chosen_rank}, {"perturb_value", c.perturb_value},
                          {"watched_contexts", c.watched_contexts}}},
          {"run_seed", c.run_seed}};
}

}  // namespace

nlohmann::json run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                              const ProgressFn& progress) {
  validate(config);
  Eigen::setNbThreads(config.threads);
  std::filesystem::create_directories(out_dir);
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  const EpochCallback on_epoch = [&](Phase phase, const EpochRecord& e) {
    std::ostringstream msg;
    msg << phase_name(phase) << " epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss;
    if (phase != Phase::kDisc) msg << " val_ppl " << e.val_ppl;
    msg << " lr " << e.learning_rate;
    say(msg.str());
  };

  say("building world");
  const TrigramWorld world = make_world(config, out_dir / "world");
  say("sampling corpus");
  const TokenCorpus corpus = sample_corpus(world, config.splits, config.corpus_seed());
  save_corpus(corpus, out_dir / "corpus");
  const WordClassPartition partition = word_stats(corpus);
  const FrequencyShares shares = frequency_shares(corpus, partition);
  const auto& test = corpus.test;
  const auto true_log = OracleSource(world).target_log_probs(test);

  auto report_of = [&](const ModelParams& params) {
    return imbalance_report(ModelSource(params).target_log_probs(test), true_log, test, partition);
  };
  auto save_phase = [&](const std::string& dir, const TrainResult& result, HeadType head) {
    const auto path = out_dir / dir;
    std::filesystem::create_directories(path);
    save_checkpoint(path / "checkpoint.bin", {result.params, head, {{"phase", phase_name(result.record.phase)}}});
    write_epoch_csv(path / "epochs.csv", result.record);
    if (!result.record.traces.empty()) write_trace_csv(path / "trace.csv", result.record);
  };
  auto with_callback = [&](TrainConfig t) {
    t.on_epoch = on_epoch;
    return t;
  };

  // Initial model.
  say("training language model");
  const TrainResult lm = train_lm(corpus, with_callback(train_config(config, Phase::kLm)));
  save_phase("lm", lm, HeadType::kLanguageModel);

  // Perturbation and watched pairs.
  const WordId chosen = partition.word_at_rank(config.chosen_rank);
  const ModelParams perturbed = perturb_bias(lm.params, chosen, config.perturb_value);
  {
    const auto dir = out_dir / "perturbed";
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "checkpoint.bin",
                    {perturbed, HeadType::kLanguageModel, {{"chosen_word", chosen}, {"value", config.perturb_value}}});
  }
  std::vector<WatchedPair> watched = select_watched(world, corpus.valid, chosen, config.watched_contexts);
  if (watched.empty()) throw std::runtime_error("chosen word never occurs in the validation split");
  const std::size_t chosen_count = watched.size();
  const WordId frequent_word = partition.word_at_rank(1);
  const auto frequent_pairs = select_watched(world, corpus.valid, frequent_word, 1);
  watched.insert(watched.end(), frequent_pairs.begin(), frequent_pairs.end());

  // Discriminators.
  say("training discriminator against the initial model");
  const TrainResult disc_initial = train_discriminator(lm.params, corpus, with_callback(train_config(config, Phase::kDisc)));
  save_phase("disc_initial", disc_initial, HeadType::kDiscriminator);
  say("training discriminator against the perturbed model");
  const TrainResult disc_perturbed =
      train_discriminator(perturbed, corpus, with_callback(train_config(config, Phase::kDisc)));
  save_phase("disc_perturbed", disc_perturbed, HeadType::kDiscriminator);

  // Fine-tuning arms.
  say("fine-tuning the initial model");
  const TrainResult ft_initial =
      finetune(lm.params, &disc_initial.params, corpus, with_callback(train_config(config, Phase::kFinetune)));
  save_phase("ft_initial", ft_initial, HeadType::kLanguageModel);

  TrainConfig ft_cfg = with_callback(train_config(config, Phase::kFinetune));
  ft_cfg.watched = watched;
  say("fine-tuning the perturbed model");
  const TrainResult ft_perturbed = finetune(perturbed, &disc_perturbed.params, corpus, ft_cfg);
  save_phase("ft_perturbed", ft_perturbed, HeadType::kLanguageModel);

  TrainConfig uniform_cfg = ft_cfg;
  uniform_cfg.uniform_ratio = true;
  say("fine-tuning the perturbed model with r = 0.5");
  const TrainResult ft_uniform = finetune(perturbed, nullptr, corpus, uniform_cfg);
  save_phase("ft_uniform", ft_uniform, HeadType::kLanguageModel);

  std::vector<std::pair<double, TrainResult>> ce_arms;
  for (double lr : config.ce_learning_rates) {
    TrainConfig ce_cfg = with_callback(train_config(config, Phase::kFinetuneCe));
    ce_cfg.learning_rate = lr;
    ce_cfg.max_iterations = std::max<std::int64_t>(ft_perturbed.record.iterations, 1);
    ce_cfg.watched = watched;
    say("fine-tuning the perturbed model with CE at lr " + format_number(lr));
    ce_arms.emplace_back(lr, finetune_ce(perturbed, corpus, ce_cfg));
    save_phase("ce_lr" + format_number(lr), ce_arms.back().second, HeadType::kLanguageModel);
  }

  // Reports.
  say("evaluating");
  const EvalReport true_report = imbalance_report(true_log, true_log, test, partition);
  const EvalReport initial_report = report_of(lm.params);
  const EvalReport initial_ftd_report = report_of(ft_initial.params);
  const EvalReport perturbed_report = report_of(perturbed);
  const EvalReport perturbed_ftd_report = report_of(ft_perturbed.params);
  const EvalReport uniform_report = report_of(ft_uniform.params);

  nlohmann::json report;
  report["config"] = config_json(config);
  report["corpus"] = {{"top50_share", shares.frequent},
                      {"next100_share", shares.almost_frequent},
                      {"rest_share", shares.rest},
                      {"chosen_word", chosen},
                      {"chosen_rank", config.chosen_rank},
                      {"chosen_train_count", corpus.frequency[chosen]}};
  report["table"] = nlohmann::json::array({row_json("true", true_report), row_json("initial", initial_report),
                                           row_json("initial_ftd", initial_ftd_report),
                                           row_json("perturbed", perturbed_report),
                                           row_json("perturbed_ftd", perturbed_ftd_report)});
  report["ablation"] = {{"uniform_ratio", row_json("perturbed_ftd_uniform_ratio", uniform_report)}};

  const OracleSource oracle(world);
  const auto q_initial = watched_probabilities(lm.params, watched);
  const auto q_perturbed = watched_probabilities(perturbed, watched);
  const auto q_ftd = watched_probabilities(ft_perturbed.params, watched);
  const auto q_uniform = watched_probabilities(ft_uniform.params, watched);
  nlohmann::json watched_json = nlohmann::json::array();
  for (std::size_t i = 0; i < watched.size(); ++i) {
    const auto& w = watched[i];
    watched_json.push_back({{"context_id", w.context_id},
                            {"position", w.position},
                            {"word", w.word},
                            {"kind", i < chosen_count ? "chosen" : "frequent"},
                            {"true_p", oracle.row(w.sentence, w.position)[w.word - 1]},
                            {"q_initial", q_initial[i]},
                            {"q_perturbed", q_perturbed[i]},
                            {"q_perturbed_ftd", q_ftd[i]},
                            {"q_uniform_ratio", q_uniform[i]}});
  }
  nlohmann::json ce_json = nlohmann::json::array();
  nlohmann::json ce_osc = nlohmann::json::array();
  for (const auto& [lr, arm] : ce_arms) {
    const auto q = watched_probabilities(arm.params, watched);
    const auto final_q = std::vector<double>(q.begin(), q.end());
    ce_json.push_back({{"learning_rate", lr},
                       {"iterations", arm.record.iterations},
                       {"lift", geometric_mean_ratio(final_q, q_perturbed, chosen_count)},
                       {"except_chosen_ppl", except_word_perplexity(ModelSource(arm.params), test, chosen)},
                       {"report", to_json(report_of(arm.params))}});
    if (!frequent_pairs.empty()) {
      const auto& f = frequent_pairs.front();
      ce_osc.push_back({{"learning_rate", lr},
                        {"amplitude", oscillation_amplitude(arm.record, f.context_id, f.word,
                                                            arm.record.initial_probabilities.back())}});
    }
  }
  report["perturbation"] = {
      {"watched", watched_json},
      {"iterations", ft_perturbed.record.iterations},
      {"lift_disc", geometric_mean_ratio(q_ftd, q_perturbed, chosen_count)},
      {"lift_uniform_ratio", geometric_mean_ratio(q_uniform, q_perturbed, chosen_count)},
      {"ce_arms", ce_json},
      {"except_chosen_ppl",
       {{"initial", except_word_perplexity(ModelSource(lm.params), test, chosen)},
        {"perturbed", except_word_perplexity(ModelSource(perturbed), test, chosen)},
        {"perturbed_ftd", except_word_perplexity(ModelSource(ft_perturbed.params), test, chosen)}}}};

  auto disc_json = [&](const TrainResult& d, const ModelParams& q0) {
    const LossValue test_loss = disc_report(d.params, q0, test);
    return nlohmann::json{{"initial_val_loss", d.record.epochs.front().val_loss},
                          {"best_val_loss", d.record.best_metric},
                          {"best_epoch", d.record.best_epoch},
                          {"test_loss", test_loss.total},
                          {"test_dq_term", test_loss.first},
                          {"test_dp_term", test_loss.second}};
  };
  report["discriminators"] = {{"initial", disc_json(disc_initial, lm.params)},
                              {"perturbed", disc_json(disc_perturbed, perturbed)},
                              {"ln4", std::log(4.0)}};
  if (!frequent_pairs.empty()) {
    const auto& f = frequent_pairs.front();
    report["oscillation"] = {
        {"word", f.word},
        {"context_id", f.context_id},
        {"disc_ft", oscillation_amplitude(ft_perturbed.record, f.context_id, f.word,
                                          ft_perturbed.record.initial_probabilities.back())},
        {"ce", ce_osc}};
  }
  report["training"] = {{"lm", phase_summary(lm.record)},
                        {"disc_initial", phase_summary(disc_initial.record)},
                        {"disc_perturbed", phase_summary(disc_perturbed.record)},
                        {"ft_initial", phase_summary(ft_initial.record)},
                        {"ft_perturbed", phase_summary(ft_perturbed.record)},
                        {"ft_uniform", phase_summary(ft_uniform.record)}};

  write_text_file(out_dir / "report.json", report.dump(2) + "\n");
  write_text_file(out_dir / "table1.csv", table_csv(report));
  return report;
}

std::string table_csv(const nlohmann::json& report) {
  std::ostringstream out;
  out.precision(17);
  out << "row," << csv_header() << '\n';
  auto emit = [&](const nlohmann::json& row) {
    out << row.at("row").get<std::string>() << ',' << row.at("test_ppl").get<double>() << ','
        << row.at("freq_ppl").get<double>() << ',' << row.at("rare_ppl").get<double>() << ','
        << row.at("ratio").get<double>() << ',' << row.at("logdiff_mean").get<double>() << ','
        << row.at("logdiff_std").get<double>() << '\n';
  };
  for (const auto& row : report.at("table")) emit(row);
  if (report.contains("ablation")) emit(report.at("ablation").at("uniform_ratio"));
  return out.str();
}

}  // namespace revkl
