// Acceptance run: one PASS/FAIL line per criterion, exit code 1 if any fails.
// Usage: revkl_acceptance <work-dir>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "revkl/binio.hpp"
#include "revkl/cli/commands.hpp"
#include "revkl/corpus/corpus.hpp"
#include "revkl/eval/eval.hpp"
#include "revkl/objectives/head_gradcheck.hpp"
#include "revkl/pipeline/experiment.hpp"
#include "revkl/propcheck/propcheck.hpp"

namespace fs = std::filesystem;
using namespace revkl;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [FAILED]");
  }
};

int failures = 0;

void report(int number, const std::string& title, Verdict& v) {
  if (!v.pass) ++failures;
  std::cout << "criterion " << number << " (" << title << "): " << (v.pass ? "PASS" : "FAIL") << " - "
            << v.detail.str() << std::endl;
}

std::string num(double x) {
  std::ostringstream out;
  out.precision(6);
  out << x;
  return out.str();
}

bool within(double value, double target, double relative) {
  return std::abs(value - target) <= relative * target;
}

const nlohmann::json& table_row(const nlohmann::json& report, const std::string& name) {
  for (const auto& row : report.at("table")) {
    if (row.at("row") == name) return row;
  }
  throw std::runtime_error("report has no row " + name);
}

// Runs reproduce-table1 with the CI profile through the command layer.
int reproduce(const fs::path& out) {
  CommandArgs args;
  args.command = "reproduce-table1";
  args.out = out;
  args.overrides.profile = "ci";
  args.force = true;
  std::ostringstream sink;
  return execute(args, sink, std::cerr, std::cerr);
}

void gradients() {
  Verdict v;
  const auto start = Clock::now();
  for (const auto& r : check_head_gradients(1)) {
    v.require(r.comparison.max_relative_error < 1e-4,
              r.head + " max rel err " + num(r.comparison.max_relative_error));
  }
  const double t = seconds_since(start);
  v.require(t < 60.0, "runtime " + num(t) + " s");
  report(1, "gradient correctness", v);
}

void stationarity_suite() {
  Verdict v;
  const auto start = Clock::now();
  const PropcheckOutput out = run_propcheck(1);
  for (const auto& [name, check] : out.summary.items()) {
    if (check.is_object() && check.contains("pass")) v.require(check.at("pass").get<bool>(), name);
  }
  v.require(out.pass, "all checks");
  const double t = seconds_since(start);
  v.require(t < 60.0, "runtime " + num(t) + " s");
  report(2, "fine-tuning loss properties", v);
}

void corpus_and_oracle(const fs::path& work) {
  // CI profile timing first, then the default corpus.
  const auto ci_start = Clock::now();
  const ExperimentConfig ci = ci_profile();
  const TrigramWorld ci_world = make_world(ci, work / "ci_world");
  const TokenCorpus ci_corpus = sample_corpus(ci_world, ci.splits, ci.corpus_seed());
  const double ci_time = seconds_since(ci_start);

  const auto start = Clock::now();
  const ExperimentConfig config = paper_profile();
  fs::remove_all(work / "paper_world");
  const TrigramWorld world = make_world(config, work / "paper_world");
  const TokenCorpus corpus = sample_corpus(world, config.splits, config.corpus_seed());
  const WordClassPartition partition = word_stats(corpus);
  const FrequencyShares shares = frequency_shares(corpus, partition);
  const double t = seconds_since(start);

  Verdict corpus_v;
  corpus_v.require(std::abs(shares.frequent - 0.705) <= 0.02, "top-50 share " + num(100.0 * shares.frequent) + "%");
  corpus_v.require(std::abs(shares.almost_frequent - 0.147) <= 0.02,
                   "next-100 share " + num(100.0 * shares.almost_frequent) + "%");
  corpus_v.require(corpus.train.size() == 80'000, "train sentences " + std::to_string(corpus.train.size()));
  corpus_v.require(t < 1800.0, "runtime " + num(t) + " s");
  corpus_v.require(ci_time < 120.0, "CI profile runtime " + num(ci_time) + " s");
  report(3, "corpus statistics", corpus_v);

  Verdict oracle_v;
  const OracleSource oracle(world);
  const EvalReport r = imbalance_report(oracle, world, corpus.test, partition);
  oracle_v.require(within(r.test_ppl, 78.14, 0.20), "oracle test ppl " + num(r.test_ppl));
  oracle_v.require(within(r.ratio, 25.8, 0.25), "oracle ratio " + num(r.ratio));
  oracle_v.require(r.logdiff_mean == 0.0 && r.logdiff_std == 0.0, "log q - log p mean " + num(r.logdiff_mean) +
                                                                      " std " + num(r.logdiff_std));
  report(4, "true-distribution report", oracle_v);
}

void pipeline(const fs::path& work) {
  const auto start = Clock::now();
  const int code = reproduce(work / "run_a");
  const double t = seconds_since(start);
  if (code != kExitOk) {
    for (int c : {5, 6, 7, 8}) {
      Verdict v;
      v.require(false, "reproduce-table1 exited with " + std::to_string(code));
      report(c, "pipeline", v);
    }
    return;
  }
  const auto rep = nlohmann::json::parse(read_text_file(work / "run_a" / "report.json"));
  const auto& truth = table_row(rep, "true");
  const auto& initial = table_row(rep, "initial");
  const auto& initial_ftd = table_row(rep, "initial_ftd");
  const auto& perturbed = table_row(rep, "perturbed");
  const auto& perturbed_ftd = table_row(rep, "perturbed_ftd");
  auto val = [](const nlohmann::json& row, const char* key) { return row.at(key).get<double>(); };

  Verdict orderings;
  for (const auto* row : {&initial, &initial_ftd, &perturbed, &perturbed_ftd}) {
    orderings.require(val(*row, "ratio") > val(truth, "ratio"),
                      row->at("row").get<std::string>() + " ratio " + num(val(*row, "ratio")) + " > oracle " +
                          num(val(truth, "ratio")));
  }
  orderings.require(val(perturbed, "logdiff_std") > val(initial, "logdiff_std"),
                    "std perturbed " + num(val(perturbed, "logdiff_std")) + " > initial " +
                        num(val(initial, "logdiff_std")));
  orderings.require(val(perturbed, "test_ppl") > val(initial, "test_ppl"),
                    "ppl perturbed " + num(val(perturbed, "test_ppl")) + " > initial " +
                        num(val(initial, "test_ppl")));
  orderings.require(val(perturbed_ftd, "test_ppl") < val(perturbed, "test_ppl"),
                    "ppl after fine-tuning " + num(val(perturbed_ftd, "test_ppl")));
  orderings.require(val(perturbed_ftd, "ratio") < val(perturbed, "ratio"),
                    "ratio after fine-tuning " + num(val(perturbed_ftd, "ratio")) + " < " +
                        num(val(perturbed, "ratio")));
  const double initial_shift = std::abs(val(initial_ftd, "test_ppl") - val(initial, "test_ppl"));
  orderings.require(initial_shift < 0.2, "initial model fine-tuning ppl change " + num(initial_shift));
  orderings.require(t < 1200.0, "CI pipeline runtime " + num(t) + " s");
  report(5, "perplexity and imbalance orderings", orderings);

  Verdict recovery;
  const auto& pert = rep.at("perturbation");
  const double lift = pert.at("lift_disc").get<double>();
  recovery.require(lift >= 100.0, "chosen-word lift under discriminator fine-tuning " + num(lift) + "x");
  const auto& except = pert.at("except_chosen_ppl");
  const double before = except.at("perturbed").get<double>();
  const double after = except.at("perturbed_ftd").get<double>();
  const double change = std::abs(after - before) / before;
  recovery.require(change < 0.005, "except-chosen ppl change " + num(100.0 * change) + "%");
  bool found_small = false;
  for (const auto& arm : pert.at("ce_arms")) {
    if (std::abs(arm.at("learning_rate").get<double>() - 0.01) > 1e-12) continue;
    found_small = true;
    const double ce_lift = arm.at("lift").get<double>();
    recovery.require(ce_lift < 10.0, "CE lr 0.01 lift " + num(ce_lift) + "x over " +
                                         std::to_string(arm.at("iterations").get<long>()) + " iterations");
  }
  recovery.require(found_small, "CE arm at lr 0.01 present");
  report(6, "perturbation recovery", recovery);

  Verdict bound;
  const double ln4 = std::log(4.0);
  for (const char* which : {"initial", "perturbed"}) {
    const auto& d = rep.at("discriminators").at(which);
    const double start_loss = d.at("initial_val_loss").get<double>();
    const double best = d.at("best_val_loss").get<double>();
    bound.require(std::abs(start_loss - ln4) <= 1e-3, std::string(which) + " start " + num(start_loss));
    bound.require(best < ln4, std::string(which) + " best " + num(best) + " < ln4");
  }
  report(7, "discriminator bound", bound);

  Verdict ablation;
  const double uniform_ppl = val(rep.at("ablation").at("uniform_ratio"), "test_ppl");
  const double gain_disc = val(perturbed, "test_ppl") - val(perturbed_ftd, "test_ppl");
  const double gain_uniform = val(perturbed, "test_ppl") - uniform_ppl;
  ablation.require(gain_uniform < gain_disc,
                   "ppl gain r=0.5 " + num(gain_uniform) + " < trained discriminator " + num(gain_disc));
  report(8, "ablation ordering", ablation);
}

void determinism(const fs::path& work) {
  Verdict v;
  const int code = reproduce(work / "run_b");
  v.require(code == kExitOk, "second run exit code " + std::to_string(code));
  if (code == kExitOk && fs::exists(work / "run_a" / "report.json")) {
    const bool same = read_text_file(work / "run_a" / "report.json") == read_text_file(work / "run_b" / "report.json");
    v.require(same, "report.json byte-identical");
    const bool same_table =
        read_text_file(work / "run_a" / "table1.csv") == read_text_file(work / "run_b" / "table1.csv");
    v.require(same_table, "table1.csv byte-identical");
  }
  report(9, "determinism", v);
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "revkl_acceptance";
  fs::create_directories(work);
  const std::vector<std::function<void()>> steps{
      gradients, stationarity_suite, [&] { corpus_and_oracle(work); }, [&] { pipeline(work); },
      [&] { determinism(work); }};
  for (const auto& step : steps) {
    try {
      step();
    } catch (const std::exception& e) {
      ++failures;
      std::cout << "acceptance step aborted: " << e.what() << std::endl;
    }
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
