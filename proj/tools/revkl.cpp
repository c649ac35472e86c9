#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "revkl/cli/commands.hpp"

namespace {

struct Spec {
  const char* name;
  const char* help;
};

constexpr Spec kCommands[] = {
    {"gen-data", "Build the trigram world and sample the train/valid/test corpus"},
    {"train", "Train the initial language model (--data)"},
    {"perturb", "Set one output bias of a language model (--model, --word or --rank with --data, --value)"},
    {"train-disc", "Train a discriminator against a frozen language model (--model, --data)"},
    {"finetune", "Fine-tune with the discriminator-estimated loss (--model, --disc or --uniform-ratio, --data)"},
    {"finetune-ce", "Continue training with cross-entropy at a fixed rate (--model, --data, --lr, --iterations)"},
    {"eval", "Perplexity and imbalance report (--data, --source model|oracle|uniform, --model, --split)"},
    {"propcheck", "Numerical checks of the fine-tuning loss around q = p_hat"},
    {"gradcheck", "Backpropagation against finite differences on a tiny network"},
    {"reproduce-table1", "Run the full perturbation experiment and write the report"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"revkl: reverse-KL fine-tuning of language models on a synthetic trigram world"};
  app.require_subcommand(1);
  app.set_version_flag("--version", revkl::kToolVersion);

  std::map<std::string, revkl::CommandArgs> parsed;
  std::string config, profile, out;
  std::uint64_t seed_world = 0, seed_run = 0;
  int threads = 0;

  for (const auto& spec : kCommands) {
    auto& a = parsed[spec.name];
    a.command = spec.name;
    CLI::App* sub = app.add_subcommand(spec.name, spec.help);
    sub->add_option("--config", config, "INI config file or a manifest.json")->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Output directory")->required();
    sub->add_option("--seed-world", seed_world, "World and corpus seed");
    sub->add_option("--seed-run", seed_run, "Seed for initialization and batch order");
    sub->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--profile", profile, "Default profile")->check(CLI::IsMember({"paper", "ci"}));
    sub->add_flag("--force", a.force, "Overwrite an existing run in --out");
    const std::string name = spec.name;
    if (name != "gen-data" && name != "propcheck" && name != "gradcheck" && name != "reproduce-table1") {
      sub->add_option("--data", a.data, "Directory written by gen-data");
    }
    if (name == "propcheck") {
      sub->add_option("--data", a.data, "Directory written by gen-data (trained sign check)");
      sub->add_option("--model", a.model, "Fine-tuned model for the trained sign check");
      sub->add_option("--q0", a.q0, "Frozen model for the trained sign check (default --model)");
      sub->add_option("--disc", a.disc, "Discriminator for the trained sign check");
    }
    if (name == "perturb" || name == "train-disc" || name == "finetune" || name == "finetune-ce" || name == "eval") {
      sub->add_option("--model", a.model, "Checkpoint");
    }
    if (name == "perturb") {
      sub->add_option("--word", a.word, "Word id to perturb");
      sub->add_option("--rank", a.rank, "Frequency rank of the word to perturb");
      sub->add_option("--value", a.value, "Bias value");
    }
    if (name == "finetune") {
      sub->add_option("--disc", a.disc, "Discriminator checkpoint");
      sub->add_flag("--uniform-ratio", a.uniform_ratio, "Use r = 0.5 instead of a discriminator");
    }
    if (name == "finetune" || name == "finetune-ce") {
      sub->add_option("--watch-word", a.watch_word, "Trace this word on its most probable validation contexts");
    }
    if (name == "finetune-ce") {
      sub->add_option("--lr", a.learning_rate, "Fixed learning rate");
      sub->add_option("--iterations", a.iterations, "Iteration budget");
    }
    if (name == "eval") {
      sub->add_option("--source", a.source, "model, oracle or uniform")
          ->check(CLI::IsMember({"model", "oracle", "uniform"}));
      sub->add_option("--split", a.split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
      sub->add_option("--q0", a.q0, "Frozen language model when --model is a discriminator");
      sub->add_option("--except-word", a.except_word, "Also report perplexity without this word");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << nlohmann::json{{"error", {{"kind", "validation"}, {"message", e.what()}}}}.dump() << std::endl;
    return revkl::kExitValidation;
  }

  for (CLI::App* sub : app.get_subcommands()) {
    revkl::CommandArgs& a = parsed.at(sub->get_name());
    a.out = out;
    if (!config.empty()) a.config = config;
    if (!profile.empty()) a.overrides.profile = profile;
    if (sub->count("--seed-world")) a.overrides.world_seed = seed_world;
    if (sub->count("--seed-run")) a.overrides.run_seed = seed_run;
    if (sub->count("--threads")) a.overrides.threads = threads;
    return revkl::execute(a, std::cout, std::cerr, std::cerr);
  }
  return revkl::kExitValidation;
}
