#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtmarl/common/error.hpp"
#include "mtmarl/harness/commands.hpp"
#include "mtmarl/harness/config.hpp"

namespace fs = std::filesystem;
using namespace mtmarl;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "Experiment config (JSON) or a run manifest.json")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", flags.seed, "Override run.seed");
  cmd->add_option("--out", flags.out, "Output directory (default: run.output_dir)");
}

harness::ExperimentConfig resolve(const CommonFlags& flags, fs::path& out) {
  auto config = harness::load_config_or_manifest(flags.config);
  if (flags.seed) config.run.seed = *flags.seed;
  out = flags.out.empty() ? fs::path(config.run.output_dir) : fs::path(flags.out);
  config.validate();
  return config;
}

void report(const harness::CommandResult& r) {
  std::cout << "metrics: " << r.metrics_csv.string() << '\n';
  if (!r.manifest.empty()) std::cout << "manifest: " << r.manifest.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task multi-agent RL: Dec-HDRQN specialization and policy distillation"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  bool train_resume = false;
  std::uint64_t stop_after = 0;
  auto* train = app.add_subcommand("train-single", "Train one Dec-HDRQN team per configured task");
  add_common(train, train_flags);
  train->add_flag("--resume", train_resume, "Continue from the saved run state in --out");
  train->add_option("--stop-after", stop_after,
                    "Stop each task at the first evaluation epoch >= N (resumable)");

  CommonFlags distill_flags;
  std::string specialists;
  auto* distill = app.add_subcommand("distill", "Distill saved specialists into one network per agent");
  add_common(distill, distill_flags);
  distill->add_option("--from", specialists, "Run directory of a train-single run")
      ->required()
      ->check(CLI::ExistingDirectory);

  CommonFlags base_flags;
  bool base_resume = false;
  auto* baseline = app.add_subcommand("multi-baseline", "Train Multi-HDRQN over all tasks at once");
  add_common(baseline, base_flags);
  baseline->add_flag("--resume", base_resume, "Continue from the saved run state in --out");

  CommonFlags sweep_flags;
  std::string parameter;
  std::vector<double> values;
  auto* sweep = app.add_subcommand("sweep", "Repeat train-single over values of one hyperparameter");
  add_common(sweep, sweep_flags);
  sweep->add_option("--parameter", parameter, "beta or tracelength (default: sweep.parameter)");
  sweep->add_option("--values", values, "Values to try (default: sweep.values)")->delimiter(',');

  CommonFlags eval_flags;
  std::string run_dir;
  std::string policy = "auto";
  auto* evaluate = app.add_subcommand("evaluate", "Greedy evaluation of saved checkpoints");
  add_common(evaluate, eval_flags);
  evaluate->add_option("--from", run_dir, "Run directory holding checkpoints")
      ->required()
      ->check(CLI::ExistingDirectory);
  evaluate->add_option("--policy", policy, "auto, specialist, distilled or baseline");

  CLI11_PARSE(app, argc, argv);

  try {
    fs::path out;
    if (*train) {
      const auto config = resolve(train_flags, out);
      report(harness::cmd_train_single(config, out, train_resume, stop_after));
    } else if (*distill) {
      const auto config = resolve(distill_flags, out);
      report(harness::cmd_distill(config, out, specialists));
    } else if (*baseline) {
      const auto config = resolve(base_flags, out);
      report(harness::cmd_multi_baseline(config, out, base_resume));
    } else if (*sweep) {
      const auto config = resolve(sweep_flags, out);
      const std::string p = parameter.empty() ? config.sweep.parameter : parameter;
      const auto v = values.empty() ? config.sweep.values : values;
      if (p.empty()) throw ConfigError("sweep needs --parameter or sweep.parameter in the config");
      report(harness::cmd_sweep(config, out, p, v));
    } else if (*evaluate) {
      const auto config = resolve(eval_flags, out);
      report(harness::cmd_evaluate(config, out, run_dir, harness::policy_from_string(policy)));
    }
  } catch (const std::exception& e) {
    std::cerr << "mtmarl: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
