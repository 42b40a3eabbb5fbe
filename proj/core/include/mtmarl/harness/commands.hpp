#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mtmarl/harness/config.hpp"

namespace mtmarl::harness {

inline constexpr int kMetricsSchemaVersion = 1;
inline constexpr const char* kMetricsHeader = "epoch,task_id,mean_return,std_return,mean_Q0,loss";
inline constexpr const char* kSweepHeader =
    "parameter,value,epoch,task_id,mean_return,std_return,mean_Q0,loss";
// task_id used for rows that average over every task of the set (V-bar).
inline constexpr int kAllTasks = -1;

// One evaluation epoch of one task. Returns are discounted; loss is the mean
// training loss since the previous evaluation (nan when nothing trained).
struct MetricRow {
  std::uint64_t epoch = 0;
  int task_id = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_q0 = 0.0;
  double loss = 0.0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

std::string format_row(const MetricRow& row);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

struct CommandResult {
  std::vector<MetricRow> rows;
  std::filesystem::path metrics_csv;
  std::filesystem::path manifest;
};

// Fixed file layout under a run directory.
std::filesystem::path specialist_checkpoint(const std::filesystem::path& run_dir, int task_id,
                                            int agent);
std::filesystem::path distilled_checkpoint(const std::filesystem::path& run_dir, int agent);
std::filesystem::path baseline_checkpoint(const std::filesystem::path& run_dir, int agent);

// Phase I: Dec-HDRQN per task, one network per (agent, task). With `resume`,
// continues each task from its last saved evaluation epoch. A nonzero
// `stop_after` ends each task at the first evaluation epoch >= stop_after,
// leaving a resumable run.
CommandResult cmd_train_single(const ExperimentConfig& config, const std::filesystem::path& out,
                               bool resume = false, std::uint64_t stop_after = 0);

// Phase II: collection with the specialists found under `specialists_dir`,
// then distillation into one network per agent.
CommandResult cmd_distill(const ExperimentConfig& config, const std::filesystem::path& out,
                          const std::filesystem::path& specialists_dir);

// One Dec-HDRQN per agent trained on a task drawn uniformly per episode,
// with one replay pool per task.
CommandResult cmd_multi_baseline(const ExperimentConfig& config, const std::filesystem::path& out,
                                 bool resume = false);

// Independent train-single runs, one per value, under out/<parameter>_<value>,
// plus a merged sweep.csv.
CommandResult cmd_sweep(const ExperimentConfig& config, const std::filesystem::path& out,
                        const std::string& parameter, const std::vector<double>& values);

enum class PolicyKind { kAuto, kSpecialist, kDistilled, kBaseline };
PolicyKind policy_from_string(const std::string& name);

// Greedy evaluation of saved checkpoints from `run_dir` on the configured
// tasks; writes out/eval.csv.
CommandResult cmd_evaluate(const ExperimentConfig& config, const std::filesystem::path& out,
                           const std::filesystem::path& run_dir, PolicyKind policy);

// Reads either a plain config or a run manifest (whose "config" member is
// used).
ExperimentConfig load_config_or_manifest(const std::filesystem::path& path);

}  // namespace mtmarl::harness
