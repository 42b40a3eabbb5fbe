#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtmarl/distill/distiller.hpp"
#include "mtmarl/env/gridworld.hpp"
#include "mtmarl/learner/hdrqn.hpp"
#include "mtmarl/nn/network.hpp"

namespace mtmarl::harness {

struct NetworkConfig {
  std::vector<std::size_t> mlp_pre{32, 32};
  std::size_t lstm_cells = 64;
  std::vector<std::size_t> mlp_post{32, 32};
};

struct DistillRunConfig {
  distill::DistillConfig params;
  std::size_t iterations = 20000;
  // Episodes kept per task store; 0 keeps every collected episode.
  std::size_t regression_capacity = 0;
};

struct RunConfig {
  std::uint64_t seed = 1;
  // Training episodes per task (one epoch = one training episode).
  std::size_t episodes = 20000;
  std::size_t eval_every = 1000;
  std::size_t eval_episodes = 50;
  // Multi-task baseline budget in episodes; 0 derives an equal budget from
  // the specialization and distillation phases.
  std::size_t baseline_episodes = 0;
  std::string output_dir = "runs/default";
};

struct SweepConfig {
  std::string parameter;  // "beta" or "tracelength"
  std::vector<double> values;
};

struct ExperimentConfig {
  env::DomainConfig domain;
  NetworkConfig network;
  learner::LearnerConfig learner;
  DistillRunConfig distill;
  RunConfig run;
  SweepConfig sweep;

  void validate() const;
};

// Parses the JSON document. Every section is optional and falls back to the
// defaults above; unknown keys and ill-typed values raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

// One task per configured grid size, in order. Task k is drawn from
// derive_seed(seed, kTask, k).
std::vector<env::TaskSpec> make_tasks(const ExperimentConfig& config);

// Largest native encoding length across the task set; every network of the
// run uses it as input_dim.
std::size_t shared_observation_dim(const std::vector<env::TaskSpec>& tasks);

nn::NetworkSpec network_spec(const ExperimentConfig& config, std::size_t input_dim);

// Applies a sweep value to the named parameter. Throws ConfigError for an
// unknown name or an out-of-range value.
void apply_sweep_value(ExperimentConfig& config, const std::string& parameter, double value);

}  // namespace mtmarl::harness
