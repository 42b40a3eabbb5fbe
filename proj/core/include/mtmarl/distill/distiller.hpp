#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mtmarl/common/seed.hpp"
#include "mtmarl/env/gridworld.hpp"
#include "mtmarl/learner/hdrqn.hpp"
#include "mtmarl/nn/adam.hpp"
#include "mtmarl/nn/network.hpp"
#include "mtmarl/replay/cert.hpp"

namespace mtmarl::distill {

// <observation, teacher Q-vector> at one timestep.
struct RegressionExperience {
  std::vector<float> obs;
  std::vector<float> q;
};

using RegressionCert = replay::EpisodicMemory<RegressionExperience>;
using RegressionBatch = replay::TraceBatch<RegressionExperience>;

struct RegressionStore {
  int task_id = 0;
  RegressionCert memory;
};

// One store per task, all belonging to a single agent.
using RegressionCertSet = std::vector<RegressionStore>;

struct DistillConfig {
  double temperature = 0.01;
  std::size_t batch = 32;
  std::size_t tracelength = 4;
  double base_lr = 1e-3;
  double epsilon_collect = 0.05;
  std::size_t collect_episodes_per_task = 500;
  // Re-run collection every N distillation iterations; 0 collects once.
  std::size_t refresh_every = 0;

  void validate() const;
};

struct CollectionResult {
  std::vector<RegressionCertSet> per_agent;
  std::size_t steps = 0;             // summed over agents
  std::size_t non_greedy_actions = 0;  // action differed from the teacher argmax
};

// specialists[k][i] is agent i's network for tasks[k]. Episode e of task k is
// seeded from derive_seed(seed, k, e); each agent stores its teacher's full
// Q-vector next to the observation it was computed from.
CollectionResult collect_regression_data(
    std::span<const std::vector<nn::ParameterSet<float>>> specialists,
    std::span<const env::TaskSpec> tasks, std::size_t episodes_per_task, double epsilon_collect,
    std::uint64_t seed, std::size_t obs_dim);

template <typename T>
struct KlLossResult {
  nn::GradientSet<T> grads;
  double loss = 0.0;  // mean over valid slots
  std::size_t valid = 0;
};

// Mean over valid slots of KL(softmax(q / T) || softmax(q_R)) where q_R is the
// student's output with its hidden state started from zero at the trace
// start. Teacher values are constants.
template <typename T>
KlLossResult<T> kl_loss_grads(const nn::ParameterSet<T>& student, const RegressionBatch& batch,
                              double temperature);

// Softmax with max-subtraction, in double.
std::vector<double> softmax(std::span<const double> logits);

struct DistillMetrics {
  double loss = 0.0;
  std::size_t task_index = 0;
};

// Single multi-task network for one agent.
class DistilledLearner {
 public:
  DistilledLearner(const nn::NetworkSpec& spec, const DistillConfig& config, std::uint64_t init_seed);

  const nn::ParameterSet<float>& params() const { return params_; }
  nn::ParameterSet<float>& params() { return params_; }
  const DistillConfig& config() const { return config_; }
  std::uint64_t iteration() const { return iteration_; }

  // Uniform task store, local trace sample, KL gradient, Adam step. Returns
  // nullopt when every store is empty.
  std::optional<DistillMetrics> distill_iteration(const RegressionCertSet& stores, Rng& rng);
  double train_on(const RegressionBatch& batch);

 private:
  DistillConfig config_;
  nn::ParameterSet<float> params_;
  nn::AdamState<float> adam_;
  std::uint64_t iteration_ = 0;
};

struct MultiTaskReport {
  std::vector<learner::EvalReport> per_task;
  // Mean discounted return over every episode of every task.
  double v_bar = 0.0;
};

// Greedy evaluation of one network per agent on every task; nothing about
// the task identity reaches the networks. Task k uses eval seed
// derive_seed(seed, k).
MultiTaskReport evaluate_multitask(std::span<const nn::ParameterSet<float>> policies,
                                   std::span<const env::TaskSpec> tasks,
                                   std::size_t episodes_per_task, std::uint64_t seed, double gamma,
                                   std::size_t obs_dim);

// Regression store dump, version 1 (little-endian):
//   char[8] "MTRGCERT", u32 version, u32 reserved (0),
//   u64 store count, then per store:
//     i64 task_id, u64 obs_dim, u64 n_actions, u64 episode count,
//     per episode: u64 length, then length x (f32[obs_dim] obs, f32[n_actions] q)
std::vector<std::uint8_t> serialize_regression_set(const RegressionCertSet& set);
RegressionCertSet deserialize_regression_set(std::span<const std::uint8_t> bytes,
                                             std::size_t capacity);
void save_regression_set(const std::filesystem::path& path, const RegressionCertSet& set);
RegressionCertSet load_regression_set(const std::filesystem::path& path, std::size_t capacity);

}  // namespace mtmarl::distill
