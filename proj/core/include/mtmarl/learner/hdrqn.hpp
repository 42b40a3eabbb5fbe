#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mtmarl/common/binary_io.hpp"
#include "mtmarl/common/seed.hpp"
#include "mtmarl/env/gridworld.hpp"
#include "mtmarl/nn/adam.hpp"
#include "mtmarl/nn/network.hpp"
#include "mtmarl/replay/cert.hpp"

namespace mtmarl::learner {

using replay::ExperienceTuple;
using TdBatch = replay::TraceBatch<ExperienceTuple>;

struct LearnerConfig {
  double gamma = 0.95;
  // Ratio beta/alpha applied to the gradient of negative-TD samples.
  // 1 recovers plain Dec-DRQN.
  double hysteresis_beta = 0.3;
  double base_lr = 1e-3;
  std::size_t batch = 32;
  std::size_t tracelength = 4;
  std::size_t target_sync_period = 100;
  std::size_t replay_capacity = 500;
  std::size_t warmup_episodes = 32;
  std::size_t train_iterations_per_episode = 1;
  double epsilon_start = 1.0;
  double epsilon_end = 0.1;
  // Fraction of the training episodes over which epsilon anneals linearly.
  double epsilon_anneal_fraction = 0.5;

  void validate() const;
};

// Linear anneal from epsilon_start to epsilon_end, then constant.
double epsilon_at(const LearnerConfig& config, std::uint64_t episode, std::uint64_t total_episodes);

struct ActionChoice {
  int action = 0;
  nn::Vector<float> q;
  nn::HiddenState<float> hidden;
};

// Epsilon-greedy action from the recurrent Q-network. The hidden state is
// always advanced with `obs`, whichever branch picks the action; greedy ties
// go to the lowest index.
ActionChoice select_action(const nn::ParameterSet<float>& params, std::span<const float> obs,
                           const nn::HiddenState<float>& hidden, double epsilon, Rng& rng);

int argmax(std::span<const float> q);

// y_t = r_t + gamma * max_a' Q_target(o'_t, h_t, a'), bootstrap dropped on
// terminal slots. The target network runs each trace from a zero state over
// o_{t0}, o'_{t0}, o'_{t0+1}, ... so that h_t has seen o_{t0..t}. Padding
// slots receive unspecified values. Result is indexed like batch.slots.
template <typename T>
std::vector<T> compute_targets(const nn::ParameterSet<T>& target, const TdBatch& batch, double gamma);

template <typename T>
struct TdLossResult {
  nn::GradientSet<T> grads;
  double loss = 0.0;          // mean squared TD error over valid slots
  double mean_abs_td = 0.0;
  std::size_t valid = 0;
};

// Mean squared TD loss over valid slots with hysteretic gradient scaling:
// a slot with delta < 0 has its gradient multiplied by hysteresis_beta.
// Only the taken action's output receives gradient.
template <typename T>
TdLossResult<T> hysteretic_loss_grads(const nn::ParameterSet<T>& online, const TdBatch& batch,
                                      std::span<const T> targets, double hysteresis_beta);

struct TrainMetrics {
  double loss = 0.0;
  double mean_abs_td = 0.0;
};

// One agent's online/target networks, optimizer and replay memories. Most
// runs use a single memory; the pooled multi-task baseline keeps one per task.
class AgentLearner {
 public:
  AgentLearner(const nn::NetworkSpec& spec, const LearnerConfig& config, std::uint64_t init_seed,
               std::size_t memory_count = 1);

  const LearnerConfig& config() const { return config_; }
  const nn::NetworkSpec& spec() const { return online_.spec(); }
  const nn::ParameterSet<float>& online() const { return online_; }
  nn::ParameterSet<float>& online() { return online_; }
  const nn::ParameterSet<float>& target() const { return target_; }
  const nn::AdamState<float>& optimizer() const { return adam_; }

  replay::Cert& memory(std::size_t index = 0) { return memories_.at(index); }
  const replay::Cert& memory(std::size_t index = 0) const { return memories_.at(index); }
  std::size_t memory_count() const { return memories_.size(); }
  std::size_t stored_episodes() const;

  std::uint64_t iteration() const { return iteration_; }

  // Targets with the target network, hysteretic gradient, Adam step, and a
  // target refresh every target_sync_period iterations.
  TrainMetrics train_on(const TdBatch& batch);
  // Plan is applied to memory(memory_index). Returns nullopt when the memory
  // is empty.
  std::optional<TrainMetrics> train_iteration(const replay::SampleIndexPlan& plan,
                                              std::size_t memory_index = 0);
  // Draws the plan from (sampling_seed, iteration()).
  std::optional<TrainMetrics> train_iteration(std::uint64_t sampling_seed,
                                              std::size_t memory_index = 0);

  void sync_target() { target_ = nn::sync_target(online_); }

  // Networks, optimizer moments and iteration counter; replay is not saved.
  void write_state(ByteWriter& out) const;
  void read_state(ByteReader& in);

 private:
  LearnerConfig config_;
  nn::ParameterSet<float> online_;
  nn::ParameterSet<float> target_;
  nn::AdamState<float> adam_;
  std::vector<replay::Cert> memories_;
  std::uint64_t iteration_ = 0;
};

struct EpisodeSeeds {
  std::uint64_t env = 0;          // reset + transitions of this episode
  std::uint64_t exploration = 0;  // agent i uses derive_seed(exploration, i)
  std::uint64_t sampling = 0;     // shared CERT stream, fixed for the run
};

struct EpisodeResult {
  double undiscounted_return = 0.0;
  double discounted_return = 0.0;
  int length = 0;
  std::optional<TrainMetrics> train;
};

// Runs one episode with every agent acting on its own local observation and
// appends one experience per agent per step to memory(memory_index). Does not
// train.
EpisodeResult collect_episode(std::span<AgentLearner> agents, const env::TaskSpec& task,
                              double epsilon, const EpisodeSeeds& seeds, std::size_t obs_dim,
                              std::size_t memory_index = 0);

// collect_episode, then train_iterations_per_episode concurrent training
// iterations on memory(memory_index) once every agent holds warmup_episodes
// episodes across all of its memories.
EpisodeResult run_episode_training(std::span<AgentLearner> agents, const env::TaskSpec& task,
                                   double epsilon, const EpisodeSeeds& seeds, std::size_t obs_dim,
                                   std::size_t memory_index = 0);

struct EvalReport {
  std::vector<double> undiscounted;
  std::vector<double> discounted;
  // Mean over agents of Q_i(o_0, a_0) for the action taken at t = 0.
  std::vector<double> q0;

  std::size_t episodes() const { return discounted.size(); }
  double mean_discounted() const;
  double std_discounted() const;
  double mean_undiscounted() const;
  double mean_q0() const;
};

// Greedy execution of one policy per agent. Episode e is reset from
// derive_seed(eval_seed, e).
EvalReport evaluate(std::span<const nn::ParameterSet<float>> policies, const env::TaskSpec& task,
                    std::size_t n_episodes, std::uint64_t eval_seed, double gamma,
                    std::size_t obs_dim);

double mean(std::span<const double> values);
double stddev(std::span<const double> values);

}  // namespace mtmarl::learner
