#include "mtmarl/learner/hdrqn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mtmarl/common/error.hpp"
#include "mtmarl/nn/checkpoint.hpp"

namespace mtmarl::learner {

namespace {

constexpr std::uint64_t kStepStream = 0x73746570;  // "step"
constexpr std::string_view kStateMagic = "MTQNLRNR";
constexpr std::uint32_t kStateVersion = 1;

template <typename T>
void load_column(nn::Matrix<T>& dst, Eigen::Index col, const std::vector<float>& src) {
  if (static_cast<Eigen::Index>(src.size()) != dst.rows())
    throw DimensionError("experience observation has " + std::to_string(src.size()) +
                         " entries, network expects " + std::to_string(dst.rows()));
  for (Eigen::Index r = 0; r < dst.rows(); ++r) dst(r, col) = static_cast<T>(src[static_cast<std::size_t>(r)]);
}

void write_blob(ByteWriter& out, const std::vector<std::uint8_t>& blob) {
  out.put<std::uint64_t>(blob.size());
  out.put_bytes(blob);
}

std::span<const std::uint8_t> read_blob(ByteReader& in, std::string_view what) {
  const auto size = static_cast<std::size_t>(in.get<std::uint64_t>(what));
  return in.get_bytes(size, what);
}

}  // namespace

void LearnerConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (!(hysteresis_beta > 0.0 && hysteresis_beta <= 1.0))
    throw ConfigError("hysteresis_beta must lie in (0, 1]");
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (batch == 0) throw ConfigError("batch must be >= 1");
  if (tracelength == 0) throw ConfigError("tracelength must be >= 1");
  if (target_sync_period == 0) throw ConfigError("target_sync_period must be >= 1");
  if (replay_capacity == 0) throw ConfigError("replay_capacity must be >= 1");
  if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= 1.0))
    throw ConfigError("epsilon bounds must lie in [0, 1]");
  if (!(epsilon_anneal_fraction >= 0.0 && epsilon_anneal_fraction <= 1.0))
    throw ConfigError("epsilon_anneal_fraction must lie in [0, 1]");
}

double epsilon_at(const LearnerConfig& config, std::uint64_t episode, std::uint64_t total_episodes) {
  const double span = config.epsilon_anneal_fraction * static_cast<double>(total_episodes);
  if (span <= 0.0) return config.epsilon_end;
  const double frac = std::min(1.0, static_cast<double>(episode) / span);
  return config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start);
}

int argmax(std::span<const float> q) {
  int best = 0;
  for (std::size_t a = 1; a < q.size(); ++a)
    if (q[a] > q[static_cast<std::size_t>(best)]) best = static_cast<int>(a);
  return best;
}

ActionChoice select_action(const nn::ParameterSet<float>& params, std::span<const float> obs,
                           const nn::HiddenState<float>& hidden, double epsilon, Rng& rng) {
  auto out = nn::forward_step<float>(params, obs, hidden);
  ActionChoice choice{0, std::move(out.q), std::move(out.hidden)};
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (u < epsilon) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(params.spec().output_dim) - 1);
    choice.action = pick(rng);
  } else {
    choice.action = argmax(std::span<const float>(choice.q.data(), static_cast<std::size_t>(choice.q.size())));
  }
  return choice;
}

template <typename T>
std::vector<T> compute_targets(const nn::ParameterSet<T>& target, const TdBatch& batch, double gamma) {
  const std::size_t n = batch.batch;
  const std::size_t tau = batch.tracelength;
  if (batch.slots.size() != n * tau || batch.mask.size() != n * tau)
    throw DimensionError("trace batch slots do not match batch x tracelength");
  const auto dim = static_cast<Eigen::Index>(target.spec().input_dim);
  const auto cols = static_cast<Eigen::Index>(n);

  std::vector<nn::Matrix<T>> inputs(tau + 1, nn::Matrix<T>::Zero(dim, cols));
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t t = 0; t < tau; ++t) {
      if (!batch.valid(b, t)) break;
      const auto& exp = batch.at(b, t);
      if (t == 0) load_column(inputs[0], static_cast<Eigen::Index>(b), exp.obs);
      load_column(inputs[t + 1], static_cast<Eigen::Index>(b), exp.next_obs);
    }
  }

  std::vector<T> y(n * tau, T(0));
  auto hidden = nn::HiddenState<T>::zeros(target.spec(), n);
  nn::forward_batch_step<T>(target, inputs[0], hidden);
  const T g = static_cast<T>(gamma);
  for (std::size_t t = 0; t < tau; ++t) {
    const nn::Matrix<T> q_next = nn::forward_batch_step<T>(target, inputs[t + 1], hidden);
    for (std::size_t b = 0; b < n; ++b) {
      if (!batch.valid(b, t)) continue;
      const auto& exp = batch.at(b, t);
      T value = static_cast<T>(exp.reward);
      if (!exp.terminal) value += g * q_next.col(static_cast<Eigen::Index>(b)).maxCoeff();
      y[b * tau + t] = value;
    }
  }
  return y;
}

template <typename T>
TdLossResult<T> hysteretic_loss_grads(const nn::ParameterSet<T>& online, const TdBatch& batch,
                                      std::span<const T> targets, double hysteresis_beta) {
  const std::size_t n = batch.batch;
  const std::size_t tau = batch.tracelength;
  if (targets.size() != n * tau) throw DimensionError("target count does not match trace batch");
  const auto dim = static_cast<Eigen::Index>(online.spec().input_dim);
  const auto cols = static_cast<Eigen::Index>(n);
  const auto n_actions = static_cast<Eigen::Index>(online.spec().output_dim);

  std::vector<nn::Matrix<T>> inputs(tau, nn::Matrix<T>::Zero(dim, cols));
  std::vector<std::uint8_t> mask(n * tau, 0);
  std::size_t valid = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t t = 0; t < tau; ++t) {
      if (!batch.valid(b, t)) continue;
      load_column(inputs[t], static_cast<Eigen::Index>(b), batch.at(b, t).obs);
      mask[t * n + b] = 1;
      ++valid;
    }
  }

  auto hidden = nn::HiddenState<T>::zeros(online.spec(), n);
  auto out = nn::forward_sequence<T>(online, std::span<const nn::Matrix<T>>(inputs), hidden);

  std::vector<nn::Matrix<T>> dq(tau, nn::Matrix<T>::Zero(n_actions, cols));
  TdLossResult<T> result;
  result.valid = valid;
  if (valid == 0) {
    result.grads = nn::GradientSet<T>(online.spec());
    return result;
  }
  const T scale = T(2) / static_cast<T>(valid);
  const T beta = static_cast<T>(hysteresis_beta);
  double loss = 0.0;
  double abs_td = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t t = 0; t < tau; ++t) {
      if (!batch.valid(b, t)) continue;
      const int action = batch.at(b, t).action;
      if (action < 0 || action >= n_actions) throw DimensionError("experience action out of range");
      const auto col = static_cast<Eigen::Index>(b);
      const T delta = targets[b * tau + t] - out.q[t](action, col);
      loss += static_cast<double>(delta) * static_cast<double>(delta);
      abs_td += std::abs(static_cast<double>(delta));
      T coef = -scale * delta;
      if (delta < T(0)) coef *= beta;
      dq[t](action, col) = coef;
    }
  }
  result.loss = loss / static_cast<double>(valid);
  result.mean_abs_td = abs_td / static_cast<double>(valid);
  result.grads = nn::backward_sequence<T>(online, out.cache, std::span<const nn::Matrix<T>>(dq), mask);
  return result;
}

template std::vector<float> compute_targets<float>(const nn::ParameterSet<float>&, const TdBatch&, double);
template std::vector<double> compute_targets<double>(const nn::ParameterSet<double>&, const TdBatch&, double);
template TdLossResult<float> hysteretic_loss_grads<float>(const nn::ParameterSet<float>&, const TdBatch&,
                                                          std::span<const float>, double);
template TdLossResult<double> hysteretic_loss_grads<double>(const nn::ParameterSet<double>&,
                                                            const TdBatch&, std::span<const double>,
                                                            double);

AgentLearner::AgentLearner(const nn::NetworkSpec& spec, const LearnerConfig& config,
                           std::uint64_t init_seed, std::size_t memory_count)
    : config_(config),
      online_(nn::build_network<float>(spec, init_seed)),
      target_(online_),
      adam_(spec, nn::AdamConfig{config.base_lr}) {
  config_.validate();
  if (memory_count == 0) throw ConfigError("learner needs at least one replay memory");
  memories_.reserve(memory_count);
  for (std::size_t k = 0; k < memory_count; ++k) memories_.emplace_back(config_.replay_capacity);
}

std::size_t AgentLearner::stored_episodes() const {
  std::size_t n = 0;
  for (const auto& m : memories_) n += m.size();
  return n;
}

TrainMetrics AgentLearner::train_on(const TdBatch& batch) {
  const auto y = compute_targets<float>(target_, batch, config_.gamma);
  auto result = hysteretic_loss_grads<float>(online_, batch, y, config_.hysteresis_beta);
  nn::adam_step(online_, adam_, result.grads);
  ++iteration_;
  if (iteration_ % config_.target_sync_period == 0) sync_target();
  return {result.loss, result.mean_abs_td};
}

std::optional<TrainMetrics> AgentLearner::train_iteration(const replay::SampleIndexPlan& plan,
                                                          std::size_t memory_index) {
  const auto& mem = memory(memory_index);
  if (mem.empty()) return std::nullopt;
  return train_on(replay::extract_traces(mem, plan));
}

std::optional<TrainMetrics> AgentLearner::train_iteration(std::uint64_t sampling_seed,
                                                          std::size_t memory_index) {
  const auto plan =
      memory(memory_index).plan(sampling_seed, iteration_, config_.batch, config_.tracelength);
  if (!plan) return std::nullopt;
  return train_iteration(*plan, memory_index);
}

void AgentLearner::write_state(ByteWriter& out) const {
  out.put_magic(kStateMagic);
  out.put<std::uint32_t>(kStateVersion);
  write_blob(out, nn::serialize(online_));
  write_blob(out, nn::serialize(target_));
  nn::write_adam_state(out, adam_);
  out.put<std::uint64_t>(iteration_);
}

void AgentLearner::read_state(ByteReader& in) {
  in.expect_magic(kStateMagic, "learner state");
  const auto version = in.get<std::uint32_t>("learner state version");
  if (version != kStateVersion)
    throw DecodeError("unsupported learner state version " + std::to_string(version));
  auto online = nn::deserialize(read_blob(in, "online parameters"), online_.spec());
  auto target = nn::deserialize(read_blob(in, "target parameters"), online_.spec());
  auto adam = nn::read_adam_state(in, online_.spec());
  const auto iteration = in.get<std::uint64_t>("iteration counter");
  online_ = std::move(online);
  target_ = std::move(target);
  adam_ = std::move(adam);
  iteration_ = iteration;
}

EpisodeResult collect_episode(std::span<AgentLearner> agents, const env::TaskSpec& task,
                              double epsilon, const EpisodeSeeds& seeds, std::size_t obs_dim,
                              std::size_t memory_index) {
  if (static_cast<int>(agents.size()) != task.n_agents)
    throw DimensionError("agent count does not match task");
  if (obs_dim < task.observation_dim())
    throw DimensionError("observation dimension smaller than the task's encoding");
  for (const auto& agent : agents) {
    if (agent.spec().input_dim != obs_dim)
      throw DimensionError("agent network input_dim does not match observation dimension");
    if (agent.spec().output_dim != static_cast<std::size_t>(env::kNumActions))
      throw DimensionError("agent network output_dim does not match action count");
  }

  const std::size_t n = agents.size();
  auto start = env::reset(task, seeds.env);
  Rng env_rng(derive_seed(seeds.env, kStepStream));
  std::vector<Rng> explore;
  std::vector<nn::HiddenState<float>> hidden;
  std::vector<std::vector<float>> obs;
  for (std::size_t i = 0; i < n; ++i) {
    explore.emplace_back(derive_seed(seeds.exploration, i));
    hidden.push_back(nn::HiddenState<float>::zeros(agents[i].spec()));
    obs.push_back(start.observations[i].encode(task.grid, obs_dim));
    agents[i].memory(memory_index).begin_episode();
  }

  EpisodeResult result;
  env::EnvState state = std::move(start.state);
  std::vector<int> joint(n);
  double discount = 1.0;
  const double gamma = agents.front().config().gamma;
  while (!state.done) {
    for (std::size_t i = 0; i < n; ++i) {
      auto choice = select_action(agents[i].online(), obs[i], hidden[i], epsilon, explore[i]);
      joint[i] = choice.action;
      hidden[i] = std::move(choice.hidden);
    }
    auto next = env::step(task, state, joint, env_rng);
    for (std::size_t i = 0; i < n; ++i) {
      auto next_obs = next.observations[i].encode(task.grid, obs_dim);
      agents[i].memory(memory_index)
          .append({obs[i], joint[i], static_cast<float>(next.reward), next_obs, next.done});
      obs[i] = std::move(next_obs);
    }
    result.undiscounted_return += next.reward;
    result.discounted_return += discount * next.reward;
    discount *= gamma;
    ++result.length;
    state = std::move(next.state);
  }
  for (auto& agent : agents) agent.memory(memory_index).end_episode();
  return result;
}

EpisodeResult run_episode_training(std::span<AgentLearner> agents, const env::TaskSpec& task,
                                   double epsilon, const EpisodeSeeds& seeds, std::size_t obs_dim,
                                   std::size_t memory_index) {
  EpisodeResult result = collect_episode(agents, task, epsilon, seeds, obs_dim, memory_index);
  const auto warm = std::all_of(agents.begin(), agents.end(), [](const AgentLearner& a) {
    return a.stored_episodes() >= a.config().warmup_episodes;
  });
  if (!warm) return result;

  TrainMetrics sum;
  std::size_t count = 0;
  for (std::size_t k = 0; k < agents.front().config().train_iterations_per_episode; ++k) {
    for (auto& agent : agents) {
      if (auto m = agent.train_iteration(seeds.sampling, memory_index)) {
        sum.loss += m->loss;
        sum.mean_abs_td += m->mean_abs_td;
        ++count;
      }
    }
  }
  if (count > 0) {
    sum.loss /= static_cast<double>(count);
    sum.mean_abs_td /= static_cast<double>(count);
    result.train = sum;
  }
  return result;
}

EvalReport evaluate(std::span<const nn::ParameterSet<float>> policies, const env::TaskSpec& task,
                    std::size_t n_episodes, std::uint64_t eval_seed, double gamma,
                    std::size_t obs_dim) {
  if (static_cast<int>(policies.size()) != task.n_agents)
    throw DimensionError("policy count does not match task");
  if (obs_dim < task.observation_dim())
    throw DimensionError("observation dimension smaller than the task's encoding");
  for (const auto& p : policies)
    if (p.spec().input_dim != obs_dim)
      throw DimensionError("policy input_dim does not match observation dimension");

  const std::size_t n = policies.size();
  EvalReport report;
  Rng unused(0);
  for (std::size_t e = 0; e < n_episodes; ++e) {
    const std::uint64_t episode_seed = derive_seed(eval_seed, e);
    auto start = env::reset(task, episode_seed);
    Rng env_rng(derive_seed(episode_seed, kStepStream));
    std::vector<nn::HiddenState<float>> hidden;
    std::vector<std::vector<float>> obs;
    for (std::size_t i = 0; i < n; ++i) {
      hidden.push_back(nn::HiddenState<float>::zeros(policies[i].spec()));
      obs.push_back(start.observations[i].encode(task.grid, obs_dim));
    }
    env::EnvState state = std::move(start.state);
    std::vector<int> joint(n);
    double undiscounted = 0.0;
    double discounted = 0.0;
    double discount = 1.0;
    double q0 = 0.0;
    while (!state.done) {
      for (std::size_t i = 0; i < n; ++i) {
        auto choice = select_action(policies[i], obs[i], hidden[i], 0.0, unused);
        joint[i] = choice.action;
        if (state.t == 0) q0 += choice.q(choice.action);
        hidden[i] = std::move(choice.hidden);
      }
      auto next = env::step(task, state, joint, env_rng);
      for (std::size_t i = 0; i < n; ++i) obs[i] = next.observations[i].encode(task.grid, obs_dim);
      undiscounted += next.reward;
      discounted += discount * next.reward;
      discount *= gamma;
      state = std::move(next.state);
    }
    report.undiscounted.push_back(undiscounted);
    report.discounted.push_back(discounted);
    report.q0.push_back(q0 / static_cast<double>(n));
  }
  return report;
}

double mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double stddev(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double mu = mean(values);
  double acc = 0.0;
  for (double v : values) acc += (v - mu) * (v - mu);
  return std::sqrt(acc / static_cast<double>(values.size()));
}

double EvalReport::mean_discounted() const { return mean(discounted); }
double EvalReport::std_discounted() const { return stddev(discounted); }
double EvalReport::mean_undiscounted() const { return mean(undiscounted); }
double EvalReport::mean_q0() const { return mean(q0); }

}  // namespace mtmarl::learner
