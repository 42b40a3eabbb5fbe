#include "mtmarl/distill/distiller.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mtmarl/common/binary_io.hpp"
#include "mtmarl/common/error.hpp"

namespace mtmarl::distill {

namespace {

constexpr std::string_view kStoreMagic = "MTRGCERT";
constexpr std::uint32_t kStoreVersion = 1;
constexpr std::uint64_t kStepStream = 1;
constexpr std::uint64_t kExploreStream = 2;

double log_sum_exp(std::span<const double> z) {
  const double top = *std::max_element(z.begin(), z.end());
  double acc = 0.0;
  for (double v : z) acc += std::exp(v - top);
  return top + std::log(acc);
}

}  // namespace

void DistillConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("distillation temperature must be positive");
  if (batch == 0) throw ConfigError("distillation batch must be >= 1");
  if (tracelength == 0) throw ConfigError("distillation tracelength must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("distillation base_lr must be positive");
  if (!(epsilon_collect >= 0.0 && epsilon_collect <= 1.0))
    throw ConfigError("epsilon_collect must lie in [0, 1]");
  if (collect_episodes_per_task == 0) throw ConfigError("collect_episodes_per_task must be >= 1");
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t a = 0; a < logits.size(); ++a) total += out[a] = std::exp(logits[a] - top);
  for (double& v : out) v /= total;
  return out;
}

CollectionResult collect_regression_data(
    std::span<const std::vector<nn::ParameterSet<float>>> specialists,
    std::span<const env::TaskSpec> tasks, std::size_t episodes_per_task, double epsilon_collect,
    std::uint64_t seed, std::size_t obs_dim) {
  if (specialists.size() != tasks.size())
    throw ConfigError("missing specialization: " + std::to_string(specialists.size()) +
                      " specialist sets for " + std::to_string(tasks.size()) + " tasks");
  if (tasks.empty()) throw ConfigError("no tasks to collect from");
  const auto n_agents = static_cast<std::size_t>(tasks.front().n_agents);

  CollectionResult result;
  result.per_agent.resize(n_agents);
  for (auto& set : result.per_agent)
    for (const auto& task : tasks)
      set.push_back({task.task_id, RegressionCert(std::max<std::size_t>(episodes_per_task, 1))});

  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const env::TaskSpec& task = tasks[k];
    if (static_cast<std::size_t>(task.n_agents) != n_agents)
      throw DimensionError("all tasks in a distillation set must share the agent count");
    if (specialists[k].size() != n_agents)
      throw ConfigError("missing specialization for task " + std::to_string(task.task_id));
    if (obs_dim < task.observation_dim())
      throw DimensionError("observation dimension smaller than the task's encoding");
    for (const auto& p : specialists[k])
      if (p.spec().input_dim != obs_dim)
        throw DimensionError("specialist input_dim does not match observation dimension");

    for (std::size_t e = 0; e < episodes_per_task; ++e) {
      const std::uint64_t episode_seed = derive_seed(seed, k, e);
      auto start = env::reset(task, episode_seed);
      Rng env_rng(derive_seed(episode_seed, kStepStream));
      std::vector<Rng> explore;
      std::vector<nn::HiddenState<float>> hidden;
      std::vector<std::vector<float>> obs;
      for (std::size_t i = 0; i < n_agents; ++i) {
        explore.emplace_back(derive_seed(episode_seed, kExploreStream, i));
        hidden.push_back(nn::HiddenState<float>::zeros(specialists[k][i].spec()));
        obs.push_back(start.observations[i].encode(task.grid, obs_dim));
        result.per_agent[i][k].memory.begin_episode();
      }
      env::EnvState state = std::move(start.state);
      std::vector<int> joint(n_agents);
      while (!state.done) {
        for (std::size_t i = 0; i < n_agents; ++i) {
          auto choice = learner::select_action(specialists[k][i], obs[i], hidden[i],
                                               epsilon_collect, explore[i]);
          std::vector<float> q(choice.q.data(), choice.q.data() + choice.q.size());
          if (choice.action != learner::argmax(q)) ++result.non_greedy_actions;
          ++result.steps;
          result.per_agent[i][k].memory.append({obs[i], std::move(q)});
          joint[i] = choice.action;
          hidden[i] = std::move(choice.hidden);
        }
        auto next = env::step(task, state, joint, env_rng);
        for (std::size_t i = 0; i < n_agents; ++i)
          obs[i] = next.observations[i].encode(task.grid, obs_dim);
        state = std::move(next.state);
      }
      for (std::size_t i = 0; i < n_agents; ++i) result.per_agent[i][k].memory.end_episode();
    }
  }
  return result;
}

template <typename T>
KlLossResult<T> kl_loss_grads(const nn::ParameterSet<T>& student, const RegressionBatch& batch,
                              double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  const std::size_t n = batch.batch;
  const std::size_t tau = batch.tracelength;
  const auto dim = static_cast<Eigen::Index>(student.spec().input_dim);
  const auto n_actions = student.spec().output_dim;
  const auto cols = static_cast<Eigen::Index>(n);

  std::vector<nn::Matrix<T>> inputs(tau, nn::Matrix<T>::Zero(dim, cols));
  std::vector<std::uint8_t> mask(n * tau, 0);
  std::size_t valid = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t t = 0; t < tau; ++t) {
      if (!batch.valid(b, t)) continue;
      const auto& exp = batch.at(b, t);
      if (static_cast<Eigen::Index>(exp.obs.size()) != dim)
        throw DimensionError("regression observation does not match student input_dim");
      if (exp.q.size() != n_actions)
        throw DimensionError("regression Q-vector does not match student output_dim");
      for (Eigen::Index r = 0; r < dim; ++r)
        inputs[t](r, static_cast<Eigen::Index>(b)) = static_cast<T>(exp.obs[static_cast<std::size_t>(r)]);
      mask[t * n + b] = 1;
      ++valid;
    }
  }

  KlLossResult<T> result;
  result.valid = valid;
  auto out = nn::forward_sequence<T>(student, std::span<const nn::Matrix<T>>(inputs),
                                     nn::HiddenState<T>::zeros(student.spec(), n));
  std::vector<nn::Matrix<T>> dq(tau, nn::Matrix<T>::Zero(static_cast<Eigen::Index>(n_actions), cols));
  if (valid == 0) {
    result.grads = nn::GradientSet<T>(student.spec());
    return result;
  }

  std::vector<double> teacher(n_actions);
  std::vector<double> logits(n_actions);
  double loss = 0.0;
  const double inv_valid = 1.0 / static_cast<double>(valid);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t t = 0; t < tau; ++t) {
      if (!batch.valid(b, t)) continue;
      const auto& exp = batch.at(b, t);
      for (std::size_t a = 0; a < n_actions; ++a) {
        teacher[a] = static_cast<double>(exp.q[a]) / temperature;
        logits[a] = static_cast<double>(out.q[t](static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
      }
      const double teacher_lse = log_sum_exp(teacher);
      const double student_lse = log_sum_exp(logits);
      for (std::size_t a = 0; a < n_actions; ++a) {
        const double log_p = teacher[a] - teacher_lse;
        const double p = std::exp(log_p);
        const double log_s = logits[a] - student_lse;
        if (p > 0.0) loss += p * (log_p - log_s);
        dq[t](static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
            static_cast<T>((std::exp(log_s) - p) * inv_valid);
      }
    }
  }
  result.loss = loss * inv_valid;
  result.grads = nn::backward_sequence<T>(student, out.cache, std::span<const nn::Matrix<T>>(dq), mask);
  return result;
}

template KlLossResult<float> kl_loss_grads<float>(const nn::ParameterSet<float>&, const RegressionBatch&,
                                                  double);
template KlLossResult<double> kl_loss_grads<double>(const nn::ParameterSet<double>&,
                                                    const RegressionBatch&, double);

DistilledLearner::DistilledLearner(const nn::NetworkSpec& spec, const DistillConfig& config,
                                   std::uint64_t init_seed)
    : config_(config),
      params_(nn::build_network<float>(spec, init_seed)),
      adam_(spec, nn::AdamConfig{config.base_lr}) {
  config_.validate();
}

double DistilledLearner::train_on(const RegressionBatch& batch) {
  auto result = kl_loss_grads<float>(params_, batch, config_.temperature);
  nn::adam_step(params_, adam_, result.grads);
  ++iteration_;
  return result.loss;
}

std::optional<DistillMetrics> DistilledLearner::distill_iteration(const RegressionCertSet& stores,
                                                                  Rng& rng) {
  std::vector<std::size_t> ready;
  for (std::size_t k = 0; k < stores.size(); ++k)
    if (!stores[k].memory.empty()) ready.push_back(k);
  if (ready.empty()) return std::nullopt;

  const std::size_t k = ready[std::uniform_int_distribution<std::size_t>(0, ready.size() - 1)(rng)];
  const auto& memory = stores[k].memory;
  auto plan = memory.plan(rng(), 0, config_.batch, config_.tracelength);
  const double loss = train_on(replay::extract_traces(memory, *plan));
  return DistillMetrics{loss, k};
}

MultiTaskReport evaluate_multitask(std::span<const nn::ParameterSet<float>> policies,
                                   std::span<const env::TaskSpec> tasks,
                                   std::size_t episodes_per_task, std::uint64_t seed, double gamma,
                                   std::size_t obs_dim) {
  MultiTaskReport report;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    auto r = learner::evaluate(policies, tasks[k], episodes_per_task, derive_seed(seed, k), gamma,
                               obs_dim);
    for (double v : r.discounted) total += v;
    count += r.episodes();
    report.per_task.push_back(std::move(r));
  }
  report.v_bar = count > 0 ? total / static_cast<double>(count) : 0.0;
  return report;
}

std::vector<std::uint8_t> serialize_regression_set(const RegressionCertSet& set) {
  ByteWriter out;
  out.put_magic(kStoreMagic);
  out.put<std::uint32_t>(kStoreVersion);
  out.put<std::uint32_t>(0);
  out.put<std::uint64_t>(set.size());
  for (const auto& store : set) {
    std::size_t obs_dim = 0;
    std::size_t n_actions = 0;
    if (!store.memory.empty()) {
      obs_dim = store.memory.episode(0).front().obs.size();
      n_actions = store.memory.episode(0).front().q.size();
    }
    out.put<std::int64_t>(store.task_id);
    out.put<std::uint64_t>(obs_dim);
    out.put<std::uint64_t>(n_actions);
    out.put<std::uint64_t>(store.memory.size());
    for (std::size_t e = 0; e < store.memory.size(); ++e) {
      const auto& episode = store.memory.episode(e);
      out.put<std::uint64_t>(episode.size());
      for (const auto& exp : episode) {
        if (exp.obs.size() != obs_dim || exp.q.size() != n_actions)
          throw DimensionError("regression store mixes experience shapes");
        out.put_array<float>(exp.obs);
        out.put_array<float>(exp.q);
      }
    }
  }
  return out.release();
}

RegressionCertSet deserialize_regression_set(std::span<const std::uint8_t> bytes,
                                             std::size_t capacity) {
  ByteReader in(bytes);
  in.expect_magic(kStoreMagic, "regression store header");
  const auto version = in.get<std::uint32_t>("regression store version");
  if (version != kStoreVersion)
    throw DecodeError("unsupported regression store version " + std::to_string(version));
  in.get<std::uint32_t>("reserved");
  const auto stores = in.get<std::uint64_t>("store count");
  RegressionCertSet set;
  for (std::uint64_t s = 0; s < stores; ++s) {
    RegressionStore store{static_cast<int>(in.get<std::int64_t>("task_id")), RegressionCert(capacity)};
    const auto obs_dim = static_cast<std::size_t>(in.get<std::uint64_t>("obs_dim"));
    const auto n_actions = static_cast<std::size_t>(in.get<std::uint64_t>("n_actions"));
    const auto episodes = in.get<std::uint64_t>("episode count");
    for (std::uint64_t e = 0; e < episodes; ++e) {
      const auto length = in.get<std::uint64_t>("episode length");
      if (length == 0) throw DecodeError("regression store holds an empty episode");
      store.memory.begin_episode();
      for (std::uint64_t t = 0; t < length; ++t) {
        RegressionExperience exp;
        exp.obs = in.get_array<float>(obs_dim, "regression observation");
        exp.q = in.get_array<float>(n_actions, "regression Q-vector");
        store.memory.append(std::move(exp));
      }
      store.memory.end_episode();
    }
    set.push_back(std::move(store));
  }
  if (!in.done()) throw DecodeError("regression store has trailing bytes");
  return set;
}

void save_regression_set(const std::filesystem::path& path, const RegressionCertSet& set) {
  write_file_bytes(path, serialize_regression_set(set));
}

RegressionCertSet load_regression_set(const std::filesystem::path& path, std::size_t capacity) {
  return deserialize_regression_set(read_file_bytes(path), capacity);
}

}  // namespace mtmarl::distill
