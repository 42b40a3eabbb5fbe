#include "mtmarl/harness/commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "mtmarl/common/binary_io.hpp"
#include "mtmarl/common/error.hpp"
#include "mtmarl/common/seed.hpp"
#include "mtmarl/nn/checkpoint.hpp"

namespace mtmarl::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kStateMagic = "MTRUNSTA";
constexpr std::uint32_t kStateVersion = 1;
// Key standing in for the task index in seeds of the pooled baseline.
constexpr std::uint64_t kPooled = 0x706f6f6cULL;

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

void progress(const std::string& line) { std::clog << line << '\n'; }

std::vector<nn::ParameterSet<float>> online_policies(const std::vector<learner::AgentLearner>& agents) {
  std::vector<nn::ParameterSet<float>> out;
  for (const auto& a : agents) out.push_back(a.online());
  return out;
}

MetricRow row_from_report(std::uint64_t epoch, int task_id, const learner::EvalReport& r, double loss) {
  return {epoch, task_id, r.mean_discounted(), r.std_discounted(), r.mean_q0(), loss};
}

// Pools every episode of every task into one row.
MetricRow overall_row(std::uint64_t epoch, const distill::MultiTaskReport& report, double loss) {
  std::vector<double> returns;
  std::vector<double> q0;
  for (const auto& r : report.per_task) {
    returns.insert(returns.end(), r.discounted.begin(), r.discounted.end());
    q0.insert(q0.end(), r.q0.begin(), r.q0.end());
  }
  return {epoch, kAllTasks, report.v_bar, learner::stddev(returns), learner::mean(q0), loss};
}

double mean_loss(double sum, std::size_t count) {
  return count > 0 ? sum / static_cast<double>(count) : std::nan("");
}

json seed_derivation() {
  return {{"task", "derive_seed(seed, 1, k)"},
          {"init", "derive_seed(seed, 2, k, agent)"},
          {"env", "derive_seed(seed, 3, k, episode)"},
          {"exploration", "derive_seed(seed, 4, k, episode)"},
          {"sampling", "derive_seed(seed, 5, k)"},
          {"eval", "derive_seed(seed, 7, k)"},
          {"collect", "derive_seed(seed, 8)"},
          {"distill", "derive_seed(seed, 9, 0|1, agent)"},
          {"pooled_key", kPooled}};
}

json tasks_json(const std::vector<env::TaskSpec>& tasks) {
  json arr = json::array();
  for (const auto& t : tasks) arr.push_back(env::task_to_json(t));
  return arr;
}

fs::path write_manifest(const fs::path& out, const std::string& command, const ExperimentConfig& config,
                        const std::vector<env::TaskSpec>& tasks, std::size_t obs_dim, json artifacts) {
  json m;
  m["command"] = command;
  m["metrics_schema"] = kMetricsSchemaVersion;
  m["metrics_header"] = kMetricsHeader;
  m["seed"] = config.run.seed;
  m["config"] = config_to_json(config);
  m["observation_dim"] = obs_dim;
  m["tasks"] = tasks_json(tasks);
  m["seed_derivation"] = seed_derivation();
  m["artifacts"] = std::move(artifacts);
  const auto text = m.dump(2) + "\n";
  const fs::path path = out / "manifest.json";
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return path;
}

ExperimentConfig resolved(ExperimentConfig config, const fs::path& out) {
  config.run.output_dir = out.string();
  config.validate();
  return config;
}

// Replay memories are part of the resumable state so that a resumed run
// matches an uninterrupted one.
void write_memory(ByteWriter& w, const replay::Cert& memory) {
  w.put<std::uint64_t>(memory.size());
  for (std::size_t e = 0; e < memory.size(); ++e) {
    const auto& episode = memory.episode(e);
    w.put<std::uint64_t>(episode.size());
    for (const auto& x : episode) {
      w.put<std::uint64_t>(x.obs.size());
      w.put_array<float>(x.obs);
      w.put<std::int32_t>(x.action);
      w.put<float>(x.reward);
      w.put<std::uint64_t>(x.next_obs.size());
      w.put_array<float>(x.next_obs);
      w.put<std::uint8_t>(x.terminal ? 1 : 0);
    }
  }
}

void read_memory(ByteReader& r, replay::Cert& memory) {
  memory.clear();
  const auto episodes = r.get<std::uint64_t>("replay episode count");
  for (std::uint64_t e = 0; e < episodes; ++e) {
    const auto length = r.get<std::uint64_t>("replay episode length");
    if (length == 0) throw DecodeError("replay state holds an empty episode");
    memory.begin_episode();
    for (std::uint64_t t = 0; t < length; ++t) {
      replay::ExperienceTuple x;
      x.obs = r.get_array<float>(r.get<std::uint64_t>("observation size"), "observation");
      x.action = r.get<std::int32_t>("action");
      x.reward = r.get<float>("reward");
      x.next_obs = r.get_array<float>(r.get<std::uint64_t>("next observation size"), "next observation");
      x.terminal = r.get<std::uint8_t>("terminal flag") != 0;
      memory.append(std::move(x));
    }
    memory.end_episode();
  }
}

void save_run_state(const fs::path& path, std::uint64_t episode, bool with_replay,
                    const std::vector<learner::AgentLearner>& agents) {
  ByteWriter w;
  w.put_magic(kStateMagic);
  w.put<std::uint32_t>(kStateVersion);
  w.put<std::uint64_t>(episode);
  w.put<std::uint8_t>(with_replay ? 1 : 0);
  w.put<std::uint64_t>(agents.size());
  for (const auto& a : agents) {
    a.write_state(w);
    w.put<std::uint64_t>(with_replay ? a.memory_count() : 0);
    if (with_replay)
      for (std::size_t m = 0; m < a.memory_count(); ++m) write_memory(w, a.memory(m));
  }
  write_file_bytes(path, w.release());
}

std::uint64_t load_run_state(const fs::path& path, std::vector<learner::AgentLearner>& agents) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  r.expect_magic(kStateMagic, "run state");
  const auto version = r.get<std::uint32_t>("run state version");
  if (version != kStateVersion) throw DecodeError("unsupported run state version " + std::to_string(version));
  const auto episode = r.get<std::uint64_t>("episode counter");
  r.get<std::uint8_t>("replay flag");
  if (r.get<std::uint64_t>("agent count") != agents.size())
    throw DecodeError("run state agent count does not match config");
  for (auto& a : agents) {
    a.read_state(r);
    const auto memories = r.get<std::uint64_t>("memory count");
    if (memories != 0 && memories != a.memory_count())
      throw DecodeError("run state memory count does not match config");
    for (std::size_t m = 0; m < memories; ++m) read_memory(r, a.memory(m));
  }
  if (!r.done()) throw DecodeError("run state has trailing bytes");
  return episode;
}

std::vector<learner::AgentLearner> make_agents(const nn::NetworkSpec& spec, const ExperimentConfig& config,
                                               std::uint64_t task_key, std::size_t memories) {
  std::vector<learner::AgentLearner> agents;
  for (int i = 0; i < config.domain.n_agents; ++i)
    agents.emplace_back(spec, config.learner, derive_seed(config.run.seed, SeedPurpose::kInit, task_key, i), memories);
  return agents;
}

std::vector<nn::ParameterSet<float>> load_policies(const std::vector<fs::path>& paths,
                                                   const nn::NetworkSpec& spec) {
  std::vector<nn::ParameterSet<float>> out;
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw ConfigError("missing checkpoint: " + p.string());
    out.push_back(nn::load_checkpoint(p, spec));
  }
  return out;
}

void check_tasks_match(const fs::path& run_dir, const std::vector<env::TaskSpec>& tasks) {
  const fs::path manifest = run_dir / "manifest.json";
  if (!fs::exists(manifest)) return;
  std::ifstream in(manifest);
  const json m = json::parse(in);
  if (m.contains("tasks") && m.at("tasks") != tasks_json(tasks))
    throw ConfigError("tasks in " + manifest.string() +
                      " differ from the tasks generated by this config (seed or domain changed)");
}

}  // namespace

std::string format_row(const MetricRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%llu,%d,%.6f,%.6f,%.6f,%.6g",
                static_cast<unsigned long long>(row.epoch), row.task_id, row.mean_return, row.std_return,
                row.mean_q0, row.loss);
  return buf;
}

void write_metrics_csv(const fs::path& path, const std::vector<MetricRow>& rows) {
  std::string text = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) text += format_row(r) + "\n";
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<MetricRow> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader)
    throw DecodeError("unexpected metrics header in " + path.string());
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 6) throw DecodeError("malformed metrics row: " + line);
    MetricRow r;
    r.epoch = std::stoull(fields[0]);
    r.task_id = std::stoi(fields[1]);
    r.mean_return = std::strtod(fields[2].c_str(), nullptr);
    r.std_return = std::strtod(fields[3].c_str(), nullptr);
    r.mean_q0 = std::strtod(fields[4].c_str(), nullptr);
    r.loss = std::strtod(fields[5].c_str(), nullptr);
    rows.push_back(r);
  }
  return rows;
}

fs::path specialist_checkpoint(const fs::path& run_dir, int task_id, int agent) {
  return run_dir / "checkpoints" / ("task" + std::to_string(task_id) + "_agent" + std::to_string(agent) + ".ckpt");
}

fs::path distilled_checkpoint(const fs::path& run_dir, int agent) {
  return run_dir / "distilled" / ("agent" + std::to_string(agent) + ".ckpt");
}

fs::path baseline_checkpoint(const fs::path& run_dir, int agent) {
  return run_dir / "baseline" / ("agent" + std::to_string(agent) + ".ckpt");
}

CommandResult cmd_train_single(const ExperimentConfig& input, const fs::path& out, bool resume,
                               std::uint64_t stop_after) {
  const ExperimentConfig config = resolved(input, out);
  const auto tasks = make_tasks(config);
  const std::size_t obs_dim = shared_observation_dim(tasks);
  const auto spec = network_spec(config, obs_dim);
  const auto seed = config.run.seed;
  const auto n = config.domain.n_agents;

  fs::create_directories(out / "checkpoints");
  fs::create_directories(out / "state");
  json ckpts = json::array();
  json states = json::array();
  for (const auto& t : tasks) {
    for (int i = 0; i < n; ++i)
      ckpts.push_back(fs::relative(specialist_checkpoint(out, t.task_id, i), out).string());
    states.push_back("state/task" + std::to_string(t.task_id) + ".state");
  }
  CommandResult result;
  result.metrics_csv = out / "metrics.csv";
  result.manifest = write_manifest(out, "train-single", config, tasks, obs_dim,
                                   {{"metrics", "metrics.csv"}, {"checkpoints", ckpts}, {"state", states}});

  std::vector<MetricRow> previous;
  if (resume && fs::exists(result.metrics_csv)) previous = read_metrics_csv(result.metrics_csv);

  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const auto& task = tasks[k];
    auto agents = make_agents(spec, config, k, 1);
    const fs::path state_path = out / "state" / ("task" + std::to_string(task.task_id) + ".state");
    std::uint64_t start = 0;
    if (resume && fs::exists(state_path)) {
      start = load_run_state(state_path, agents);
      for (const auto& r : previous)
        if (r.task_id == task.task_id && r.epoch <= start) result.rows.push_back(r);
    }
    if (start >= config.run.episodes) {
      progress("task " + std::to_string(task.task_id) + ": already complete");
      continue;
    }

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::uint64_t e = start; e < config.run.episodes; ++e) {
      const double eps = learner::epsilon_at(config.learner, e, config.run.episodes);
      const learner::EpisodeSeeds seeds{derive_seed(seed, SeedPurpose::kEnv, k, e),
                                        derive_seed(seed, SeedPurpose::kExploration, k, e),
                                        derive_seed(seed, SeedPurpose::kSampling, k)};
      const auto ep = learner::run_episode_training(agents, task, eps, seeds, obs_dim);
      if (ep.train) {
        loss_sum += ep.train->loss;
        ++loss_count;
      }
      const std::uint64_t epoch = e + 1;
      if (epoch % config.run.eval_every != 0 && epoch != config.run.episodes) continue;

      const auto policies = online_policies(agents);
      const auto report = learner::evaluate(policies, task, config.run.eval_episodes,
                                            derive_seed(seed, SeedPurpose::kEval, k), config.learner.gamma,
                                            obs_dim);
      result.rows.push_back(row_from_report(epoch, task.task_id, report, mean_loss(loss_sum, loss_count)));
      loss_sum = 0.0;
      loss_count = 0;
      for (int i = 0; i < n; ++i)
        nn::save_checkpoint(specialist_checkpoint(out, task.task_id, i), policies[static_cast<std::size_t>(i)]);
      save_run_state(state_path, epoch, epoch < config.run.episodes, agents);
      write_metrics_csv(result.metrics_csv, result.rows);
      progress("task " + std::to_string(task.task_id) + " " + format_row(result.rows.back()));
      if (stop_after != 0 && epoch >= stop_after) break;
    }
  }
  write_metrics_csv(result.metrics_csv, result.rows);
  return result;
}

CommandResult cmd_multi_baseline(const ExperimentConfig& input, const fs::path& out, bool resume) {
  const ExperimentConfig config = resolved(input, out);
  const auto tasks = make_tasks(config);
  const std::size_t obs_dim = shared_observation_dim(tasks);
  const auto spec = network_spec(config, obs_dim);
  const auto seed = config.run.seed;
  const auto n = config.domain.n_agents;
  const std::size_t iters = config.learner.train_iterations_per_episode;
  const std::uint64_t total =
      config.run.baseline_episodes > 0
          ? config.run.baseline_episodes
          : tasks.size() * config.run.episodes + (iters > 0 ? (config.distill.iterations + iters - 1) / iters : 0);

  fs::create_directories(out / "baseline");
  fs::create_directories(out / "state");
  json ckpts = json::array();
  for (int i = 0; i < n; ++i) ckpts.push_back(fs::relative(baseline_checkpoint(out, i), out).string());
  CommandResult result;
  result.metrics_csv = out / "metrics.csv";
  result.manifest = write_manifest(out, "multi-baseline", config, tasks, obs_dim,
                                   {{"metrics", "metrics.csv"},
                                    {"checkpoints", ckpts},
                                    {"state", "state/baseline.state"},
                                    {"episodes", total}});

  auto agents = make_agents(spec, config, kPooled, tasks.size());
  const fs::path state_path = out / "state" / "baseline.state";
  std::uint64_t start = 0;
  if (resume && fs::exists(state_path)) {
    start = load_run_state(state_path, agents);
    if (fs::exists(result.metrics_csv))
      for (const auto& r : read_metrics_csv(result.metrics_csv))
        if (r.epoch <= start) result.rows.push_back(r);
  }

  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  for (std::uint64_t e = start; e < total; ++e) {
    Rng pick(derive_seed(seed, SeedPurpose::kTask, kPooled, e));
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, tasks.size() - 1)(pick);
    const double eps = learner::epsilon_at(config.learner, e, total);
    const learner::EpisodeSeeds seeds{derive_seed(seed, SeedPurpose::kEnv, kPooled, e),
                                      derive_seed(seed, SeedPurpose::kExploration, kPooled, e),
                                      derive_seed(seed, SeedPurpose::kSampling, kPooled)};
    const auto ep = learner::run_episode_training(agents, tasks[k], eps, seeds, obs_dim, k);
    if (ep.train) {
      loss_sum += ep.train->loss;
      ++loss_count;
    }
    const std::uint64_t epoch = e + 1;
    if (epoch % config.run.eval_every != 0 && epoch != total) continue;

    const auto policies = online_policies(agents);
    const auto report = distill::evaluate_multitask(policies, tasks, config.run.eval_episodes,
                                                    derive_seed(seed, SeedPurpose::kEval), config.learner.gamma,
                                                    obs_dim);
    const double loss = mean_loss(loss_sum, loss_count);
    for (std::size_t t = 0; t < tasks.size(); ++t)
      result.rows.push_back(row_from_report(epoch, tasks[t].task_id, report.per_task[t], loss));
    result.rows.push_back(overall_row(epoch, report, loss));
    loss_sum = 0.0;
    loss_count = 0;
    for (int i = 0; i < n; ++i)
      nn::save_checkpoint(baseline_checkpoint(out, i), policies[static_cast<std::size_t>(i)]);
    save_run_state(state_path, epoch, epoch < total, agents);
    write_metrics_csv(result.metrics_csv, result.rows);
    progress("baseline " + format_row(result.rows.back()));
  }
  write_metrics_csv(result.metrics_csv, result.rows);
  return result;
}

CommandResult cmd_distill(const ExperimentConfig& input, const fs::path& out, const fs::path& specialists_dir) {
  const ExperimentConfig config = resolved(input, out);
  const auto tasks = make_tasks(config);
  const std::size_t obs_dim = shared_observation_dim(tasks);
  const auto spec = network_spec(config, obs_dim);
  const auto seed = config.run.seed;
  const auto n = config.domain.n_agents;
  const auto& dc = config.distill;

  check_tasks_match(specialists_dir, tasks);
  std::vector<std::vector<nn::ParameterSet<float>>> specialists;
  for (const auto& t : tasks) {
    std::vector<fs::path> paths;
    for (int i = 0; i < n; ++i) paths.push_back(specialist_checkpoint(specialists_dir, t.task_id, i));
    specialists.push_back(load_policies(paths, spec));
  }

  fs::create_directories(out / "distilled");
  fs::create_directories(out / "regression");
  json ckpts = json::array();
  json stores = json::array();
  for (int i = 0; i < n; ++i) {
    ckpts.push_back(fs::relative(distilled_checkpoint(out, i), out).string());
    stores.push_back("regression/agent" + std::to_string(i) + ".bin");
  }
  CommandResult result;
  result.metrics_csv = out / "metrics.csv";
  result.manifest = write_manifest(out, "distill", config, tasks, obs_dim,
                                   {{"metrics", "metrics.csv"},
                                    {"checkpoints", ckpts},
                                    {"regression_stores", stores},
                                    {"specialists", specialists_dir.string()}});

  const std::size_t capacity =
      dc.regression_capacity > 0 ? dc.regression_capacity : dc.params.collect_episodes_per_task;
  auto collect = [&](std::uint64_t round) {
    return distill::collect_regression_data(specialists, tasks, dc.params.collect_episodes_per_task,
                                            dc.params.epsilon_collect,
                                            derive_seed(seed, SeedPurpose::kCollect, round), obs_dim);
  };
  std::vector<distill::RegressionCertSet> data(static_cast<std::size_t>(n));
  auto absorb = [&](distill::CollectionResult&& fresh) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data[i].empty()) {
        for (const auto& t : tasks) data[i].push_back({t.task_id, distill::RegressionCert(capacity)});
      }
      for (std::size_t k = 0; k < tasks.size(); ++k) {
        const auto& src = fresh.per_agent[i][k].memory;
        for (std::size_t e = 0; e < src.size(); ++e) {
          data[i][k].memory.begin_episode();
          for (const auto& x : src.episode(e)) data[i][k].memory.append(x);
          data[i][k].memory.end_episode();
        }
      }
    }
  };
  absorb(collect(0));
  for (int i = 0; i < n; ++i)
    distill::save_regression_set(out / "regression" / ("agent" + std::to_string(i) + ".bin"),
                                 data[static_cast<std::size_t>(i)]);

  std::vector<distill::DistilledLearner> students;
  std::vector<Rng> rngs;
  for (int i = 0; i < n; ++i) {
    students.emplace_back(spec, dc.params, derive_seed(seed, SeedPurpose::kDistill, 0, i));
    rngs.emplace_back(derive_seed(seed, SeedPurpose::kDistill, 1, i));
  }

  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::uint64_t round = 0;
  for (std::uint64_t it = 0; it < dc.iterations; ++it) {
    if (dc.params.refresh_every > 0 && it > 0 && it % dc.params.refresh_every == 0) absorb(collect(++round));
    for (std::size_t i = 0; i < students.size(); ++i) {
      if (auto m = students[i].distill_iteration(data[i], rngs[i])) {
        loss_sum += m->loss;
        ++loss_count;
      }
    }
    const std::uint64_t epoch = it + 1;
    if (epoch % config.run.eval_every != 0 && epoch != dc.iterations) continue;

    std::vector<nn::ParameterSet<float>> policies;
    for (const auto& s : students) policies.push_back(s.params());
    const auto report = distill::evaluate_multitask(policies, tasks, config.run.eval_episodes,
                                                    derive_seed(seed, SeedPurpose::kEval), config.learner.gamma,
                                                    obs_dim);
    const double loss = mean_loss(loss_sum, loss_count);
    for (std::size_t t = 0; t < tasks.size(); ++t)
      result.rows.push_back(row_from_report(epoch, tasks[t].task_id, report.per_task[t], loss));
    result.rows.push_back(overall_row(epoch, report, loss));
    loss_sum = 0.0;
    loss_count = 0;
    for (int i = 0; i < n; ++i)
      nn::save_checkpoint(distilled_checkpoint(out, i), policies[static_cast<std::size_t>(i)]);
    write_metrics_csv(result.metrics_csv, result.rows);
    progress("distill " + format_row(result.rows.back()));
  }
  write_metrics_csv(result.metrics_csv, result.rows);
  return result;
}

CommandResult cmd_sweep(const ExperimentConfig& input, const fs::path& out, const std::string& parameter,
                        const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  {
    ExperimentConfig probe = input;
    for (double v : values) apply_sweep_value(probe, parameter, v);
  }
  fs::create_directories(out);
  ExperimentConfig config = resolved(input, out);
  config.sweep.parameter = parameter;
  config.sweep.values = values;
  const auto tasks = make_tasks(config);
  json runs = json::array();
  for (double v : values) runs.push_back(parameter + "_" + format_value(v));

  CommandResult result;
  result.metrics_csv = out / "sweep.csv";
  result.manifest = write_manifest(out, "sweep", config, tasks, shared_observation_dim(tasks),
                                   {{"metrics", "sweep.csv"}, {"runs", runs}});

  std::string text = std::string(kSweepHeader) + "\n";
  for (double v : values) {
    ExperimentConfig run = input;
    apply_sweep_value(run, parameter, v);
    run.sweep = {};
    const fs::path dir = out / (parameter + "_" + format_value(v));
    progress("sweep " + parameter + "=" + format_value(v));
    const auto r = cmd_train_single(run, dir);
    for (const auto& row : r.rows) {
      text += parameter + "," + format_value(v) + "," + format_row(row) + "\n";
      result.rows.push_back(row);
    }
  }
  write_file_bytes(result.metrics_csv,
                   std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return result;
}

PolicyKind policy_from_string(const std::string& name) {
  if (name == "auto") return PolicyKind::kAuto;
  if (name == "specialist") return PolicyKind::kSpecialist;
  if (name == "distilled") return PolicyKind::kDistilled;
  if (name == "baseline") return PolicyKind::kBaseline;
  throw ConfigError("unknown policy kind '" + name + "' (expected auto, specialist, distilled or baseline)");
}

CommandResult cmd_evaluate(const ExperimentConfig& input, const fs::path& out, const fs::path& run_dir,
                           PolicyKind policy) {
  const ExperimentConfig config = resolved(input, out);
  const auto tasks = make_tasks(config);
  const std::size_t obs_dim = shared_observation_dim(tasks);
  const auto spec = network_spec(config, obs_dim);
  const auto seed = config.run.seed;
  const auto n = config.domain.n_agents;
  check_tasks_match(run_dir, tasks);

  if (policy == PolicyKind::kAuto) {
    if (fs::exists(distilled_checkpoint(run_dir, 0)))
      policy = PolicyKind::kDistilled;
    else if (fs::exists(baseline_checkpoint(run_dir, 0)))
      policy = PolicyKind::kBaseline;
    else
      policy = PolicyKind::kSpecialist;
  }

  fs::create_directories(out);
  CommandResult result;
  result.metrics_csv = out / "eval.csv";
  result.manifest = write_manifest(out, "evaluate", config, tasks, obs_dim,
                                   {{"metrics", "eval.csv"}, {"source", run_dir.string()}});

  const double nan = std::nan("");
  if (policy == PolicyKind::kSpecialist) {
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      std::vector<fs::path> paths;
      for (int i = 0; i < n; ++i) paths.push_back(specialist_checkpoint(run_dir, tasks[k].task_id, i));
      const auto policies = load_policies(paths, spec);
      const auto report = learner::evaluate(policies, tasks[k], config.run.eval_episodes,
                                            derive_seed(seed, SeedPurpose::kEval, k), config.learner.gamma,
                                            obs_dim);
      result.rows.push_back(row_from_report(0, tasks[k].task_id, report, nan));
    }
  } else {
    std::vector<fs::path> paths;
    for (int i = 0; i < n; ++i)
      paths.push_back(policy == PolicyKind::kDistilled ? distilled_checkpoint(run_dir, i)
                                                       : baseline_checkpoint(run_dir, i));
    const auto policies = load_policies(paths, spec);
    const auto report = distill::evaluate_multitask(policies, tasks, config.run.eval_episodes,
                                                    derive_seed(seed, SeedPurpose::kEval), config.learner.gamma,
                                                    obs_dim);
    for (std::size_t t = 0; t < tasks.size(); ++t)
      result.rows.push_back(row_from_report(0, tasks[t].task_id, report.per_task[t], nan));
    result.rows.push_back(overall_row(0, report, nan));
  }
  write_metrics_csv(result.metrics_csv, result.rows);
  return result;
}

ExperimentConfig load_config_or_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (doc.is_object() && doc.contains("metrics_schema") && doc.contains("config")) {
    if (doc.at("metrics_schema") != kMetricsSchemaVersion)
      throw ConfigError("manifest " + path.string() + " uses an unsupported metrics schema");
    return config_from_json(doc.at("config"));
  }
  return config_from_json(doc);
}

}  // namespace mtmarl::harness
