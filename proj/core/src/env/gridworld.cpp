#include "mtmarl/env/gridworld.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "mtmarl/common/error.hpp"

namespace mtmarl::env {

namespace {

int wrap(int v, int grid) {
  const int r = v % grid;
  return r < 0 ? r + grid : r;
}

int cell_index(Cell c, int grid) { return c.y * grid + c.x; }

Cell random_cell(Rng& rng, int grid) {
  std::uniform_int_distribution<int> pick(0, grid * grid - 1);
  const int k = pick(rng);
  return {k % grid, k / grid};
}

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

Action sample_move(const TargetDynamics& dyn, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    acc += dyn.move_probs[a];
    if (u < acc) return static_cast<Action>(a);
  }
  return Action::kWait;
}

std::vector<LocalObservation> observe_all(const TaskSpec& task, const EnvState& state, Rng& rng) {
  std::vector<LocalObservation> obs;
  obs.reserve(task.n_agents);
  for (int i = 0; i < task.n_agents; ++i) {
    const bool occluded = uniform01(rng) < task.p_flicker;
    obs.push_back(encode_observation(state, i, occluded));
  }
  return obs;
}

}  // namespace

std::size_t TaskSpec::observation_dim() const {
  const auto cells = static_cast<std::size_t>(num_cells());
  return cells + static_cast<std::size_t>(num_targets()) * (cells + 1);
}

void TaskSpec::validate() const {
  if (grid < 1) throw ConfigError("task grid size must be >= 1");
  if (n_agents < 1) throw ConfigError("task needs at least one agent");
  if (horizon < 1) throw ConfigError("task horizon must be >= 1");
  if (!(p_flicker >= 0.0 && p_flicker <= 1.0)) throw ConfigError("p_flicker must lie in [0, 1]");
  if (static_cast<int>(assignment.size()) != n_agents)
    throw ConfigError("assignment must have one entry per agent");
  if (mode == Mode::kMast) {
    if (std::any_of(assignment.begin(), assignment.end(), [](int a) { return a != 0; }))
      throw ConfigError("MAST tasks assign every agent to target 0");
  } else {
    std::vector<int> sorted = assignment;
    std::sort(sorted.begin(), sorted.end());
    for (int k = 0; k < n_agents; ++k)
      if (sorted[k] != k) throw ConfigError("MAMT assignment must be a permutation");
  }
  if (static_cast<int>(target_dynamics.size()) != num_targets())
    throw ConfigError("target_dynamics must have one entry per target");
  for (const auto& dyn : target_dynamics) {
    double total = 0.0;
    for (double p : dyn.move_probs) {
      if (p < 0.0) throw ConfigError("target move probabilities must be non-negative");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("target move probabilities must sum to 1");
  }
}

std::vector<float> LocalObservation::encode(int grid, std::size_t pad_to) const {
  const std::size_t cells = static_cast<std::size_t>(grid) * static_cast<std::size_t>(grid);
  const std::size_t native = cells + targets.size() * (cells + 1);
  std::vector<float> out(std::max(native, pad_to), 0.0f);
  out[static_cast<std::size_t>(cell_index(own, grid))] = 1.0f;
  std::size_t base = cells;
  for (const auto& target : targets) {
    if (target) {
      out[base + static_cast<std::size_t>(cell_index(*target, grid))] = 1.0f;
    } else {
      out[base + cells] = 1.0f;
    }
    base += cells + 1;
  }
  return out;
}

Cell move(Cell cell, Action action, int grid) {
  switch (action) {
    case Action::kNorth: return {cell.x, wrap(cell.y - 1, grid)};
    case Action::kSouth: return {cell.x, wrap(cell.y + 1, grid)};
    case Action::kEast: return {wrap(cell.x + 1, grid), cell.y};
    case Action::kWest: return {wrap(cell.x - 1, grid), cell.y};
    case Action::kWait: return cell;
  }
  return cell;
}

TargetDynamics sample_target_dynamics(Rng& rng, double concentration, double wait_concentration) {
  std::gamma_distribution<double> move_gamma(concentration, 1.0);
  std::gamma_distribution<double> wait_gamma(wait_concentration, 1.0);
  TargetDynamics dyn;
  double total = 0.0;
  for (std::size_t a = 0; a < kNumActions; ++a) {
    double& p = dyn.move_probs[a];
    p = a == static_cast<std::size_t>(Action::kWait) ? wait_gamma(rng) : move_gamma(rng);
    total += p;
  }
  if (total <= 0.0) {
    dyn.move_probs = {0.0, 0.0, 0.0, 0.0, 1.0};
    return dyn;
  }
  for (double& p : dyn.move_probs) p /= total;
  return dyn;
}

TaskSpec sample_task(const DomainConfig& config, Rng& rng, int task_id) {
  if (config.grid_sizes.empty()) throw ConfigError("domain config lists no grid sizes");
  if (config.n_agents < 1) throw ConfigError("domain config needs at least one agent");
  if (!(config.dynamics_concentration > 0.0) || !(config.dynamics_wait_concentration > 0.0))
    throw ConfigError("target dynamics concentrations must be positive");

  TaskSpec task;
  task.task_id = task_id;
  task.mode = config.mode;
  task.n_agents = config.n_agents;
  task.p_flicker = config.p_flicker;
  std::uniform_int_distribution<std::size_t> pick(0, config.grid_sizes.size() - 1);
  task.grid = config.grid_sizes[pick(rng)];
  task.horizon = config.horizon > 0 ? config.horizon : 10 * task.grid;

  task.assignment.assign(static_cast<std::size_t>(task.n_agents), 0);
  if (task.mode == Mode::kMamt) {
    std::iota(task.assignment.begin(), task.assignment.end(), 0);
    std::shuffle(task.assignment.begin(), task.assignment.end(), rng);
  }

  task.dynamics_seed = rng();
  Rng dyn_rng(task.dynamics_seed);
  for (int k = 0; k < task.num_targets(); ++k)
    task.target_dynamics.push_back(sample_target_dynamics(dyn_rng, config.dynamics_concentration,
                                                             config.dynamics_wait_concentration));
  task.validate();
  return task;
}

LocalObservation encode_observation(const EnvState& state, int agent, bool occluded) {
  if (agent < 0 || agent >= static_cast<int>(state.agents.size()))
    throw ConfigError("agent index out of range");
  LocalObservation obs;
  obs.own = state.agents[static_cast<std::size_t>(agent)];
  obs.targets.reserve(state.targets.size());
  for (const Cell& target : state.targets)
    obs.targets.push_back(occluded ? std::nullopt : std::optional<Cell>(target));
  return obs;
}

ResetResult reset(const TaskSpec& task, std::uint64_t episode_seed) {
  Rng rng(episode_seed);
  ResetResult out;
  for (int i = 0; i < task.n_agents; ++i) out.state.agents.push_back(random_cell(rng, task.grid));
  for (int k = 0; k < task.num_targets(); ++k) out.state.targets.push_back(random_cell(rng, task.grid));
  out.observations = observe_all(task, out.state, rng);
  return out;
}

StepResult step(const TaskSpec& task, const EnvState& state, std::span<const int> joint_action,
                Rng& rng) {
  if (state.done || state.t >= task.horizon) throw StateError("step called on a finished episode");
  if (static_cast<int>(joint_action.size()) != task.n_agents)
    throw ConfigError("joint action must have one entry per agent");
  for (int a : joint_action)
    if (a < 0 || a >= kNumActions) throw ConfigError("invalid action index " + std::to_string(a));

  StepResult out;
  out.state = state;
  std::uniform_int_distribution<int> neighbour(0, 3);
  for (int i = 0; i < task.n_agents; ++i) {
    auto intended = static_cast<Action>(joint_action[static_cast<std::size_t>(i)]);
    if (uniform01(rng) < kTransitionNoise) intended = static_cast<Action>(neighbour(rng));
    auto& pos = out.state.agents[static_cast<std::size_t>(i)];
    pos = move(pos, intended, task.grid);
  }
  for (int k = 0; k < task.num_targets(); ++k) {
    auto& pos = out.state.targets[static_cast<std::size_t>(k)];
    pos = move(pos, sample_move(task.target_dynamics[static_cast<std::size_t>(k)], rng), task.grid);
  }

  bool captured = true;
  for (int i = 0; i < task.n_agents && captured; ++i) {
    const auto target = static_cast<std::size_t>(task.assignment[static_cast<std::size_t>(i)]);
    captured = out.state.agents[static_cast<std::size_t>(i)] == out.state.targets[target];
  }
  out.reward = captured ? 1.0 : 0.0;
  out.state.t = state.t + 1;
  out.done = captured || out.state.t >= task.horizon;
  out.state.done = out.done;
  out.observations = observe_all(task, out.state, rng);
  return out;
}

std::string to_string(Mode mode) { return mode == Mode::kMast ? "MAST" : "MAMT"; }

Mode mode_from_string(const std::string& name) {
  if (name == "MAST" || name == "mast") return Mode::kMast;
  if (name == "MAMT" || name == "mamt") return Mode::kMamt;
  throw ConfigError("unknown mode '" + name + "' (expected MAST or MAMT)");
}

nlohmann::json task_to_json(const TaskSpec& task) {
  nlohmann::json dyn = nlohmann::json::array();
  for (const auto& d : task.target_dynamics) dyn.push_back(d.move_probs);
  return {{"task_id", task.task_id},
          {"grid", task.grid},
          {"n_agents", task.n_agents},
          {"mode", to_string(task.mode)},
          {"assignment", task.assignment},
          {"p_flicker", task.p_flicker},
          {"target_dynamics", dyn},
          {"horizon", task.horizon},
          {"dynamics_seed", task.dynamics_seed}};
}

TaskSpec task_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> kKeys = {"task_id",   "grid",           "n_agents",
                                                 "mode",      "assignment",     "p_flicker",
                                                 "target_dynamics", "horizon", "dynamics_seed"};
  for (const auto& [key, _] : j.items())
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end())
      throw ConfigError("unknown task key '" + key + "'");
  TaskSpec task;
  try {
    task.task_id = j.at("task_id").get<int>();
    task.grid = j.at("grid").get<int>();
    task.n_agents = j.at("n_agents").get<int>();
    task.mode = mode_from_string(j.at("mode").get<std::string>());
    task.assignment = j.at("assignment").get<std::vector<int>>();
    task.p_flicker = j.at("p_flicker").get<double>();
    for (const auto& d : j.at("target_dynamics"))
      task.target_dynamics.push_back({d.get<std::array<double, kNumActions>>()});
    task.horizon = j.at("horizon").get<int>();
    task.dynamics_seed = j.at("dynamics_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed task block: ") + e.what());
  }
  task.validate();
  return task;
}

void write_trace_csv(std::ostream& out, std::span<const TraceRow> rows, bool header) {
  if (header) out << "episode,t,agent,action,reward,done\n";
  for (const auto& row : rows) {
    out << row.episode << ',' << row.t << ',' << row.agent << ',' << row.action << ','
        << row.reward << ',' << (row.done ? 1 : 0) << '\n';
  }
}

}  // namespace mtmarl::env
