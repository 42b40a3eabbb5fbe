#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtmarl/common/seed.hpp"

namespace mtmarl::env {

enum class Mode { kMast, kMamt };

// Index order is fixed: observations and Q-vectors use it directly.
enum class Action : int { kNorth = 0, kSouth = 1, kEast = 2, kWest = 3, kWait = 4 };
inline constexpr int kNumActions = 5;

// Probability that an agent's realized move is replaced by a uniformly
// random move to one of its four neighbours.
inline constexpr double kTransitionNoise = 0.1;

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

// Categorical distribution over a target's five moves (Action order).
struct TargetDynamics {
  std::array<double, kNumActions> move_probs{0.0, 0.0, 0.0, 0.0, 1.0};
};

struct TaskSpec {
  int task_id = 0;
  int grid = 3;
  int n_agents = 2;
  Mode mode = Mode::kMamt;
  // assignment[i] = index of the target agent i must capture.
  std::vector<int> assignment;
  double p_flicker = 0.0;
  std::vector<TargetDynamics> target_dynamics;
  int horizon = 30;
  std::uint64_t dynamics_seed = 0;

  int num_targets() const { return mode == Mode::kMast ? 1 : n_agents; }
  int num_cells() const { return grid * grid; }
  // Native encoding length: m^2 + targets * (m^2 + 1).
  std::size_t observation_dim() const;
  // Throws ConfigError when invariants fail.
  void validate() const;
};

// Grid sizes, mode, team size and flicker for a family of tasks.
struct DomainConfig {
  Mode mode = Mode::kMamt;
  std::vector<int> grid_sizes{3};
  int n_agents = 2;
  double p_flicker = 0.0;
  // 0 selects the default horizon of 10 * m.
  int horizon = 0;
  // Target dynamics ~ Dirichlet(c, c, c, c, c_wait) over (N, S, E, W, wait).
  double dynamics_concentration = 1.0;
  double dynamics_wait_concentration = 1.0;
};

struct EnvState {
  std::vector<Cell> agents;
  std::vector<Cell> targets;
  int t = 0;
  bool done = false;
};

// Decoded form of one agent's local observation.
struct LocalObservation {
  Cell own;
  std::vector<std::optional<Cell>> targets;  // nullopt when occluded

  // Layout: own one-hot [m^2], then per target: one-hot [m^2], occluded bit.
  // Zero-filled up to max(native length, pad_to).
  std::vector<float> encode(int grid, std::size_t pad_to = 0) const;
};

struct StepResult {
  std::vector<LocalObservation> observations;
  double reward = 0.0;
  bool done = false;
  EnvState state;
};

struct ResetResult {
  EnvState state;
  std::vector<LocalObservation> observations;
};

TargetDynamics sample_target_dynamics(Rng& rng, double concentration,
                                      double wait_concentration);

// Draws grid size, agent->target assignment and per-target dynamics.
TaskSpec sample_task(const DomainConfig& config, Rng& rng, int task_id = 0);

// Uniform placement of every agent and target; collisions allowed.
ResetResult reset(const TaskSpec& task, std::uint64_t episode_seed);

// One joint transition. Throws StateError on a finished episode and
// ConfigError on an invalid action.
StepResult step(const TaskSpec& task, const EnvState& state, std::span<const int> joint_action,
                Rng& rng);

// Observation of `agent`; all targets are hidden when `occluded` is set.
LocalObservation encode_observation(const EnvState& state, int agent, bool occluded);

Cell move(Cell cell, Action action, int grid);

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);

// Structured text form of a task (JSON object with documented keys).
nlohmann::json task_to_json(const TaskSpec& task);
TaskSpec task_from_json(const nlohmann::json& j);

// One CSV row per (t, agent): episode,t,agent,action,reward,done
struct TraceRow {
  std::uint64_t episode = 0;
  int t = 0;
  int agent = 0;
  int action = 0;
  double reward = 0.0;
  bool done = false;
};
void write_trace_csv(std::ostream& out, std::span<const TraceRow> rows, bool header = true);

}  // namespace mtmarl::env
