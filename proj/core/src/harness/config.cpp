#include "mtmarl/harness/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "mtmarl/common/error.hpp"
#include "mtmarl/common/seed.hpp"

namespace mtmarl::harness {

using nlohmann::json;

namespace {

// Reads typed keys from one JSON object and rejects whatever is left over.
class Section {
 public:
  Section(const json& doc, std::string name) : name_(std::move(name)) {
    if (doc.contains(name_)) {
      if (!doc.at(name_).is_object()) throw ConfigError("section '" + name_ + "' must be an object");
      obj_ = &doc.at(name_);
    }
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return;
    const json& v = obj_->at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>)
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
            throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError("invalid value for " + name_ + "." + key + ": " + v.dump());
    }
  }

  void finish() const {
    if (!obj_) return;
    for (const auto& [key, value] : obj_->items())
      if (!seen_.count(key)) throw ConfigError("unknown key " + name_ + "." + key);
  }

 private:
  std::string name_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

const std::set<std::string> kSections{"domain", "network", "learner", "distill", "run", "sweep"};

}  // namespace

void ExperimentConfig::validate() const {
  if (domain.grid_sizes.empty()) throw ConfigError("domain.grid_sizes must not be empty");
  for (int m : domain.grid_sizes)
    if (m < 1) throw ConfigError("domain.grid_sizes entries must be >= 1");
  if (domain.n_agents < 1) throw ConfigError("domain.n_agents must be >= 1");
  if (!(domain.p_flicker >= 0.0 && domain.p_flicker <= 1.0))
    throw ConfigError("domain.p_flicker must lie in [0, 1]");
  if (domain.horizon < 0) throw ConfigError("domain.horizon must be >= 0");
  if (!(domain.dynamics_concentration > 0.0) || !(domain.dynamics_wait_concentration > 0.0))
    throw ConfigError("domain dynamics concentrations must be positive");

  if (network.lstm_cells == 0) throw ConfigError("network.lstm_cells must be >= 1");
  for (auto w : network.mlp_pre)
    if (w == 0) throw ConfigError("network.mlp_pre widths must be >= 1");
  for (auto w : network.mlp_post)
    if (w == 0) throw ConfigError("network.mlp_post widths must be >= 1");

  learner.validate();
  distill.params.validate();
  if (distill.iterations == 0) throw ConfigError("distill.iterations must be >= 1");

  if (run.episodes == 0) throw ConfigError("run.episodes must be >= 1");
  if (run.eval_every == 0) throw ConfigError("run.eval_every must be >= 1");
  if (run.eval_episodes == 0) throw ConfigError("run.eval_episodes must be >= 1");
  if (run.output_dir.empty()) throw ConfigError("run.output_dir must not be empty");

  if (!sweep.parameter.empty() && sweep.parameter != "beta" && sweep.parameter != "tracelength")
    throw ConfigError("unknown sweep parameter '" + sweep.parameter + "' (expected beta or tracelength)");
}

ExperimentConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config root must be an object");
  for (const auto& [key, value] : doc.items())
    if (!kSections.count(key)) throw ConfigError("unknown config section '" + key + "'");

  ExperimentConfig c;
  {
    Section s(doc, "domain");
    std::string mode = env::to_string(c.domain.mode);
    s.read("mode", mode);
    c.domain.mode = env::mode_from_string(mode);
    s.read("grid_sizes", c.domain.grid_sizes);
    s.read("n_agents", c.domain.n_agents);
    s.read("p_flicker", c.domain.p_flicker);
    s.read("horizon", c.domain.horizon);
    s.read("dynamics_concentration", c.domain.dynamics_concentration);
    s.read("dynamics_wait_concentration", c.domain.dynamics_wait_concentration);
    s.finish();
  }
  {
    Section s(doc, "network");
    s.read("mlp_pre", c.network.mlp_pre);
    s.read("lstm_cells", c.network.lstm_cells);
    s.read("mlp_post", c.network.mlp_post);
    s.finish();
  }
  {
    Section s(doc, "learner");
    auto& l = c.learner;
    s.read("gamma", l.gamma);
    s.read("hysteresis_beta", l.hysteresis_beta);
    s.read("base_lr", l.base_lr);
    s.read("batch", l.batch);
    s.read("tracelength", l.tracelength);
    s.read("target_sync_period", l.target_sync_period);
    s.read("replay_capacity", l.replay_capacity);
    s.read("warmup_episodes", l.warmup_episodes);
    s.read("train_iterations_per_episode", l.train_iterations_per_episode);
    s.read("epsilon_start", l.epsilon_start);
    s.read("epsilon_end", l.epsilon_end);
    s.read("epsilon_anneal_fraction", l.epsilon_anneal_fraction);
    s.finish();
  }
  {
    Section s(doc, "distill");
    auto& d = c.distill.params;
    s.read("temperature", d.temperature);
    s.read("batch", d.batch);
    s.read("tracelength", d.tracelength);
    s.read("base_lr", d.base_lr);
    s.read("epsilon_collect", d.epsilon_collect);
    s.read("collect_episodes_per_task", d.collect_episodes_per_task);
    s.read("refresh_every", d.refresh_every);
    s.read("iterations", c.distill.iterations);
    s.read("regression_capacity", c.distill.regression_capacity);
    s.finish();
  }
  {
    Section s(doc, "run");
    s.read("seed", c.run.seed);
    s.read("episodes", c.run.episodes);
    s.read("eval_every", c.run.eval_every);
    s.read("eval_episodes", c.run.eval_episodes);
    s.read("baseline_episodes", c.run.baseline_episodes);
    s.read("output_dir", c.run.output_dir);
    s.finish();
  }
  {
    Section s(doc, "sweep");
    s.read("parameter", c.sweep.parameter);
    s.read("values", c.sweep.values);
    s.finish();
  }
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["domain"] = {{"mode", env::to_string(c.domain.mode)},
                 {"grid_sizes", c.domain.grid_sizes},
                 {"n_agents", c.domain.n_agents},
                 {"p_flicker", c.domain.p_flicker},
                 {"horizon", c.domain.horizon},
                 {"dynamics_concentration", c.domain.dynamics_concentration},
                 {"dynamics_wait_concentration", c.domain.dynamics_wait_concentration}};
  j["network"] = {{"mlp_pre", c.network.mlp_pre},
                  {"lstm_cells", c.network.lstm_cells},
                  {"mlp_post", c.network.mlp_post}};
  const auto& l = c.learner;
  j["learner"] = {{"gamma", l.gamma},
                  {"hysteresis_beta", l.hysteresis_beta},
                  {"base_lr", l.base_lr},
                  {"batch", l.batch},
                  {"tracelength", l.tracelength},
                  {"target_sync_period", l.target_sync_period},
                  {"replay_capacity", l.replay_capacity},
                  {"warmup_episodes", l.warmup_episodes},
                  {"train_iterations_per_episode", l.train_iterations_per_episode},
                  {"epsilon_start", l.epsilon_start},
                  {"epsilon_end", l.epsilon_end},
                  {"epsilon_anneal_fraction", l.epsilon_anneal_fraction}};
  const auto& d = c.distill.params;
  j["distill"] = {{"temperature", d.temperature},
                  {"batch", d.batch},
                  {"tracelength", d.tracelength},
                  {"base_lr", d.base_lr},
                  {"epsilon_collect", d.epsilon_collect},
                  {"collect_episodes_per_task", d.collect_episodes_per_task},
                  {"refresh_every", d.refresh_every},
                  {"iterations", c.distill.iterations},
                  {"regression_capacity", c.distill.regression_capacity}};
  j["run"] = {{"seed", c.run.seed},
              {"episodes", c.run.episodes},
              {"eval_every", c.run.eval_every},
              {"eval_episodes", c.run.eval_episodes},
              {"baseline_episodes", c.run.baseline_episodes},
              {"output_dir", c.run.output_dir}};
  j["sweep"] = {{"parameter", c.sweep.parameter}, {"values", c.sweep.values}};
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(doc);
}

std::vector<env::TaskSpec> make_tasks(const ExperimentConfig& config) {
  std::vector<env::TaskSpec> tasks;
  for (std::size_t k = 0; k < config.domain.grid_sizes.size(); ++k) {
    env::DomainConfig single = config.domain;
    single.grid_sizes = {config.domain.grid_sizes[k]};
    Rng rng(derive_seed(config.run.seed, SeedPurpose::kTask, k));
    tasks.push_back(env::sample_task(single, rng, static_cast<int>(k)));
  }
  return tasks;
}

std::size_t shared_observation_dim(const std::vector<env::TaskSpec>& tasks) {
  std::size_t dim = 0;
  for (const auto& t : tasks) dim = std::max(dim, t.observation_dim());
  return dim;
}

nn::NetworkSpec network_spec(const ExperimentConfig& config, std::size_t input_dim) {
  nn::NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.mlp_pre = config.network.mlp_pre;
  spec.lstm_cells = config.network.lstm_cells;
  spec.mlp_post = config.network.mlp_post;
  spec.output_dim = env::kNumActions;
  spec.validate();
  return spec;
}

void apply_sweep_value(ExperimentConfig& config, const std::string& parameter, double value) {
  if (parameter == "beta") {
    config.learner.hysteresis_beta = value;
  } else if (parameter == "tracelength") {
    if (!(value >= 1.0) || value != std::floor(value))
      throw ConfigError("tracelength sweep values must be positive integers");
    config.learner.tracelength = static_cast<std::size_t>(value);
  } else {
    throw ConfigError("unknown sweep parameter '" + parameter + "' (expected beta or tracelength)");
  }
  config.learner.validate();
}

}  // namespace mtmarl::harness
