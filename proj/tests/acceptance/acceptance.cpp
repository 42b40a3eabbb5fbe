// Acceptance suite: prints one PASS/FAIL line per criterion and exits nonzero
// when any criterion fails.
//
//   mtmarl_acceptance [--only 1,2,...] [--work DIR] [--configs DIR] [--fresh]
//
// Training runs are cached under --work and reused when their manifest config
// matches; --fresh discards the cache.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mtmarl/common/seed.hpp"
#include "mtmarl/distill/distiller.hpp"
#include "mtmarl/env/gridworld.hpp"
#include "mtmarl/harness/commands.hpp"
#include "mtmarl/harness/config.hpp"
#include "mtmarl/learner/hdrqn.hpp"
#include "mtmarl/replay/cert.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace mtmarl;
using nn::HiddenState;
using nn::ParameterSet;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  std::set<int> only;
  fs::path work = "acceptance_runs";
  fs::path configs = MTMARL_CONFIG_DIR;
  bool fresh = false;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- criterion 1

double weighted_td(const ParameterSet<double>& p, const learner::TdBatch& batch, const std::vector<double>& y,
                   const std::vector<double>& weight) {
  double total = 0.0;
  std::size_t valid = 0;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    std::vector<std::vector<double>> seq;
    for (std::size_t t = 0; t < batch.tracelength && batch.valid(b, t); ++t)
      seq.emplace_back(batch.at(b, t).obs.begin(), batch.at(b, t).obs.end());
    if (seq.empty()) continue;
    const auto out = nn::forward_sequence<double>(p, seq, HiddenState<double>::zeros(p.spec()));
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const std::size_t s = b * batch.tracelength + t;
      const double d = y[s] - out.q[t](batch.at(b, t).action, 0);
      total += weight[s] * d * d;
      ++valid;
    }
  }
  return total / static_cast<double>(valid);
}

double reference_kl(const ParameterSet<double>& p, const distill::RegressionBatch& batch, double temperature) {
  double total = 0.0;
  std::size_t valid = 0;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    std::vector<std::vector<double>> seq;
    for (std::size_t t = 0; t < batch.tracelength && batch.valid(b, t); ++t)
      seq.emplace_back(batch.at(b, t).obs.begin(), batch.at(b, t).obs.end());
    if (seq.empty()) continue;
    const auto out = nn::forward_sequence<double>(p, seq, HiddenState<double>::zeros(p.spec()));
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const auto& q = batch.at(b, t).q;
      std::vector<double> teacher(q.size());
      std::vector<double> student(q.size());
      for (std::size_t a = 0; a < q.size(); ++a) {
        teacher[a] = q[a] / temperature;
        student[a] = out.q[t](static_cast<Eigen::Index>(a), 0);
      }
      const auto pt = distill::softmax(teacher);
      const auto ps = distill::softmax(student);
      for (std::size_t a = 0; a < q.size(); ++a)
        if (pt[a] > 0) total += pt[a] * (std::log(pt[a]) - std::log(ps[a]));
      ++valid;
    }
  }
  return total / static_cast<double>(valid);
}

Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n01;
  double worst_td = 0.0;
  double worst_kl = 0.0;
  std::size_t max_params = 0;
  const int networks = 20;
  for (int trial = 0; trial < networks; ++trial) {
    const auto spec = testing::tiny_spec(3, 3);
    max_params = std::max(max_params, spec.parameter_count());
    const auto p = testing::random_params(spec, 1000 + static_cast<std::uint64_t>(trial));
    const std::size_t tau = 1 + static_cast<std::size_t>(trial) % 8;

    std::vector<std::vector<replay::ExperienceTuple>> traces(3);
    std::vector<std::vector<distill::RegressionExperience>> rtraces(3);
    for (std::size_t b = 0; b < 3; ++b) {
      const std::size_t len = b == 0 ? tau : 1 + rng() % tau;
      for (std::size_t t = 0; t < len; ++t) {
        replay::ExperienceTuple e;
        e.obs = testing::random_obs(3, rng);
        e.next_obs = testing::random_obs(3, rng);
        e.action = static_cast<int>(rng() % 3);
        traces[b].push_back(e);
        distill::RegressionExperience r{testing::random_obs(3, rng), {}};
        for (int a = 0; a < 3; ++a) r.q.push_back(static_cast<float>(n01(rng)));
        rtraces[b].push_back(r);
      }
    }
    const auto batch = testing::make_batch(traces, tau);
    std::vector<double> y(batch.slots.size());
    for (double& v : y) v = n01(rng);
    const double beta = trial % 2 == 0 ? 1.0 : 0.3;
    const auto td = learner::hysteretic_loss_grads<double>(p, batch, y, beta);
    std::vector<double> weight(y.size(), 1.0);
    for (std::size_t b = 0; b < batch.batch; ++b) {
      std::vector<std::vector<double>> seq;
      for (std::size_t t = 0; t < tau && batch.valid(b, t); ++t)
        seq.emplace_back(batch.at(b, t).obs.begin(), batch.at(b, t).obs.end());
      const auto out = nn::forward_sequence<double>(p, seq, HiddenState<double>::zeros(spec));
      for (std::size_t t = 0; t < seq.size(); ++t)
        if (y[b * tau + t] - out.q[t](batch.at(b, t).action, 0) < 0) weight[b * tau + t] = beta;
    }
    worst_td = std::max(worst_td, testing::max_relative_error(p, td.grads, [&](const ParameterSet<double>& q) {
                          return weighted_td(q, batch, y, weight);
                        }));

    const auto rbatch = testing::make_batch(rtraces, tau);
    const double temperature = trial % 3 == 0 ? 0.5 : 1.0;
    const auto kl = distill::kl_loss_grads<double>(p, rbatch, temperature);
    worst_kl = std::max(worst_kl, testing::max_relative_error(p, kl.grads, [&](const ParameterSet<double>& q) {
                          return reference_kl(q, rbatch, temperature);
                        }));
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_td < 1e-4 && worst_kl < 1e-4 && max_params <= 200 && secs < 60.0;
  return {pass, fmt("gradient correctness: max rel err TD %.2e, KL %.2e over %d networks of %zu params, "
                    "traces <= 8 (%.1f s)",
                    worst_td, worst_kl, networks, max_params, secs)};
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion_cert_inclusion() {
  const auto t0 = std::chrono::steady_clock::now();
  using Memory = replay::EpisodicMemory<int>;
  Memory m;
  m.begin_episode();
  for (int t = 0; t <= 5; ++t) m.append(t);  // H_e = 5
  m.end_episode();
  const std::size_t tau = 4;

  // Exhaustive: every start timestep once, count slots holding each t.
  std::vector<int> covered(6, 0);
  int starts = 0;
  for (std::int64_t t0s = -static_cast<std::int64_t>(tau) + 1; t0s <= 5; ++t0s) {
    const auto batch = replay::extract_traces(m, replay::SampleIndexPlan{{{0, t0s}}, tau, m.generation()});
    for (std::size_t k = 0; k < tau; ++k)
      if (batch.valid(0, k)) covered[static_cast<std::size_t>(batch.at(0, k))]++;
    ++starts;
  }
  bool exact = starts == 9;
  for (int c : covered) exact = exact && c * 9 == 4 * starts;

  // Sampled: 1e5 plans, start timesteps uniform within 3 sigma.
  const std::vector<std::size_t> lengths{6};
  std::map<std::int64_t, int> counts;
  const int n = 100000;
  for (int k = 0; k < n; ++k)
    counts[replay::plan_indices(77, static_cast<std::uint64_t>(k), lengths, 1, tau)->traces[0].start]++;
  const double p = 1.0 / 9.0;
  const double sigma = std::sqrt(n * p * (1 - p));
  double worst_z = 0.0;
  for (std::int64_t s = -3; s <= 5; ++s) worst_z = std::max(worst_z, std::abs(counts[s] - n * p) / sigma);
  const bool uniform = counts.size() == 9 && worst_z <= 3.0;
  const double secs = seconds_since(t0);
  return {exact && uniform && secs < 60.0,
          fmt("CERT equal inclusion: exhaustive H_e=5, tau=4 gives %d/%d for every timestep%s; "
              "1e5 sampled starts max |z| = %.2f (%.1f s)",
              covered[0], starts, exact ? "" : " (MISMATCH)", worst_z, secs)};
}

// ---------------------------------------------------------------- criterion 3

Outcome criterion_cert_concurrency() {
  const auto t0 = std::chrono::steady_clock::now();
  env::DomainConfig dc;
  dc.grid_sizes = {3};
  dc.p_flicker = 0.3;
  Rng trng(4);
  const auto task = env::sample_task(dc, trng);
  const auto spec = testing::tiny_spec(task.observation_dim(), env::kNumActions);
  learner::LearnerConfig cfg;
  cfg.batch = 8;
  std::vector<learner::AgentLearner> agents;
  for (int i = 0; i < 2; ++i) agents.emplace_back(spec, cfg, derive_seed(9, i));
  for (std::uint64_t e = 0; e < 40; ++e)
    learner::collect_episode(agents, task, 1.0, {derive_seed(1, e), derive_seed(2, e), 3}, task.observation_dim());

  const std::uint64_t stream = derive_seed(5, SeedPurpose::kSampling);
  std::size_t equal = 0;
  const std::size_t iterations = 10000;
  for (std::uint64_t it = 0; it < iterations; ++it) {
    const auto a = agents[0].memory().plan(stream, it, cfg.batch, cfg.tracelength);
    const auto b = agents[1].memory().plan(stream, it, cfg.batch, cfg.tracelength);
    equal += (a && b && *a == *b) ? 1 : 0;
  }
  const double secs = seconds_since(t0);
  return {equal == iterations && secs < 60.0,
          fmt("CERT concurrency: %zu/%zu identical plans across two agents (%.1f s)", equal, iterations, secs)};
}

// ---------------------------------------------------------------- criterion 4

Outcome criterion_hysteresis_gating() {
  std::mt19937_64 rng(31);
  const auto spec = testing::tiny_spec(3, 3);
  const auto p = nn::build_network<float>(spec, 12);
  const std::size_t n = 8;
  const std::size_t tau = 4;
  std::vector<std::vector<replay::ExperienceTuple>> traces(n);
  for (auto& tr : traces) {
    const std::size_t len = 1 + rng() % tau;
    for (std::size_t t = 0; t < len; ++t) {
      replay::ExperienceTuple e;
      e.obs = testing::random_obs(3, rng);
      e.action = static_cast<int>(rng() % 3);
      tr.push_back(e);
    }
  }
  const auto batch = testing::make_batch(traces, tau);
  std::vector<float> y(batch.slots.size());
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (float& v : y) v = u(rng);

  // Plain masked squared-TD gradient, assembled independently of the loss code.
  std::vector<nn::Matrix<float>> inputs(tau, nn::Matrix<float>::Zero(3, static_cast<Eigen::Index>(n)));
  std::vector<std::uint8_t> mask(n * tau, 0);
  std::size_t valid = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t t = 0; t < tau; ++t)
      if (batch.valid(b, t)) {
        for (int r = 0; r < 3; ++r)
          inputs[t](r, static_cast<Eigen::Index>(b)) = batch.at(b, t).obs[static_cast<std::size_t>(r)];
        mask[t * n + b] = 1;
        ++valid;
      }
  const auto out = nn::forward_sequence<float>(p, std::span<const nn::Matrix<float>>(inputs),
                                               HiddenState<float>::zeros(spec, n));
  auto plain_grad = [&](bool drop_negative) {
    std::vector<nn::Matrix<float>> dq(tau, nn::Matrix<float>::Zero(3, static_cast<Eigen::Index>(n)));
    const float scale = 2.0f / static_cast<float>(valid);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t t = 0; t < tau; ++t)
        if (batch.valid(b, t)) {
          const int a = batch.at(b, t).action;
          const float delta = y[b * tau + t] - out.q[t](a, static_cast<Eigen::Index>(b));
          if (drop_negative && delta < 0) continue;
          dq[t](a, static_cast<Eigen::Index>(b)) = -scale * delta;
        }
    return nn::backward_sequence<float>(p, out.cache, std::span<const nn::Matrix<float>>(dq), mask).flatten();
  };

  const bool beta_one = learner::hysteretic_loss_grads<float>(p, batch, y, 1.0).grads.flatten() == plain_grad(false);
  const bool beta_zero = learner::hysteretic_loss_grads<float>(p, batch, y, 0.0).grads.flatten() == plain_grad(true);
  std::vector<float> all_low(y.size(), -100.0f);
  bool zeroed = true;
  for (float g : learner::hysteretic_loss_grads<float>(p, batch, all_low, 0.0).grads.flatten()) zeroed = zeroed && g == 0.0f;
  return {beta_one && beta_zero && zeroed,
          fmt("hysteresis gating: beta=1 bit-identical to plain loss: %s; beta=0 equals plain loss with negative "
              "deltas removed: %s; all-negative batch gives exact zero gradient: %s",
              beta_one ? "yes" : "no", beta_zero ? "yes" : "no", zeroed ? "yes" : "no")};
}

// ---------------------------------------------------------------- criterion 5

Outcome criterion_environment() {
  const auto t0 = std::chrono::steady_clock::now();
  env::DomainConfig dc;
  dc.grid_sizes = {5};
  dc.p_flicker = 0.3;
  Rng trng(8);
  auto task = env::sample_task(dc, trng);
  Rng rng(123);

  // Transition noise: agents choose wait; any displacement is noise.
  std::size_t moved = 0;
  std::size_t agent_steps = 0;
  const std::vector<int> wait(2, static_cast<int>(env::Action::kWait));
  auto state = env::reset(task, rng()).state;
  while (agent_steps < 100000) {
    if (state.done) state = env::reset(task, rng()).state;
    const auto s = env::step(task, state, wait, rng);
    for (std::size_t i = 0; i < 2; ++i) moved += s.state.agents[i] == state.agents[i] ? 0 : 1;
    agent_steps += 2;
    state = s.state;
  }
  const double noise = static_cast<double>(moved) / static_cast<double>(agent_steps);

  // Flicker and reward fuzzing with uniformly random joint actions.
  std::size_t occluded = 0;
  std::size_t observations = 0;
  std::size_t violations = 0;
  std::size_t captures = 0;
  std::uniform_int_distribution<int> act(0, env::kNumActions - 1);
  for (int grid : {1, 2, 3, 4, 5, 6}) {
    dc.grid_sizes = {grid};
    const auto fuzz_task = env::sample_task(dc, trng);
    for (int e = 0; e < 3000; ++e) {
      auto st = env::reset(fuzz_task, rng()).state;
      while (!st.done) {
        const std::vector<int> joint{act(rng), act(rng)};
        const auto s = env::step(fuzz_task, st, joint, rng);
        for (const auto& o : s.observations) {
          occluded += o.targets[0].has_value() ? 0 : 1;
          ++observations;
        }
        if (!(s.reward == 0.0 || s.reward == 1.0)) ++violations;
        if (s.reward == 1.0 && !s.done) ++violations;
        captures += s.reward == 1.0 ? 1 : 0;
        st = s.state;
      }
    }
  }
  const double flicker = static_cast<double>(occluded) / static_cast<double>(observations);
  const double secs = seconds_since(t0);
  const bool pass = std::abs(noise - 0.10) <= 0.01 && std::abs(flicker - 0.3) <= 0.01 && violations == 0 &&
                    observations >= 100000 && secs < 120.0;
  return {pass, fmt("environment statistics: noise %.4f over %zu agent-steps (0.10 +- 0.01); flicker %.4f over %zu "
                    "observations (0.30 +- 0.01); %zu reward/done violations in %zu captures (%.1f s)",
                    noise, agent_steps, flicker, observations, violations, captures, secs)};
}

// ---------------------------------------------------------------- learning runs

class Runs {
 public:
  explicit Runs(const Options& opt) : opt_(opt) {}

  harness::ExperimentConfig config(const std::string& name) const {
    return harness::load_config(opt_.configs / name);
  }

  // Runs (or reuses) a command whose manifest config must equal `cfg`
  // resolved to `dir` and whose metrics reach `final_epoch`.
  std::vector<harness::MetricRow> cached(const fs::path& dir, harness::ExperimentConfig cfg,
                                         std::uint64_t final_epoch,
                                         const std::function<harness::CommandResult()>& run) {
    cfg.run.output_dir = dir.string();
    if (!opt_.fresh && fs::exists(dir / "manifest.json") && fs::exists(dir / "metrics.csv")) {
      try {
        const auto doc = nlohmann::json::parse(slurp(dir / "manifest.json"));
        const auto rows = harness::read_metrics_csv(dir / "metrics.csv");
        bool complete = false;
        for (const auto& r : rows) complete = complete || r.epoch == final_epoch;
        // The run location may differ between invocations (relative vs absolute --work).
        auto have = doc.at("config");
        auto want = harness::config_to_json(cfg);
        have.at("run").erase("output_dir");
        want.at("run").erase("output_dir");
        if (have == want && complete) {
          std::clog << "reusing " << dir.string() << '\n';
          return rows;
        }
      } catch (const std::exception&) {
      }
    }
    fs::remove_all(dir);
    std::clog << "running " << dir.string() << '\n';
    return run().rows;
  }

  std::vector<harness::MetricRow> train(const std::string& tag, harness::ExperimentConfig cfg) {
    const fs::path dir = opt_.work / tag;
    return cached(dir, cfg, cfg.run.episodes, [&] { return harness::cmd_train_single(cfg, dir); });
  }

  fs::path dir(const std::string& tag) const { return opt_.work / tag; }

 private:
  Options opt_;
};

// Final evaluation row of `task_id`.
harness::MetricRow final_row(const std::vector<harness::MetricRow>& rows, int task_id) {
  harness::MetricRow best{};
  for (const auto& r : rows)
    if (r.task_id == task_id && r.epoch >= best.epoch) best = r;
  return best;
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

// ---------------------------------------------------------------- criteria 6, 8, 11

Outcome criterion_single_task(Runs& runs) {
  const auto t0 = std::chrono::steady_clock::now();
  auto base = runs.config("desk_3x3.json");
  double total = 0.0;
  std::string per_seed;
  for (auto seed : kSeeds) {
    auto cfg = base;
    cfg.run.seed = seed;
    const auto r = final_row(runs.train("c6_seed" + std::to_string(seed), cfg), 0);
    total += r.mean_return;
    per_seed += fmt(" %.3f", r.mean_return);
  }
  const double mean = total / static_cast<double>(kSeeds.size());
  const bool setup = base.domain.grid_sizes == std::vector<int>{3} && base.domain.n_agents == 2 &&
                     base.domain.mode == env::Mode::kMamt && base.domain.p_flicker == 0.3 &&
                     base.learner.hysteresis_beta == 0.3 && base.run.episodes <= 20000 &&
                     base.run.eval_episodes == 50;
  return {setup && mean >= 0.7,
          fmt("single-task learning 3x3 MAMT: mean greedy discounted return %.3f at episode %zu over seeds [%s ] "
              "(>= 0.7) (%.0f s)",
              mean, base.run.episodes, per_seed.c_str() + 1, seconds_since(t0))};
}

Outcome criterion_optimism(Runs& runs) {
  auto base = runs.config("desk_3x3.json");
  bool pass = base.learner.hysteresis_beta <= 0.4;
  std::string detail;
  for (auto seed : kSeeds) {
    auto cfg = base;
    cfg.run.seed = seed;
    const auto r = final_row(runs.train("c6_seed" + std::to_string(seed), cfg), 0);
    pass = pass && r.mean_q0 >= r.mean_return - 0.05;
    detail += fmt(" seed %llu Q0 %.3f vs return %.3f;", static_cast<unsigned long long>(seed), r.mean_q0,
                  r.mean_return);
  }
  detail.pop_back();
  return {pass, "optimism bound (mean Q(o0,a0) >= mean return - 0.05):" + detail};
}

Outcome criterion_hysteresis_advantage(Runs& runs) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto base = runs.config("desk_4x4.json");
  double hdrqn = 0.0;
  double drqn = 0.0;
  for (auto seed : kSeeds) {
    for (double beta : {0.3, 1.0}) {
      auto cfg = base;
      cfg.run.seed = seed;
      cfg.learner.hysteresis_beta = beta;
      const auto tag = fmt("c7_beta%.1f_seed%llu", beta, static_cast<unsigned long long>(seed));
      const double v = final_row(runs.train(tag, cfg), 0).mean_return;
      (beta < 1.0 ? hdrqn : drqn) += v / static_cast<double>(kSeeds.size());
    }
  }
  return {hdrqn - drqn >= 0.2,
          fmt("hysteresis advantage 4x4 MAMT: Dec-HDRQN %.3f vs Dec-DRQN %.3f, gap %.3f (>= 0.2) after %zu "
              "episodes each, 3 seeds (%.0f s)",
              hdrqn, drqn, hdrqn - drqn, base.run.episodes, seconds_since(t0))};
}

Outcome criterion_determinism(Runs& runs) {
  const auto t0 = std::chrono::steady_clock::now();
  auto cfg = runs.config("desk_3x3.json");
  cfg.run.seed = kSeeds.front();
  runs.train("c6_seed1", cfg);
  const fs::path original = runs.dir("c6_seed1");
  const fs::path rerun = runs.dir("c11_rerun");
  fs::remove_all(rerun);
  harness::cmd_train_single(harness::load_config_or_manifest(original / "manifest.json"), rerun);
  const auto a = slurp(original / "metrics.csv");
  const auto b = slurp(rerun / "metrics.csv");
  return {!a.empty() && a == b,
          fmt("determinism: rerun of the criterion-6 manifest gives %s metrics.csv (%zu bytes) (%.0f s)",
              a == b ? "byte-identical" : "DIFFERENT", a.size(), seconds_since(t0))};
}

// ---------------------------------------------------------------- criteria 9, 10

struct MultiTaskResults {
  std::vector<std::vector<double>> specialist;  // [seed][task]
  std::vector<std::vector<double>> distilled;   // [seed][task]
  std::vector<double> distilled_vbar;
  std::vector<double> baseline_vbar;
  std::size_t tasks = 0;
  double seconds = 0.0;
};

MultiTaskResults multitask(Runs& runs, bool with_baseline) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto base = runs.config("desk_multitask.json");
  MultiTaskResults out;
  out.tasks = base.domain.grid_sizes.size();
  for (auto seed : kSeeds) {
    auto cfg = base;
    cfg.run.seed = seed;
    const auto s = std::to_string(seed);
    const auto spec_rows = runs.train("c9_specialists_seed" + s, cfg);
    const fs::path spec_dir = runs.dir("c9_specialists_seed" + s);
    const fs::path dist_dir = runs.dir("c9_distilled_seed" + s);
    const auto dist_rows = runs.cached(dist_dir, cfg, cfg.distill.iterations,
                                       [&] { return harness::cmd_distill(cfg, dist_dir, spec_dir); });
    std::vector<double> sp;
    std::vector<double> di;
    for (std::size_t k = 0; k < out.tasks; ++k) {
      sp.push_back(final_row(spec_rows, static_cast<int>(k)).mean_return);
      di.push_back(final_row(dist_rows, static_cast<int>(k)).mean_return);
    }
    out.specialist.push_back(sp);
    out.distilled.push_back(di);
    out.distilled_vbar.push_back(final_row(dist_rows, harness::kAllTasks).mean_return);
    if (with_baseline) {
      const fs::path base_dir = runs.dir("c10_baseline_seed" + s);
      const std::size_t iters = cfg.learner.train_iterations_per_episode;
      const std::uint64_t budget = cfg.run.baseline_episodes > 0
                                       ? cfg.run.baseline_episodes
                                       : out.tasks * cfg.run.episodes + (cfg.distill.iterations + iters - 1) / iters;
      const auto rows = runs.cached(base_dir, cfg, budget, [&] { return harness::cmd_multi_baseline(cfg, base_dir); });
      out.baseline_vbar.push_back(final_row(rows, harness::kAllTasks).mean_return);
    }
  }
  out.seconds = seconds_since(t0);
  return out;
}

double average(const std::vector<double>& v) {
  double t = 0;
  for (double x : v) t += x;
  return v.empty() ? 0.0 : t / static_cast<double>(v.size());
}

Outcome criterion_distillation_parity(const MultiTaskResults& r) {
  bool pass = r.tasks >= 2;
  std::string detail;
  for (std::size_t k = 0; k < r.tasks; ++k) {
    double sp = 0.0;
    double di = 0.0;
    for (std::size_t s = 0; s < r.specialist.size(); ++s) {
      sp += r.specialist[s][k] / static_cast<double>(r.specialist.size());
      di += r.distilled[s][k] / static_cast<double>(r.distilled.size());
    }
    pass = pass && std::abs(sp - di) <= 0.15;
    detail += fmt(" task %zu specialist %.3f distilled %.3f;", k, sp, di);
  }
  detail.pop_back();
  return {pass, "distillation parity (|distilled - specialist| <= 0.15 per task, 3 seeds):" + detail +
                    fmt(" (%.0f s)", r.seconds)};
}

Outcome criterion_baseline_gap(const MultiTaskResults& r) {
  const double d = average(r.distilled_vbar);
  const double b = average(r.baseline_vbar);
  return {d - b >= 0.15, fmt("multi-baseline gap: distilled V-bar %.3f vs Multi-HDRQN V-bar %.3f, gap %.3f "
                             "(>= 0.15), equal budgets, 3 seeds",
                             d, b, d - b)};
}

Options parse(int argc, char** argv) {
  Options opt;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    auto value = [&]() -> std::string {
      if (i + 1 >= argc) throw std::runtime_error("missing value for " + arg);
      return argv[++i];
    };
    if (arg == "--only") {
      std::stringstream ss(value());
      std::string item;
      while (std::getline(ss, item, ',')) opt.only.insert(std::stoi(item));
    } else if (arg == "--work") {
      opt.work = value();
    } else if (arg == "--configs") {
      opt.configs = value();
    } else if (arg == "--fresh") {
      opt.fresh = true;
    } else {
      throw std::runtime_error("unknown argument " + arg);
    }
  }
  return opt;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  try {
    opt = parse(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "mtmarl_acceptance: " << e.what() << '\n';
    return 2;
  }
  auto wanted = [&](int c) { return opt.only.empty() || opt.only.count(c) > 0; };
  Runs runs(opt);
  int failures = 0;
  auto emit = [&](int c, const std::function<Outcome()>& fn) {
    if (!wanted(c)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << "criterion " << c << ": " << (o.pass ? "PASS" : "FAIL") << ": " << o.detail << std::endl;
  };

  emit(1, criterion_gradients);
  emit(2, criterion_cert_inclusion);
  emit(3, criterion_cert_concurrency);
  emit(4, criterion_hysteresis_gating);
  emit(5, criterion_environment);
  emit(6, [&] { return criterion_single_task(runs); });
  emit(7, [&] { return criterion_hysteresis_advantage(runs); });
  emit(8, [&] { return criterion_optimism(runs); });
  if (wanted(9) || wanted(10)) {
    MultiTaskResults mt;
    std::string error;
    try {
      mt = multitask(runs, wanted(10));
    } catch (const std::exception& e) {
      error = e.what();
    }
    emit(9, [&]() -> Outcome {
      if (!error.empty()) return {false, "error: " + error};
      return criterion_distillation_parity(mt);
    });
    emit(10, [&]() -> Outcome {
      if (!error.empty()) return {false, "error: " + error};
      return criterion_baseline_gap(mt);
    });
  }
  emit(11, [&] { return criterion_determinism(runs); });
  return failures == 0 ? 0 : 1;
}
