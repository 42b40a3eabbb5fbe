#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mtmarl/common/seed.hpp"
#include "mtmarl/env/gridworld.hpp"
#include "mtmarl/learner/hdrqn.hpp"
#include "mtmarl/nn/network.hpp"

namespace {

using namespace mtmarl;

nn::NetworkSpec full_size_spec(std::size_t input_dim) {
  nn::NetworkSpec spec;
  spec.input_dim = input_dim;
  return spec;
}

std::vector<nn::Matrix<float>> random_inputs(std::size_t dim, std::size_t batch, std::size_t tau) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<nn::Matrix<float>> xs(tau, nn::Matrix<float>(dim, batch));
  for (auto& x : xs)
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = u(rng);
  return xs;
}

void BM_ForwardStep(benchmark::State& state) {
  const auto spec = full_size_spec(29);
  const auto p = nn::build_network<float>(spec, 1);
  const std::vector<float> obs(29, 0.5f);
  auto h = nn::HiddenState<float>::zeros(spec);
  for (auto _ : state) {
    auto out = nn::forward_step<float>(p, obs, h);
    benchmark::DoNotOptimize(out.q.data());
  }
}
BENCHMARK(BM_ForwardStep);

void BM_ForwardBackward(benchmark::State& state) {
  const auto spec = full_size_spec(29);
  const auto p = nn::build_network<float>(spec, 1);
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto tau = static_cast<std::size_t>(state.range(1));
  const auto xs = random_inputs(29, batch, tau);
  std::vector<nn::Matrix<float>> dq(tau, nn::Matrix<float>::Ones(5, static_cast<Eigen::Index>(batch)));
  std::vector<std::uint8_t> mask(batch * tau, 1);
  for (auto _ : state) {
    const auto out = nn::forward_sequence<float>(p, std::span<const nn::Matrix<float>>(xs),
                                                 nn::HiddenState<float>::zeros(spec, batch));
    auto g = nn::backward_sequence<float>(p, out.cache, std::span<const nn::Matrix<float>>(dq), mask);
    benchmark::DoNotOptimize(g.flat().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch * tau));
}
BENCHMARK(BM_ForwardBackward)->Args({32, 4})->Args({32, 8})->Args({64, 4});

void BM_TrainIteration(benchmark::State& state) {
  env::DomainConfig dc;
  dc.grid_sizes = {static_cast<int>(state.range(0))};
  dc.p_flicker = 0.3;
  Rng rng(1);
  const auto task = env::sample_task(dc, rng);
  const auto spec = full_size_spec(task.observation_dim());
  learner::LearnerConfig cfg;
  std::vector<learner::AgentLearner> agents;
  for (int i = 0; i < 2; ++i) agents.emplace_back(spec, cfg, derive_seed(1, i));
  for (std::uint64_t e = 0; e < 64; ++e)
    learner::collect_episode(agents, task, 1.0, {derive_seed(2, e), derive_seed(3, e), 4}, spec.input_dim);
  for (auto _ : state)
    for (auto& a : agents) benchmark::DoNotOptimize(a.train_iteration(4));
}
BENCHMARK(BM_TrainIteration)->Arg(3)->Arg(6);

void BM_EnvStep(benchmark::State& state) {
  env::DomainConfig dc;
  dc.grid_sizes = {6};
  dc.p_flicker = 0.3;
  Rng rng(1);
  const auto task = env::sample_task(dc, rng);
  auto s = env::reset(task, 1).state;
  const std::vector<int> joint{0, 2};
  for (auto _ : state) {
    if (s.done) s = env::reset(task, rng()).state;
    auto r = env::step(task, s, joint, rng);
    s = std::move(r.state);
    benchmark::DoNotOptimize(r.reward);
  }
}
BENCHMARK(BM_EnvStep);

}  // namespace

BENCHMARK_MAIN();
