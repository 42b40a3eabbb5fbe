#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "mtmarl/common/error.hpp"
#include "mtmarl/distill/distiller.hpp"
#include "test_support.hpp"

namespace mtmarl::distill {
namespace {

using nn::HiddenState;
using nn::ParameterSet;

RegressionBatch random_regression_batch(std::size_t dim, std::size_t actions, std::size_t batch,
                                        std::size_t tau, std::mt19937_64& rng) {
  std::normal_distribution<float> n01;
  std::vector<std::vector<RegressionExperience>> traces(batch);
  for (auto& tr : traces) {
    const std::size_t len = 1 + rng() % tau;
    for (std::size_t t = 0; t < len; ++t) {
      RegressionExperience e;
      e.obs = testing::random_obs(dim, rng);
      for (std::size_t a = 0; a < actions; ++a) e.q.push_back(n01(rng));
      tr.push_back(std::move(e));
    }
  }
  return testing::make_batch(traces, tau);
}

// Independent reference: per-trace forward pass and direct KL sum.
double reference_kl(const ParameterSet<double>& p, const RegressionBatch& batch, double temperature) {
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
      const auto pt = softmax(teacher);
      const auto ps = softmax(student);
      for (std::size_t a = 0; a < q.size(); ++a)
        if (pt[a] > 0) total += pt[a] * (std::log(pt[a]) - std::log(ps[a]));
      ++valid;
    }
  }
  return total / static_cast<double>(valid);
}

// One-step batch with a zero-weight student whose outputs equal its output
// bias, so q_R can be set directly.
double kl_for(std::vector<float> q_teacher, std::vector<double> q_student, double temperature) {
  nn::NetworkSpec spec = testing::tiny_spec(2, q_teacher.size());
  ParameterSet<double> p(spec);
  const std::size_t out_layer = spec.mlp_pre.size() + spec.mlp_post.size();
  for (std::size_t a = 0; a < q_student.size(); ++a) p.dense_bias(out_layer)(static_cast<Eigen::Index>(a)) = q_student[a];
  const auto batch = testing::make_batch<RegressionExperience>({{{{0.5f, -0.5f}, std::move(q_teacher)}}}, 1);
  return kl_loss_grads<double>(p, batch, temperature).loss;
}

TEST(KlLoss, TwoActionExampleAgainstUniform) {
  EXPECT_NEAR(kl_for({1.0f, 0.0f}, {0.0, 0.0}, 1.0), 0.110944071671727, 1e-12);
}

TEST(KlLoss, ZeroWhenStudentMatchesTemperedTeacher) {
  // softmax(q / T) with q = [0.02, 0.01, 0], T = 0.01 is softmax([2, 1, 0]).
  EXPECT_NEAR(kl_for({0.02f, 0.01f, 0.0f}, {2.0, 1.0, 0.0}, 0.01), 0.0, 1e-6);
  EXPECT_NEAR(kl_for({1.0f, 2.0f}, {11.0, 12.0}, 1.0), 0.0, 1e-12);
}

TEST(KlLoss, NonNegativeOnRandomInputs) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto spec = testing::tiny_spec(3, 4);
    const auto p = testing::random_params(spec, 40 + trial, 1.5);
    const auto batch = random_regression_batch(3, 4, 3, 5, rng);
    EXPECT_GE(kl_loss_grads<double>(p, batch, trial % 2 ? 0.01 : 1.0).loss, 0.0);
  }
}

TEST(KlLoss, LowTemperatureDoesNotOverflow) {
  EXPECT_TRUE(std::isfinite(kl_for({50.0f, -50.0f, 3.0f}, {0.0, 0.0, 0.0}, 0.01)));
  EXPECT_NEAR(kl_for({50.0f, -50.0f, 3.0f}, {0.0, 0.0, 0.0}, 0.01), std::log(3.0), 1e-9);
}

TEST(KlLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto spec = testing::tiny_spec(3, 3);
    const auto p = testing::random_params(spec, 700 + trial);
    const std::size_t tau = 1 + trial % 8;
    const auto batch = random_regression_batch(3, 3, 3, tau, rng);
    const double temperature = trial % 3 == 0 ? 0.5 : 1.0;
    const auto result = kl_loss_grads<double>(p, batch, temperature);
    EXPECT_NEAR(result.loss, reference_kl(p, batch, temperature), 1e-12);
    const double err = testing::max_relative_error(
        p, result.grads, [&](const ParameterSet<double>& q) { return reference_kl(q, batch, temperature); });
    EXPECT_LT(err, 1e-4) << "trial " << trial;
  }
}

TEST(KlLoss, PaddingIsIgnored) {
  std::mt19937_64 rng(2);
  const auto spec = testing::tiny_spec(3, 3);
  const auto p = nn::build_network<float>(spec, 1);
  auto batch = random_regression_batch(3, 3, 2, 4, rng);
  const auto a = kl_loss_grads<float>(p, batch, 0.01);
  for (std::size_t s = 0; s < batch.slots.size(); ++s)
    if (!batch.mask[s]) batch.slots[s] = {{9.0f, 9.0f, 9.0f}, {100.0f, -100.0f, 0.0f}};
  const auto b = kl_loss_grads<float>(p, batch, 0.01);
  EXPECT_EQ(a.grads.flatten(), b.grads.flatten());
  EXPECT_EQ(a.loss, b.loss);
}

TEST(Softmax, StableAndNormalized) {
  const std::vector<double> big{1000.0, 999.0};
  const auto p = softmax(big);
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-15);
}

struct Fixture {
  std::vector<env::TaskSpec> tasks;
  std::vector<std::vector<ParameterSet<float>>> specialists;
  std::size_t obs_dim = 0;
  nn::NetworkSpec spec;
};

Fixture make_fixture(std::vector<int> grids) {
  Fixture f;
  env::DomainConfig dc;
  dc.p_flicker = 0.3;
  for (std::size_t k = 0; k < grids.size(); ++k) {
    dc.grid_sizes = {grids[k]};
    Rng rng(derive_seed(5, k));
    f.tasks.push_back(env::sample_task(dc, rng, static_cast<int>(k)));
    f.obs_dim = std::max(f.obs_dim, f.tasks.back().observation_dim());
  }
  f.spec = testing::tiny_spec(f.obs_dim, 5);
  for (std::size_t k = 0; k < grids.size(); ++k)
    f.specialists.push_back({nn::build_network<float>(f.spec, derive_seed(9, k, 0)),
                             nn::build_network<float>(f.spec, derive_seed(9, k, 1))});
  return f;
}

TEST(Collection, StoresOneRecordPerStepWithTeacherQ) {
  const auto f = make_fixture({3, 4});
  const auto data = collect_regression_data(f.specialists, f.tasks, 20, 0.05, 1, f.obs_dim);
  ASSERT_EQ(data.per_agent.size(), 2u);
  std::size_t steps = 0;
  for (std::size_t i = 0; i < 2; ++i) {
    ASSERT_EQ(data.per_agent[i].size(), 2u);
    for (std::size_t k = 0; k < 2; ++k) {
      const auto& store = data.per_agent[i][k];
      EXPECT_EQ(store.task_id, static_cast<int>(k));
      ASSERT_EQ(store.memory.size(), 20u);
      for (std::size_t e = 0; e < 20; ++e) {
        const auto& ep = store.memory.episode(e);
        steps += ep.size();
        EXPECT_LE(ep.size(), static_cast<std::size_t>(f.tasks[k].horizon));
        // Replaying the teacher over the stored observations reproduces q.
        auto hidden = HiddenState<float>::zeros(f.spec);
        for (const auto& x : ep) {
          ASSERT_EQ(x.obs.size(), f.obs_dim);
          ASSERT_EQ(x.q.size(), 5u);
          const auto out = nn::forward_step<float>(f.specialists[k][i], x.obs, hidden);
          for (int a = 0; a < 5; ++a) EXPECT_EQ(out.q(a), x.q[static_cast<std::size_t>(a)]);
          hidden = out.hidden;
        }
      }
    }
  }
  EXPECT_EQ(steps, data.steps);
}

TEST(Collection, NonGreedyFractionMatchesEpsilon) {
  const auto f = make_fixture({4});
  const auto data = collect_regression_data(f.specialists, f.tasks, 400, 0.05, 2, f.obs_dim);
  const double p = 0.05 * 4.0 / 5.0;
  const double n = static_cast<double>(data.steps);
  EXPECT_GT(n, 5000.0);
  EXPECT_NEAR(static_cast<double>(data.non_greedy_actions) / n, p, 3 * std::sqrt(p * (1 - p) / n));
}

TEST(Collection, DeterministicInSeed) {
  const auto f = make_fixture({3});
  const auto a = collect_regression_data(f.specialists, f.tasks, 5, 0.05, 3, f.obs_dim);
  const auto b = collect_regression_data(f.specialists, f.tasks, 5, 0.05, 3, f.obs_dim);
  EXPECT_EQ(serialize_regression_set(a.per_agent[0]), serialize_regression_set(b.per_agent[0]));
}

TEST(Collection, MissingSpecialistThrows) {
  auto f = make_fixture({3, 4});
  f.specialists.pop_back();
  EXPECT_THROW(collect_regression_data(f.specialists, f.tasks, 1, 0.05, 1, f.obs_dim), ConfigError);
  auto g = make_fixture({3, 4});
  g.specialists[1].pop_back();
  EXPECT_THROW(collect_regression_data(g.specialists, g.tasks, 1, 0.05, 1, g.obs_dim), ConfigError);
}

TEST(Collection, DimensionMismatchThrows) {
  const auto f = make_fixture({3, 4});
  EXPECT_THROW(collect_regression_data(f.specialists, f.tasks, 1, 0.05, 1, 29), DimensionError);
}

DistillConfig small_distill() {
  DistillConfig c;
  c.batch = 8;
  c.tracelength = 4;
  c.temperature = 0.5;
  c.base_lr = 3e-3;
  return c;
}

TEST(Distill, TargetsAreUnchangedByTraining) {
  const auto f = make_fixture({3});
  const auto data = collect_regression_data(f.specialists, f.tasks, 10, 0.05, 4, f.obs_dim);
  const auto before = serialize_regression_set(data.per_agent[0]);
  DistilledLearner student(f.spec, small_distill(), 1);
  Rng rng(1);
  for (int it = 0; it < 20; ++it) student.distill_iteration(data.per_agent[0], rng);
  EXPECT_EQ(serialize_regression_set(data.per_agent[0]), before);
  EXPECT_EQ(student.iteration(), 20u);
}

TEST(Distill, LossDecreasesOnFixedData) {
  const auto f = make_fixture({3});
  const auto data = collect_regression_data(f.specialists, f.tasks, 30, 0.05, 4, f.obs_dim);
  DistilledLearner student(f.spec, small_distill(), 2);
  const auto plan = data.per_agent[0][0].memory.plan(1, 0, 32, 4);
  const auto batch = replay::extract_traces(data.per_agent[0][0].memory, *plan);
  const double start = kl_loss_grads<float>(student.params(), batch, 0.5).loss;
  Rng rng(3);
  for (int it = 0; it < 400; ++it) student.distill_iteration(data.per_agent[0], rng);
  const double end = kl_loss_grads<float>(student.params(), batch, 0.5).loss;
  EXPECT_LT(end, 0.5 * start);
}

TEST(Distill, TasksSampledUniformly) {
  const auto f = make_fixture({3, 4});
  const auto data = collect_regression_data(f.specialists, f.tasks, 3, 0.05, 4, f.obs_dim);
  DistilledLearner student(f.spec, small_distill(), 2);
  Rng rng(8);
  int first = 0;
  const int n = 2000;
  for (int it = 0; it < n; ++it) first += student.distill_iteration(data.per_agent[0], rng)->task_index == 0;
  EXPECT_NEAR(first, n / 2.0, 3 * std::sqrt(n * 0.25));
}

TEST(Distill, EmptyStoresGiveNoIteration) {
  const auto f = make_fixture({3});
  DistilledLearner student(f.spec, small_distill(), 2);
  RegressionCertSet empty;
  empty.push_back({0, RegressionCert(4)});
  Rng rng(1);
  EXPECT_FALSE(student.distill_iteration(empty, rng).has_value());
}

TEST(Distill, ConfigValidation) {
  DistillConfig c;
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.epsilon_collect = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Evaluation, RandomPoliciesHaveLowMultiTaskValue) {
  auto f = make_fixture({6, 6});
  nn::NetworkSpec spec;
  spec.input_dim = f.obs_dim;
  std::vector<ParameterSet<float>> policies{nn::build_network<float>(spec, 1), nn::build_network<float>(spec, 2)};
  const auto report = evaluate_multitask(policies, f.tasks, 50, 5, 0.95, f.obs_dim);
  ASSERT_EQ(report.per_task.size(), 2u);
  EXPECT_LT(report.v_bar, 0.1);
  const double mean_of_means = 0.5 * (report.per_task[0].mean_discounted() + report.per_task[1].mean_discounted());
  EXPECT_NEAR(report.v_bar, mean_of_means, 1e-12);
}

TEST(Evaluation, StudentEqualToSpecialistScoresTheSame) {
  const auto f = make_fixture({3});
  const auto report = evaluate_multitask(f.specialists[0], f.tasks, 30, 7, 0.95, f.obs_dim);
  const auto direct = learner::evaluate(f.specialists[0], f.tasks[0], 30, derive_seed(7, 0), 0.95, f.obs_dim);
  EXPECT_EQ(report.per_task[0].discounted, direct.discounted);
}

TEST(RegressionDump, RoundTripAndCorruption) {
  const auto f = make_fixture({3, 4});
  const auto data = collect_regression_data(f.specialists, f.tasks, 4, 0.05, 4, f.obs_dim);
  const auto bytes = serialize_regression_set(data.per_agent[1]);
  const auto back = deserialize_regression_set(bytes, 100);
  EXPECT_EQ(serialize_regression_set(back), bytes);

  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(deserialize_regression_set(truncated, 100), DecodeError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_regression_set(trailing, 100), DecodeError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_regression_set(bad_magic, 100), DecodeError);

  const auto dir = std::filesystem::temp_directory_path() / "mtmarl_regression_test";
  std::filesystem::remove_all(dir);
  save_regression_set(dir / "agent1.bin", data.per_agent[1]);
  EXPECT_EQ(serialize_regression_set(load_regression_set(dir / "agent1.bin", 100)), bytes);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace mtmarl::distill
