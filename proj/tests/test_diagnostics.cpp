#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "tmnrl/diagnostics.hpp"
#include "tmnrl/simulator.hpp"

using namespace tmnrl;
using namespace tmnrl::diagnostics;
using advantage::RolloutGroup;

namespace {

RolloutGroup group(std::string id, TaskKind task, std::vector<double> rewards) {
  RolloutGroup g{std::move(id), task, std::move(rewards), {}};
  g.token_lengths.assign(g.rewards.size(), 1);
  return g;
}

EstimatorConfig with_method(Method m, double delta = 1e-6) {
  EstimatorConfig c;
  c.method = m;
  c.delta = delta;
  return c;
}

std::vector<simulator::SyntheticTaskSpec> binary_vs_continuous(std::size_t prompts) {
  simulator::SyntheticTaskSpec bin, cont;
  bin.task = TaskKind::T1_EM;
  bin.family = simulator::RewardFamily::bernoulli;
  bin.variance_scale = 0.1;
  bin.num_prompts = prompts;
  cont.task = TaskKind::T3_F1;
  cont.family = simulator::RewardFamily::scaled_beta;
  cont.quality_low = 0.4;
  cont.quality_high = 0.6;
  cont.variance_scale = 0.8;
  cont.num_prompts = prompts;
  return {bin, cont};
}

}  // namespace

TEST(MeanAbs, WorkedExamples) {
  TaskBatch batch({group("a", TaskKind::T1_EM, {1, 0, 0, 0})});
  EXPECT_NEAR(per_task_mean_abs_advantage(batch, with_method(Method::grpo, 1e-12)).at(TaskKind::T1_EM), 0.75, 1e-9);
  EXPECT_DOUBLE_EQ(per_task_mean_abs_advantage(batch, with_method(Method::drgrpo)).at(TaskKind::T1_EM), 0.375);
  TaskBatch flat({group("a", TaskKind::T1_EM, {1, 1}), group("b", TaskKind::T2_Accuracy, {0, 0})});
  for (const auto& [task, v] : per_task_mean_abs_advantage(flat, with_method(Method::tmn))) EXPECT_EQ(v, 0.0);
}

TEST(Disparity, EqualTasksAreUniform) {
  TaskBatch batch({group("a", TaskKind::T1_EM, {1, 0}), group("b", TaskKind::T2_Accuracy, {0, 1})});
  auto rep = disparity_report(batch, with_method(Method::grpo));
  EXPECT_DOUBLE_EQ(rep.normalized.at(TaskKind::T1_EM), 1.0);
  EXPECT_DOUBLE_EQ(rep.normalized.at(TaskKind::T2_Accuracy), 1.0);
  EXPECT_EQ(rep.cv, 0.0);
  EXPECT_TRUE(rep.within_band.at(TaskKind::T1_EM));
}

TEST(Disparity, Errors) {
  TaskBatch one({group("a", TaskKind::T1_EM, {1, 0})});
  try {
    disparity_report(one, with_method(Method::tmn));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::insufficient_tasks);
  }
  TaskBatch flat({group("a", TaskKind::T1_EM, {1, 1}), group("b", TaskKind::T2_Accuracy, {0, 0})});
  EXPECT_THROW(disparity_report(flat, with_method(Method::tmn)), Error);
}

TEST(Disparity, NormalizedMeanIsOne) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<RolloutGroup> groups;
    for (int k = 0; k < 12; ++k) {
      groups.push_back(group("p" + std::to_string(k), kAllTaskKinds[k % 4], {u(rng), u(rng), u(rng)}));
    }
    TaskBatch batch(groups);
    for (Method m : {Method::grpo, Method::drgrpo, Method::tmn, Method::tmn_reweight}) {
      auto rep = disparity_report(batch, with_method(m));
      double sum = 0.0;
      for (const auto& [task, n] : rep.normalized) sum += n;
      ASSERT_NEAR(sum / static_cast<double>(rep.normalized.size()), 1.0, 1e-9);
      ASSERT_GE(rep.cv, 0.0);
    }
  }
}

TEST(Disparity, CoefficientOfVariationUsesPopulationStd) {
  EXPECT_NEAR(coefficient_of_variation({1.0, 3.0}), 0.5, 1e-15);
  EXPECT_EQ(coefficient_of_variation({}), 0.0);
  EXPECT_EQ(coefficient_of_variation({0.0, 0.0}), 0.0);
}

TEST(Disparity, BinaryVersusContinuousOrdering) {
  auto specs = binary_vs_continuous(64);
  int tmn_below_dr = 0, tmn_below_grpo = 0, banded = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto batch = simulator::sample_task_batch(specs, 4, seed);
    auto grpo = disparity_report(batch, with_method(Method::grpo));
    auto dr = disparity_report(batch, with_method(Method::drgrpo));
    auto tmn = disparity_report(batch, with_method(Method::tmn));
    tmn_below_dr += tmn.cv < dr.cv;
    tmn_below_grpo += tmn.cv < grpo.cv;
    bool all = true;
    for (const auto& [task, in] : tmn.within_band) all = all && in;
    banded += all;
  }
  EXPECT_EQ(tmn_below_dr, 20);
  EXPECT_GE(tmn_below_grpo, 19);
  EXPECT_EQ(banded, 20);
}

TEST(SecondMoment, EqualsGroupFactor) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t G : {4u, 16u}) {
    std::vector<RolloutGroup> groups;
    for (int k = 0; k < 20; ++k) {
      std::vector<double> r(G), s(G);
      for (std::size_t i = 0; i < G; ++i) {
        r[i] = u(rng);
        s[i] = u(rng) < 0.5 ? 1.0 : 0.0;
      }
      groups.push_back(group("c" + std::to_string(k), TaskKind::T9_Summary, r));
      groups.push_back(group("b" + std::to_string(k), TaskKind::T1_EM, s));
    }
    EstimatorConfig cfg = with_method(Method::tmn_reweight, 1e-12);
    for (const auto& [task, m] : second_moment_check(TaskBatch(groups), cfg)) {
      EXPECT_FALSE(m.degenerate);
      EXPECT_DOUBLE_EQ(m.expected, (G - 1.0) / G);
      EXPECT_NEAR(m.value, m.expected, 1e-6) << task_code(task);
    }
  }
}

TEST(SecondMoment, DegenerateTaskReportsZero) {
  TaskBatch batch({group("a", TaskKind::T1_EM, {1, 1, 1, 1})});
  auto m = second_moment_check(batch, with_method(Method::tmn, 1e-12)).at(TaskKind::T1_EM);
  EXPECT_TRUE(m.degenerate);
  EXPECT_EQ(m.value, 0.0);
}

TEST(SecondMoment, Preconditions) {
  TaskBatch mixed({group("a", TaskKind::T1_EM, {1, 0, 0}), group("b", TaskKind::T1_EM, {1, 0})});
  try {
    second_moment_check(mixed, with_method(Method::tmn, 1e-12));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::mixed_group_size);
  }
  TaskBatch ok({group("a", TaskKind::T1_EM, {1, 0})});
  EXPECT_THROW(second_moment_check(ok, with_method(Method::tmn, 1e-6)), Error);
  EXPECT_NO_THROW(second_moment_check(
      TaskBatch({group("a", TaskKind::T1_EM, {1, 0, 0}), group("b", TaskKind::T2_Accuracy, {1, 0})}),
      with_method(Method::tmn, 1e-12)));
}

TEST(Output, TableAndPlotData) {
  TaskBatch batch({group("a", TaskKind::T1_EM, {1, 0, 0, 0}), group("b", TaskKind::T9_Summary, {0.5, 0.7})});
  std::vector<DisparityReport> reps{disparity_report(batch, with_method(Method::drgrpo))};
  std::ostringstream table, plot;
  write_disparity_table(table, reps);
  write_plot_data(plot, reps);
  EXPECT_EQ(table.str(),
            "# method drgrpo\n"
            "task\tmean_abs\tnormalized\twithin_band\n"
            "T1\t0.375\t1.57895\tfalse\n"
            "T9\t0.1\t0.421053\tfalse\n"
            "cv\t0.578947\n\n");
  EXPECT_EQ(plot.str(),
            "method\ttask\tnormalized\tcv\n"
            "drgrpo\tT1\t1.57895\t0.578947\n"
            "drgrpo\tT9\t0.421053\t0.578947\n");
}
