#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "tmnrl/simulator.hpp"

using namespace tmnrl;
using namespace tmnrl::simulator;

namespace {

SyntheticTaskSpec beta_task(TaskKind kind, double spread, std::size_t prompts) {
  // Reward = 0.5 + spread * (quality offset + beta noise).
  SyntheticTaskSpec s;
  s.task = kind;
  s.family = RewardFamily::scaled_beta;
  s.quality_low = 0.5 - 0.05 * spread;
  s.quality_high = 0.5 + 0.05 * spread;
  s.variance_scale = 0.1 * spread;
  s.num_prompts = prompts;
  return s;
}

EstimatorConfig with_method(Method m) {
  EstimatorConfig c;
  c.method = m;
  return c;
}

double max_abs(const Gradient& g) {
  double m = 0.0;
  for (const auto& row : g) {
    for (double v : row) m = std::max(m, std::fabs(v));
  }
  return m;
}

}  // namespace

TEST(TaskSpec, Validation) {
  SyntheticTaskSpec s;
  EXPECT_NO_THROW(s.validate());
  s.variance_scale = 1.5;
  EXPECT_THROW(s.validate(), Error);
  SyntheticTaskSpec b = beta_task(TaskKind::T3_F1, 5.0, 4);
  EXPECT_NO_THROW(b.validate());
  b.variance_scale = 0.9;
  EXPECT_THROW(b.validate(), Error);
}

TEST(GenerateBatch, DeterministicAndBounded) {
  std::vector<SyntheticTaskSpec> specs{SyntheticTaskSpec{}, beta_task(TaskKind::T9_Summary, 4.0, 8)};
  auto policy = make_policy(specs, 4, 3);
  auto a = generate_batch(specs, policy, 8, 3, 2);
  auto b = generate_batch(specs, policy, 8, 3, 2);
  ASSERT_EQ(a.batch.groups().size(), 24u);
  for (std::size_t i = 0; i < a.batch.groups().size(); ++i) {
    EXPECT_EQ(a.batch.groups()[i].rewards, b.batch.groups()[i].rewards);
    EXPECT_EQ(a.actions[i], b.actions[i]);
    for (double r : a.batch.groups()[i].rewards) {
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, 1.0);
    }
  }
  for (const auto& g : a.batch.groups()) {
    if (g.task != TaskKind::T1_EM) continue;
    for (double r : g.rewards) EXPECT_TRUE(r == 0.0 || r == 1.0);
  }
  auto c = generate_batch(specs, policy, 8, 3, 3);
  EXPECT_NE(a.batch.groups()[20].rewards, c.batch.groups()[20].rewards);
}

TEST(GenerateBatch, CertainSuccess) {
  SyntheticTaskSpec s;
  s.quality_low = s.quality_high = 1.0;
  std::vector<SyntheticTaskSpec> specs{s};
  auto sim = generate_batch(specs, make_policy(specs, 4, 0), 16, 0);
  for (const auto& g : sim.batch.groups()) {
    for (double r : g.rewards) EXPECT_EQ(r, 1.0);
  }
}

TEST(GenerateBatch, BetaMean) {
  SyntheticTaskSpec s;
  s.family = RewardFamily::scaled_beta;
  s.quality_low = s.quality_high = 0.5;
  s.variance_scale = 1.0;
  std::mt19937_64 rng(42);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += draw_reward(s, 0.5, rng);
  EXPECT_NEAR(sum / n, 0.5, 0.01);
}

TEST(Policy, ProbabilitiesSumToOne) {
  std::vector<SyntheticTaskSpec> specs{SyntheticTaskSpec{}};
  auto p = make_policy(specs, 5, 0);
  p.logits[0] = {3.0, -1.0, 0.5, 700.0, -700.0};
  double sum = 0.0;
  for (double v : p.probabilities(0)) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-15);
  EXPECT_NEAR(make_policy(specs, 4, 0).entropy(), std::log(4.0), 1e-15);
}

TEST(Gradient, MatchesFiniteDifferences) {
  std::vector<SyntheticTaskSpec> specs{SyntheticTaskSpec{}, beta_task(TaskKind::T3_F1, 3.0, 6)};
  specs[0].num_prompts = 6;
  auto policy = make_policy(specs, 4, 5);
  // Move off the uniform start so every parameter has its own gradient.
  for (std::size_t u = 0; u < policy.num_prompts(); ++u) {
    for (std::size_t b = 0; b < 4; ++b) policy.logits[u][b] = 0.3 * std::sin(1.7 * u + 2.3 * b);
  }
  auto sim = generate_batch(specs, policy, 8, 5);
  auto cfg = with_method(Method::tmn_reweight);
  auto adv = final_advantages(advantage::compute_advantages(sim.batch, cfg));
  auto grad = policy_gradient(policy, sim, adv);
  // Parameters whose true gradient is zero are compared against a 1e-8 floor.
  const double h = 1e-3;
  for (std::size_t u = 0; u < policy.num_prompts(); ++u) {
    for (std::size_t b = 0; b < 4; ++b) {
      auto plus = policy, minus = policy;
      plus.logits[u][b] += h;
      minus.logits[u][b] -= h;
      const double fd = (surrogate_objective(plus, policy, sim, adv, cfg, false) -
                         surrogate_objective(minus, policy, sim, adv, cfg, false)) /
                        (2.0 * h);
      const double scale = std::max(std::fabs(grad[u][b]), 1e-8);
      EXPECT_LT(std::fabs(fd - grad[u][b]) / scale, 1e-4) << u << "," << b;
    }
  }
}

TEST(Gradient, ClippingInactiveOnPolicy) {
  std::vector<SyntheticTaskSpec> specs{SyntheticTaskSpec{}, beta_task(TaskKind::T3_F1, 2.0, 8)};
  auto policy = make_policy(specs, 4, 1);
  auto sim = generate_batch(specs, policy, 16, 1);
  auto cfg = with_method(Method::grpo);
  auto adv = final_advantages(advantage::compute_advantages(sim.batch, cfg));
  EXPECT_NEAR(surrogate_objective(policy, policy, sim, adv, cfg, true),
              surrogate_objective(policy, policy, sim, adv, cfg, false), 1e-12);
}

TEST(TrainingStep, ZeroAdvantageLeavesPolicy) {
  SyntheticTaskSpec s;
  s.quality_low = s.quality_high = 1.0;
  std::vector<SyntheticTaskSpec> specs{s};
  auto policy = make_policy(specs, 4, 0);
  auto sim = generate_batch(specs, policy, 8, 0);
  auto step = training_step(policy, specs, sim, EstimatorConfig{}, 0.05);
  EXPECT_EQ(step.policy.logits, policy.logits);
  EXPECT_EQ(step.grad_norms.at(TaskKind::T1_EM), 0.0);
}

TEST(TrainingStep, GrpoBanditConverges) {
  SyntheticTaskSpec s;
  s.num_prompts = 1;
  std::vector<SyntheticTaskSpec> specs{s};
  auto policy = make_policy(specs, 2, 0);
  policy.quality[0] = {0.8, 0.2};
  auto cfg = with_method(Method::grpo);

  // Step 1: the analytic bandit gradient agrees with finite differences.
  auto sim = generate_batch(specs, policy, 16, 0, 0);
  auto adv = final_advantages(advantage::compute_advantages(sim.batch, cfg));
  auto grad = policy_gradient(policy, sim, adv);
  auto plus = policy, minus = policy;
  plus.logits[0][0] += 1e-5;
  minus.logits[0][0] -= 1e-5;
  const double fd = (surrogate_objective(plus, policy, sim, adv, cfg, false) -
                     surrogate_objective(minus, policy, sim, adv, cfg, false)) / 2e-5;
  EXPECT_NEAR(grad[0][0], fd, 1e-8);

  for (std::uint64_t step = 0; step < 200; ++step) {
    auto batch = generate_batch(specs, policy, 16, 0, step);
    policy = training_step(policy, specs, batch, cfg, 0.05).policy;
  }
  EXPECT_GT(policy.probabilities(0)[0], 0.9);
}

TEST(TrainingStep, NonFiniteGradientFails) {
  std::vector<SyntheticTaskSpec> specs{SyntheticTaskSpec{}};
  auto policy = make_policy(specs, 4, 0);
  auto sim = generate_batch(specs, policy, 4, 0);
  policy.logits[0][0] = std::nan("");
  try {
    training_step(policy, specs, sim, EstimatorConfig{}, 0.05);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::numerical_failure);
  }
}

TEST(GradientNorms, DrGrpoScalesWithSpreadAndTmnDoesNot) {
  const std::vector<double> factors{1.0, 2.0, 3.0, 5.0};
  std::vector<double> dr, tmn;
  for (double s : factors) {
    std::vector<SyntheticTaskSpec> specs{beta_task(TaskKind::T3_F1, 1.0, 64), beta_task(TaskKind::T9_Summary, s, 64)};
    auto policy = make_policy(specs, 4, 2);
    auto sim = generate_batch(specs, policy, 16, 2);
    dr.push_back(training_step(policy, specs, sim, with_method(Method::drgrpo), 0.05).grad_norms.at(TaskKind::T9_Summary));
    tmn.push_back(training_step(policy, specs, sim, with_method(Method::tmn), 0.05).grad_norms.at(TaskKind::T9_Summary));
  }
  for (std::size_t k = 0; k < factors.size(); ++k) {
    EXPECT_NEAR(dr[k] / dr[0], factors[k], 0.1 * factors[k]);
    EXPECT_NEAR(tmn[k] / tmn[0], 1.0, 0.1);
  }
}

TEST(GradientNorms, DrGrpoRatioAcrossTasks) {
  // A 5x-spread task against an independent baseline task at step 1.
  std::vector<SyntheticTaskSpec> specs{beta_task(TaskKind::T3_F1, 1.0, 256), beta_task(TaskKind::T9_Summary, 5.0, 256)};
  auto policy = make_policy(specs, 4, 0);
  auto sim = generate_batch(specs, policy, 16, 0);
  auto dr = training_step(policy, specs, sim, with_method(Method::drgrpo), 0.05).grad_norms;
  EXPECT_NEAR(dr.at(TaskKind::T9_Summary) / dr.at(TaskKind::T3_F1), 5.0, 1.5);
  auto tmn = training_step(policy, specs, sim, with_method(Method::tmn), 0.05).grad_norms;
  EXPECT_NEAR(tmn.at(TaskKind::T9_Summary) / tmn.at(TaskKind::T3_F1), 1.0, 0.3);
}

TEST(Experiment, GradientNormCvOrdering) {
  // Rewards {0, 0.1} against a continuous task with a far wider spread.
  SyntheticTaskSpec bin;
  bin.variance_scale = 0.1;
  bin.num_prompts = 32;
  SyntheticTaskSpec cont;
  cont.task = TaskKind::T3_F1;
  cont.family = RewardFamily::scaled_beta;
  cont.quality_low = 0.4;
  cont.quality_high = 0.6;
  cont.variance_scale = 0.8;
  cont.num_prompts = 32;
  int tmn_below_grpo = 0, grpo_below_dr = 0;
  const int seeds = 100;
  for (int seed = 0; seed < seeds; ++seed) {
    ExperimentConfig c;
    c.tasks = {bin, cont};
    c.steps = 20;
    c.group_size = 4;
    c.seed = static_cast<std::uint64_t>(seed);
    std::map<Method, double> cv;
    for (Method m : {Method::grpo, Method::drgrpo, Method::tmn}) {
      c.estimator.method = m;
      cv[m] = run_experiment(c).mean_cv();
    }
    tmn_below_grpo += cv[Method::tmn] < cv[Method::grpo];
    grpo_below_dr += cv[Method::grpo] < cv[Method::drgrpo];
  }
  EXPECT_GT(tmn_below_grpo, seeds / 2);
  EXPECT_GT(grpo_below_dr, seeds / 2);
}

TEST(Experiment, DeterministicTrace) {
  ExperimentConfig c;
  c.tasks = {SyntheticTaskSpec{}, beta_task(TaskKind::T3_F1, 2.0, 8)};
  c.steps = 5;
  c.seed = 17;
  std::ostringstream a, b;
  write_trace(a, run_experiment(c));
  write_trace(b, run_experiment(c));
  EXPECT_EQ(a.str(), b.str());
  auto trace = run_experiment(c);
  ASSERT_EQ(trace.rows.size(), 5u);
  for (const auto& r : trace.rows) {
    for (const auto& [task, n] : r.grad_norm) EXPECT_GE(n, 0.0);
  }
}

TEST(Reweight, PositivePartScalesByWeight) {
  // Every group of a hard prompt has p < 0.5, so w > 1 multiplies the
  // positive-advantage contribution exactly.
  SyntheticTaskSpec hard;
  hard.quality_low = 0.1;
  hard.quality_high = 0.3;
  hard.num_prompts = 16;
  std::vector<SyntheticTaskSpec> specs{hard};
  auto policy = make_policy(specs, 4, 7);
  auto sim = generate_batch(specs, policy, 16, 7);
  auto rw = advantage::compute_advantages(sim.batch, with_method(Method::tmn_reweight));
  auto tm = advantage::compute_advantages(sim.batch, with_method(Method::tmn));
  auto g_rw = policy_gradient(policy, sim, final_advantages(rw), SignFilter::positive);
  auto g_tm = policy_gradient(policy, sim, final_advantages(tm), SignFilter::positive);
  for (std::size_t gi = 0; gi < rw.groups.size(); ++gi) {
    const auto u = sim.prompt_of_group[gi];
    EXPECT_LT(rw.groups[gi].pass_rate, 0.5);
    EXPECT_GT(rw.groups[gi].weight, 1.0);
    for (std::size_t b = 0; b < 4; ++b) EXPECT_NEAR(g_rw[u][b], rw.groups[gi].weight * g_tm[u][b], 1e-12);
  }
  EXPECT_GT(max_abs(g_rw), max_abs(g_tm));
}

TEST(Reweight, EasyRunEntropyDecaysNoFasterThanTmn) {
  SyntheticTaskSpec easy;
  easy.quality_low = 0.75;
  easy.quality_high = 0.98;
  easy.num_prompts = 32;
  ExperimentConfig c;
  c.tasks = {easy};
  c.steps = 100;
  c.seed = 0;
  c.estimator.method = Method::tmn;
  const double tmn = run_experiment(c).final_policy.entropy();
  c.estimator.method = Method::tmn_reweight;
  const double rw = run_experiment(c).final_policy.entropy();
  EXPECT_GE(rw, tmn) << "entropy after 100 steps: tmn " << tmn << ", tmn_reweight " << rw;
}

TEST(Config, ParseAndReject) {
  std::istringstream in(
      "# two tasks\n"
      "method = tmn\n"
      "alpha = 0.5\n"
      "steps = 3\n"
      "seed = 9\n"
      "group_size = 8\n"
      "learning_rate = 0.1\n"
      "task = T1 bernoulli prompts=4 low=0.3 high=0.7\n"
      "task = T9 scaled_beta prompts=2 low=0.4 high=0.6 a=2 b=3 scale=0.5\n");
  auto c = parse_experiment_config(in);
  EXPECT_EQ(c.estimator.method, Method::tmn);
  EXPECT_EQ(c.estimator.alpha, 0.5);
  EXPECT_EQ(c.steps, 3u);
  EXPECT_EQ(c.group_size, 8u);
  ASSERT_EQ(c.tasks.size(), 2u);
  EXPECT_EQ(c.tasks[1].beta_b, 3.0);
  EXPECT_EQ(c.tasks[1].num_prompts, 2u);
  EXPECT_NO_THROW(c.validate());
  for (const char* bad : {"steps = -1\n", "colour = red\n", "task = T1\n", "task = T1 bernoulli wat=1\n",
                          "alpha = x\n", "just text\n"}) {
    std::istringstream b(bad);
    EXPECT_THROW(parse_experiment_config(b), Error) << bad;
  }
}

TEST(Config, SampleFileParses) {
  std::ifstream in(TMNRL_SAMPLES "/experiment.cfg");
  ASSERT_TRUE(in.good());
  auto c = parse_experiment_config(in);
  EXPECT_NO_THROW(c.validate());
}

TEST(Trace, Columns) {
  ExperimentConfig c;
  c.tasks = {SyntheticTaskSpec{}};
  c.steps = 2;
  std::ostringstream out;
  write_trace(out, run_experiment(c));
  std::string header;
  std::getline(std::istringstream(out.str()) >> std::ws, header);
  EXPECT_EQ(header, "step\tentropy\tcv\tgrad_norm_T1\tmean_reward_T1");
}
