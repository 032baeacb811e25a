#pragma once

// Synthetic multitask policy-optimization sandbox.
//
// Each prompt owns a softmax policy over a few discrete actions. Choosing an
// action draws a reward from the prompt's task family:
//
//   bernoulli     r = scale * 1[U < q(prompt, action)]                  values {0, scale}
//   scaled_beta   r = c(prompt, action) + scale * (X - a/(a+b)),  X ~ Beta(a, b)
//
// so `variance_scale` multiplies the within-group spread exactly while every
// reward stays in [0,1]. One training step maximizes the token-mean clipped
// surrogate with the configured estimator's advantages at rho = 1 (on-policy).
//
// All randomness comes from per-(purpose, task, prompt, step) substreams of a
// single seed, so a run is a pure function of its configuration.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tmnrl/advantage.hpp"
#include "tmnrl/diagnostics.hpp"
#include "tmnrl/error.hpp"
#include "tmnrl/task_kind.hpp"
#include "tmnrl/text.hpp"

namespace tmnrl::simulator {

using advantage::EstimatorConfig;
using advantage::Method;
using advantage::TaskBatch;

enum class RewardFamily { bernoulli, scaled_beta };

inline RewardFamily parse_family(std::string_view name) {
  if (name == "bernoulli") return RewardFamily::bernoulli;
  if (name == "scaled_beta") return RewardFamily::scaled_beta;
  throw Error(ErrorCode::parse_error, "unknown reward family '" + std::string(name) + "'");
}

constexpr std::string_view family_name(RewardFamily f) {
  return f == RewardFamily::bernoulli ? "bernoulli" : "scaled_beta";
}

struct SyntheticTaskSpec {
  TaskKind task = TaskKind::T1_EM;
  std::size_t num_prompts = 16;
  RewardFamily family = RewardFamily::bernoulli;
  /// Range for the per-(prompt, action) success probability (bernoulli) or
  /// reward centre (scaled_beta).
  double quality_low = 0.2;
  double quality_high = 0.8;
  double beta_a = 2.0;
  double beta_b = 2.0;
  double variance_scale = 1.0;

  void validate() const {
    if (num_prompts == 0) throw Error(ErrorCode::invalid_argument, "task needs at least one prompt");
    if (!(quality_low <= quality_high)) throw Error(ErrorCode::invalid_argument, "quality range is inverted");
    if (!(variance_scale > 0.0)) throw Error(ErrorCode::invalid_argument, "variance_scale must be positive");
    if (family == RewardFamily::bernoulli) {
      if (quality_low < 0.0 || quality_high > 1.0) {
        throw Error(ErrorCode::invalid_argument, "success probabilities must lie in [0,1]");
      }
      if (variance_scale > 1.0) throw Error(ErrorCode::invalid_argument, "bernoulli scale above 1 leaves [0,1]");
    } else {
      if (!(beta_a > 0.0 && beta_b > 0.0)) throw Error(ErrorCode::invalid_argument, "beta shapes must be positive");
      const double m = beta_a / (beta_a + beta_b);
      if (quality_low - variance_scale * m < 0.0 || quality_high + variance_scale * (1.0 - m) > 1.0) {
        throw Error(ErrorCode::invalid_argument, "scaled_beta rewards would leave [0,1]");
      }
    }
  }
};

/// Deterministic substream for one (purpose, task, prompt, step) cell.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t task, std::uint64_t prompt,
                                 std::uint64_t step) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), lo(purpose), lo(task), lo(prompt), hi(prompt), lo(step), hi(step)};
  return std::mt19937_64(seq);
}

enum StreamPurpose : std::uint64_t { kQualityStream = 1, kRolloutStream = 2 };

struct ToyPolicy {
  std::size_t num_actions = 4;
  std::vector<std::vector<double>> logits;   ///< [prompt][action]
  std::vector<std::vector<double>> quality;  ///< [prompt][action]
  std::vector<std::size_t> prompt_task;      ///< index into the task spec list
  std::vector<std::size_t> prompt_local;     ///< prompt index within its task

  std::size_t num_prompts() const { return logits.size(); }

  std::vector<double> probabilities(std::size_t prompt) const {
    const auto& z = logits.at(prompt);
    const double zmax = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double sum = 0.0;
    for (std::size_t a = 0; a < z.size(); ++a) {
      p[a] = std::exp(z[a] - zmax);
      sum += p[a];
    }
    for (double& v : p) v /= sum;
    return p;
  }

  /// Mean softmax entropy over prompts (nats).
  double entropy() const {
    if (logits.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t u = 0; u < num_prompts(); ++u) {
      for (double p : probabilities(u)) {
        if (p > 0.0) total -= p * std::log(p);
      }
    }
    return total / static_cast<double>(num_prompts());
  }
};

/// Uniform initial policy with qualities drawn from each task's range.
inline ToyPolicy make_policy(std::span<const SyntheticTaskSpec> specs, std::size_t num_actions, std::uint64_t seed) {
  if (num_actions < 2) throw Error(ErrorCode::invalid_argument, "policy needs at least two actions");
  ToyPolicy policy;
  policy.num_actions = num_actions;
  for (std::size_t t = 0; t < specs.size(); ++t) {
    specs[t].validate();
    for (std::size_t k = 0; k < specs[t].num_prompts; ++k) {
      auto rng = substream(seed, kQualityStream, t, k, 0);
      std::uniform_real_distribution<double> q(specs[t].quality_low, specs[t].quality_high);
      std::vector<double> qual(num_actions);
      for (double& v : qual) v = specs[t].quality_low == specs[t].quality_high ? specs[t].quality_low : q(rng);
      policy.logits.emplace_back(num_actions, 0.0);
      policy.quality.push_back(std::move(qual));
      policy.prompt_task.push_back(t);
      policy.prompt_local.push_back(k);
    }
  }
  return policy;
}

struct SimBatch {
  TaskBatch batch;
  std::vector<std::size_t> prompt_of_group;        ///< policy prompt index per group
  std::vector<std::vector<std::size_t>> actions;   ///< sampled action per response
};

inline double draw_reward(const SyntheticTaskSpec& spec, double quality, std::mt19937_64& rng) {
  if (spec.family == RewardFamily::bernoulli) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return u(rng) < quality ? spec.variance_scale : 0.0;
  }
  std::gamma_distribution<double> ga(spec.beta_a, 1.0), gb(spec.beta_b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  const double beta = x + y > 0.0 ? x / (x + y) : 0.5;
  const double r = quality + spec.variance_scale * (beta - spec.beta_a / (spec.beta_a + spec.beta_b));
  return std::clamp(r, 0.0, 1.0);  // only absorbs rounding at the range ends
}

/// Samples G actions per prompt and their rewards.
inline SimBatch generate_batch(std::span<const SyntheticTaskSpec> specs, const ToyPolicy& policy,
                               std::size_t group_size, std::uint64_t seed, std::uint64_t step = 0) {
  if (group_size < 2) throw Error(ErrorCode::group_too_small, "group size must be at least 2");
  std::vector<advantage::RolloutGroup> groups;
  SimBatch out;
  for (std::size_t u = 0; u < policy.num_prompts(); ++u) {
    const std::size_t t = policy.prompt_task[u];
    const auto& spec = specs[t];
    auto rng = substream(seed, kRolloutStream, t, policy.prompt_local[u], step);
    auto probs = policy.probabilities(u);
    std::discrete_distribution<std::size_t> pick(probs.begin(), probs.end());
    advantage::RolloutGroup g;
    g.prompt_id = std::string(task_code(spec.task)) + "-p" + std::to_string(policy.prompt_local[u]);
    g.task = spec.task;
    std::vector<std::size_t> acts;
    for (std::size_t i = 0; i < group_size; ++i) {
      const std::size_t a = pick(rng);
      acts.push_back(a);
      g.rewards.push_back(draw_reward(spec, policy.quality[u][a], rng));
      g.token_lengths.push_back(1);
    }
    groups.push_back(std::move(g));
    out.prompt_of_group.push_back(u);
    out.actions.push_back(std::move(acts));
  }
  out.batch = TaskBatch(std::move(groups));
  return out;
}

/// Policy-free batch: every prompt draws one quality from its task's range and
/// G independent rewards from it. Used for single-pass disparity measurements.
inline TaskBatch sample_task_batch(std::span<const SyntheticTaskSpec> specs, std::size_t group_size,
                                   std::uint64_t seed) {
  if (group_size < 2) throw Error(ErrorCode::group_too_small, "group size must be at least 2");
  std::vector<advantage::RolloutGroup> groups;
  for (std::size_t t = 0; t < specs.size(); ++t) {
    const auto& spec = specs[t];
    spec.validate();
    for (std::size_t k = 0; k < spec.num_prompts; ++k) {
      auto rng = substream(seed, kQualityStream, t, k, 0);
      std::uniform_real_distribution<double> q(spec.quality_low, spec.quality_high);
      const double quality = spec.quality_low == spec.quality_high ? spec.quality_low : q(rng);
      advantage::RolloutGroup g;
      g.prompt_id = std::string(task_code(spec.task)) + "-p" + std::to_string(k);
      g.task = spec.task;
      for (std::size_t i = 0; i < group_size; ++i) {
        g.rewards.push_back(draw_reward(spec, quality, rng));
        g.token_lengths.push_back(1);
      }
      groups.push_back(std::move(g));
    }
  }
  return TaskBatch(std::move(groups));
}

using Gradient = std::vector<std::vector<double>>;  ///< [prompt][action]
using GroupAdvantages = std::vector<std::vector<double>>;

enum class SignFilter { all, positive, non_positive };

inline GroupAdvantages final_advantages(const advantage::AdvantageReport& report) {
  GroupAdvantages adv;
  for (const auto& g : report.groups) adv.push_back(g.final_advantage);
  return adv;
}

/// Analytic gradient of the summed per-group token-mean surrogate at
/// rho = 1, where clipping is inactive:
///   dJ/dz_{u,b} = sum_i (|o_i| / sum_j |o_j|) A_i (1[a_i = b] - pi_u(b)).
inline Gradient policy_gradient(const ToyPolicy& policy, const SimBatch& sim, const GroupAdvantages& adv,
                                SignFilter filter = SignFilter::all) {
  Gradient grad(policy.num_prompts(), std::vector<double>(policy.num_actions, 0.0));
  const auto& groups = sim.batch.groups();
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const std::size_t u = sim.prompt_of_group[gi];
    const auto probs = policy.probabilities(u);
    double total = 0.0;
    for (auto len : groups[gi].token_lengths) total += static_cast<double>(len);
    for (std::size_t i = 0; i < groups[gi].size(); ++i) {
      const double a = adv[gi][i];
      if ((filter == SignFilter::positive && !(a > 0.0)) || (filter == SignFilter::non_positive && a > 0.0)) continue;
      const double coef = a * static_cast<double>(groups[gi].token_lengths[i]) / total;
      for (std::size_t b = 0; b < policy.num_actions; ++b) {
        grad[u][b] += coef * ((sim.actions[gi][i] == b ? 1.0 : 0.0) - probs[b]);
      }
    }
  }
  return grad;
}

/// Surrogate objective of `current` against the sampling policy `old`. Every
/// token of a response shares the response's action ratio.
inline double surrogate_objective(const ToyPolicy& current, const ToyPolicy& old, const SimBatch& sim,
                                  const GroupAdvantages& adv, const EstimatorConfig& config, bool clipped = true) {
  double total = 0.0;
  const auto& groups = sim.batch.groups();
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const std::size_t u = sim.prompt_of_group[gi];
    const auto p_new = current.probabilities(u);
    const auto p_old = old.probabilities(u);
    const auto& g = groups[gi];
    if (clipped) {
      std::vector<std::vector<double>> ratios;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t a = sim.actions[gi][i];
        ratios.emplace_back(static_cast<std::size_t>(g.token_lengths[i]), p_new[a] / p_old[a]);
      }
      total += advantage::clipped_surrogate_loss(adv[gi], ratios, g.token_lengths, config);
    } else {
      double tokens = 0.0, sum = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t a = sim.actions[gi][i];
        const double len = static_cast<double>(g.token_lengths[i]);
        sum += len * (p_new[a] / p_old[a]) * adv[gi][i];
        tokens += len;
      }
      total += sum / tokens;
    }
  }
  return total;
}

/// Euclidean norm of the gradient restricted to each task's prompts.
inline std::map<TaskKind, double> per_task_norms(const ToyPolicy& policy, std::span<const SyntheticTaskSpec> specs,
                                                 const Gradient& grad) {
  std::map<TaskKind, double> sq;
  for (const auto& s : specs) sq[s.task] = 0.0;
  for (std::size_t u = 0; u < grad.size(); ++u) {
    double& acc = sq[specs[policy.prompt_task[u]].task];
    for (double v : grad[u]) acc += v * v;
  }
  for (auto& [task, v] : sq) v = std::sqrt(v);
  return sq;
}

struct StepResult {
  ToyPolicy policy;
  std::map<TaskKind, double> grad_norms;
  Gradient gradient;
};

/// One on-policy ascent step on the clipped surrogate.
inline StepResult training_step(const ToyPolicy& policy, std::span<const SyntheticTaskSpec> specs, const SimBatch& sim,
                                const EstimatorConfig& config, double learning_rate) {
  auto report = advantage::compute_advantages(sim.batch, config);
  auto grad = policy_gradient(policy, sim, final_advantages(report));
  StepResult out{policy, per_task_norms(policy, specs, grad), grad};
  for (std::size_t u = 0; u < grad.size(); ++u) {
    for (std::size_t b = 0; b < policy.num_actions; ++b) {
      if (!std::isfinite(grad[u][b])) throw Error(ErrorCode::numerical_failure, "non-finite policy gradient");
      out.policy.logits[u][b] += learning_rate * grad[u][b];
    }
  }
  return out;
}

struct ExperimentConfig {
  std::vector<SyntheticTaskSpec> tasks;
  EstimatorConfig estimator;
  std::size_t group_size = 16;
  std::size_t num_actions = 4;
  double learning_rate = 0.05;
  std::size_t steps = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (tasks.empty()) throw Error(ErrorCode::invalid_argument, "experiment needs at least one task");
    std::map<TaskKind, int> seen;
    for (const auto& t : tasks) {
      t.validate();
      if (seen[t.task]++ > 0) throw Error(ErrorCode::invalid_argument, "task kinds must be distinct");
    }
    estimator.validate();
    if (group_size < 2) throw Error(ErrorCode::group_too_small, "group size must be at least 2");
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::invalid_argument, "learning rate must be positive");
  }
};

struct TraceRow {
  std::size_t step = 0;
  std::map<TaskKind, double> grad_norm;
  std::map<TaskKind, double> mean_reward;
  double entropy = 0.0;  ///< policy entropy when the batch was sampled
  double cv = 0.0;       ///< cv of the per-task gradient norms
};

struct TrainingTrace {
  std::vector<TaskKind> tasks;
  std::vector<TraceRow> rows;
  ToyPolicy final_policy;

  double mean_cv() const {
    if (rows.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : rows) s += r.cv;
    return s / static_cast<double>(rows.size());
  }
};

inline TrainingTrace run_experiment(const ExperimentConfig& config) {
  config.validate();
  TrainingTrace trace;
  for (const auto& t : config.tasks) trace.tasks.push_back(t.task);
  ToyPolicy policy = make_policy(config.tasks, config.num_actions, config.seed);
  for (std::size_t step = 0; step < config.steps; ++step) {
    auto sim = generate_batch(config.tasks, policy, config.group_size, config.seed, step);
    TraceRow row;
    row.step = step;
    row.entropy = policy.entropy();
    std::map<TaskKind, std::size_t> count;
    for (const auto& g : sim.batch.groups()) {
      for (double r : g.rewards) row.mean_reward[g.task] += r;
      count[g.task] += g.size();
    }
    for (auto& [task, v] : row.mean_reward) v /= static_cast<double>(count[task]);
    auto result = training_step(policy, config.tasks, sim, config.estimator, config.learning_rate);
    row.grad_norm = result.grad_norms;
    std::vector<double> norms;
    for (const auto& [task, n] : row.grad_norm) norms.push_back(n);
    row.cv = diagnostics::coefficient_of_variation(norms);
    trace.rows.push_back(std::move(row));
    policy = std::move(result.policy);
  }
  trace.final_policy = std::move(policy);
  return trace;
}

// ---------------------------------------------------------------------------
// Config and trace text formats

/// Parses "key = value" lines; '#' starts a comment. Repeated `task` lines
/// take a kind, a family and optional key=value fields:
///   task = T3 scaled_beta prompts=32 low=0.4 high=0.6 a=2 b=2 scale=0.8
inline ExperimentConfig parse_experiment_config(std::istream& in) {
  ExperimentConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::parse_error, "config line " + std::to_string(lineno) + ": " + what);
  };
  auto to_double = [&](const std::string& v) {
    try {
      std::size_t used = 0;
      double d = std::stod(v, &used);
      if (used != v.size()) fail("bad number '" + v + "'");
      return d;
    } catch (const std::logic_error&) {
      fail("bad number '" + v + "'");
    }
    return 0.0;
  };
  auto to_uint = [&](const std::string& v) {
    try {
      std::size_t used = 0;
      unsigned long long n = std::stoull(v, &used);
      if (used != v.size() || v.front() == '-') fail("bad integer '" + v + "'");
      return static_cast<std::uint64_t>(n);
    } catch (const std::logic_error&) {
      fail("bad integer '" + v + "'");
    }
    return std::uint64_t{0};
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    std::string key = std::string(text::trim(line.substr(0, eq == std::string::npos ? line.size() : eq)));
    if (key.empty()) continue;
    if (eq == std::string::npos) fail("expected key = value");
    std::string value = std::string(text::trim(std::string_view(line).substr(eq + 1)));
    if (key == "method") {
      cfg.estimator.method = advantage::parse_method(value);
    } else if (key == "alpha") {
      cfg.estimator.alpha = to_double(value);
    } else if (key == "delta") {
      cfg.estimator.delta = to_double(value);
    } else if (key == "clip_low") {
      cfg.estimator.clip_low = to_double(value);
    } else if (key == "clip_high") {
      cfg.estimator.clip_high = to_double(value);
    } else if (key == "steps") {
      cfg.steps = to_uint(value);
    } else if (key == "seed") {
      cfg.seed = to_uint(value);
    } else if (key == "group_size") {
      cfg.group_size = to_uint(value);
    } else if (key == "num_actions") {
      cfg.num_actions = to_uint(value);
    } else if (key == "learning_rate") {
      cfg.learning_rate = to_double(value);
    } else if (key == "task") {
      auto fields = text::split_whitespace(value);
      if (fields.size() < 2) fail("task needs a kind and a family");
      SyntheticTaskSpec spec;
      spec.task = parse_task_kind(fields[0]);
      spec.family = parse_family(fields[1]);
      for (std::size_t k = 2; k < fields.size(); ++k) {
        auto e = fields[k].find('=');
        if (e == std::string::npos) fail("task field '" + fields[k] + "' is not key=value");
        std::string fk = fields[k].substr(0, e), fv = fields[k].substr(e + 1);
        if (fk == "prompts") spec.num_prompts = to_uint(fv);
        else if (fk == "low") spec.quality_low = to_double(fv);
        else if (fk == "high") spec.quality_high = to_double(fv);
        else if (fk == "a") spec.beta_a = to_double(fv);
        else if (fk == "b") spec.beta_b = to_double(fv);
        else if (fk == "scale") spec.variance_scale = to_double(fv);
        else fail("unknown task field '" + fk + "'");
      }
      cfg.tasks.push_back(spec);
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  return cfg;
}

/// One row per step: step, entropy, cv, then grad_norm and mean_reward per task.
inline void write_trace(std::ostream& os, const TrainingTrace& trace, int precision = 6) {
  std::ostringstream buf;
  buf << std::setprecision(precision);
  buf << "step\tentropy\tcv";
  for (auto t : trace.tasks) buf << "\tgrad_norm_" << task_code(t);
  for (auto t : trace.tasks) buf << "\tmean_reward_" << task_code(t);
  buf << "\n";
  for (const auto& r : trace.rows) {
    buf << r.step << '\t' << r.entropy << '\t' << r.cv;
    for (auto t : trace.tasks) buf << '\t' << r.grad_norm.at(t);
    for (auto t : trace.tasks) buf << '\t' << r.mean_reward.at(t);
    buf << "\n";
  }
  os << buf.str();
}

}  // namespace tmnrl::simulator
