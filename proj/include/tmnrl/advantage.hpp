#pragma once

// Group-relative advantage estimators and the clipped surrogate objective.
//
//   grpo          A_i = (r_i - mu_u) / (sigma_u + delta)
//   drgrpo        A_i = r_i - mu_u
//   tmn           A_i = (r_i - mu_u) / (sigma_task + delta),
//                 sigma_task = sqrt(mean_u sigma_u^2) over the task's groups
//   tmn_reweight  tmn, then positive A_i * w and non-positive A_i / w with
//                 w = exp(0.5 - p), p = #{r_i > alpha mu_u + (1-alpha) mu_task} / G
//
// sigma_u is the sample standard deviation (divisor G-1). Estimation is two
// passes: task statistics first, then the per-response transform.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tmnrl/error.hpp"
#include "tmnrl/task_kind.hpp"

namespace tmnrl::advantage {

enum class Method { grpo, drgrpo, tmn, tmn_reweight };

constexpr std::string_view method_name(Method m) {
  switch (m) {
    case Method::grpo: return "grpo";
    case Method::drgrpo: return "drgrpo";
    case Method::tmn: return "tmn";
    case Method::tmn_reweight: return "tmn_reweight";
  }
  return "unknown";
}

inline Method parse_method(std::string_view name) {
  for (Method m : {Method::grpo, Method::drgrpo, Method::tmn, Method::tmn_reweight}) {
    if (name == method_name(m)) return m;
  }
  throw Error(ErrorCode::parse_error, "unknown estimator '" + std::string(name) + "'");
}

struct EstimatorConfig {
  Method method = Method::tmn_reweight;
  double delta = 1e-6;
  double alpha = 0.8;
  double clip_low = 0.2;
  double clip_high = 0.28;
  /// Dr. GRPO loss constant; unset means the longest response in the group.
  std::optional<std::int64_t> global_length;

  void validate() const {
    if (!(delta > 0.0)) throw Error(ErrorCode::invalid_argument, "delta must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::invalid_argument, "alpha must lie in [0,1]");
    if (!(clip_low > 0.0 && clip_low < 1.0) || !(clip_high > 0.0 && clip_high < 1.0)) {
      throw Error(ErrorCode::invalid_argument, "clip bounds must lie in (0,1)");
    }
    if (global_length && *global_length <= 0) {
      throw Error(ErrorCode::invalid_argument, "global length must be positive");
    }
  }
};

struct RolloutGroup {
  std::string prompt_id;
  TaskKind task = TaskKind::T1_EM;
  std::vector<double> rewards;
  std::vector<std::int64_t> token_lengths;

  std::size_t size() const { return rewards.size(); }
};

enum class RewardCheck { unit_interval, any_finite };

/// Throws when a group breaks its structural invariants. Records from
/// ingestion use `unit_interval`; algebraic checks may lift the range.
inline void validate_group(const RolloutGroup& g, RewardCheck check = RewardCheck::unit_interval) {
  if (g.rewards.size() < 2) {
    throw Error(ErrorCode::group_too_small, "group '" + g.prompt_id + "' has fewer than 2 rollouts");
  }
  if (g.token_lengths.size() != g.rewards.size()) {
    throw Error(ErrorCode::invalid_argument, "group '" + g.prompt_id + "' has mismatched rewards and token_lengths");
  }
  for (double r : g.rewards) {
    if (!std::isfinite(r)) throw Error(ErrorCode::invalid_argument, "non-finite reward in '" + g.prompt_id + "'");
    if (check == RewardCheck::unit_interval && (r < 0.0 || r > 1.0)) {
      throw Error(ErrorCode::invalid_argument, "reward outside [0,1] in '" + g.prompt_id + "'");
    }
  }
  for (auto len : g.token_lengths) {
    if (len <= 0) throw Error(ErrorCode::invalid_argument, "non-positive token length in '" + g.prompt_id + "'");
  }
}

/// Groups of one batch with their partition by task. The partition keeps
/// first-appearance order of groups inside every task.
class TaskBatch {
 public:
  TaskBatch() = default;

  explicit TaskBatch(std::vector<RolloutGroup> groups, RewardCheck check = RewardCheck::unit_interval)
      : groups_(std::move(groups)) {
    for (std::size_t i = 0; i < groups_.size(); ++i) {
      validate_group(groups_[i], check);
      partition_[groups_[i].task].push_back(i);
    }
  }

  const std::vector<RolloutGroup>& groups() const { return groups_; }
  const std::map<TaskKind, std::vector<std::size_t>>& partition() const { return partition_; }
  std::size_t num_tasks() const { return partition_.size(); }
  bool empty() const { return groups_.empty(); }

 private:
  std::vector<RolloutGroup> groups_;
  std::map<TaskKind, std::vector<std::size_t>> partition_;
};

// ---------------------------------------------------------------------------
// Building blocks

struct GroupStats {
  double mean = 0.0;
  double sample_std = 0.0;
};

inline GroupStats group_stats(std::span<const double> rewards) {
  if (rewards.size() < 2) throw Error(ErrorCode::group_too_small, "group statistics need at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  // Summed as offsets from the first reward so a constant group has mean
  // exactly equal to its rewards and a std of exactly 0.
  const double base = rewards[0];
  double offset = 0.0;
  for (double r : rewards) offset += r - base;
  const double mean = base + offset / n;
  double ss = 0.0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

inline std::vector<double> grpo_advantages(const RolloutGroup& group, double delta) {
  auto [mean, sd] = group_stats(group.rewards);
  std::vector<double> adv;
  adv.reserve(group.size());
  for (double r : group.rewards) adv.push_back((r - mean) / (sd + delta));
  return adv;
}

inline std::vector<double> drgrpo_advantages(const RolloutGroup& group) {
  auto [mean, sd] = group_stats(group.rewards);
  std::vector<double> adv;
  adv.reserve(group.size());
  for (double r : group.rewards) adv.push_back(r - mean);
  return adv;
}

/// Root mean square of per-group standard deviations. delta is not added here.
inline double task_sigma(std::span<const double> group_stds) {
  if (group_stds.empty()) throw Error(ErrorCode::empty_task, "task has no groups");
  double ss = 0.0;
  for (double s : group_stds) ss += s * s;
  return std::sqrt(ss / static_cast<double>(group_stds.size()));
}

struct SmoothedPassRate {
  double smoothed_mu = 0.0;
  double pass_rate = 0.0;
};

/// Interpolates the group mean towards the task mean and counts rewards
/// strictly above the result. Ties count as failures.
inline SmoothedPassRate smoothed_pass_rate(std::span<const double> rewards, double mu_task, double alpha) {
  auto [mean, sd] = group_stats(rewards);
  const double smoothed = alpha * mean + (1.0 - alpha) * mu_task;
  std::size_t above = 0;
  for (double r : rewards) above += r > smoothed ? 1 : 0;
  return {smoothed, static_cast<double>(above) / static_cast<double>(rewards.size())};
}

inline SmoothedPassRate smoothed_pass_rate(const RolloutGroup& group, double mu_task, double alpha) {
  return smoothed_pass_rate(std::span<const double>(group.rewards), mu_task, alpha);
}

/// Fraction of strictly positive rewards. High variance at small G; kept only
/// as a diagnostic and never used for the weight.
inline double naive_pass_rate(std::span<const double> rewards) {
  if (rewards.empty()) return 0.0;
  std::size_t pos = 0;
  for (double r : rewards) pos += r > 0.0 ? 1 : 0;
  return static_cast<double>(pos) / static_cast<double>(rewards.size());
}

inline double difficulty_weight(double pass_rate) {
  if (!(pass_rate >= 0.0 && pass_rate <= 1.0)) {
    throw Error(ErrorCode::domain_error, "pass rate must lie in [0,1]");
  }
  return std::exp(0.5 - pass_rate);
}

/// Positive advantages scale by w, the rest by 1/w. The sign never changes.
inline double reweight_four_quadrant(double raw_advantage, double weight) {
  if (!(weight > 0.0)) throw Error(ErrorCode::invalid_argument, "weight must be positive");
  return raw_advantage > 0.0 ? raw_advantage * weight : raw_advantage / weight;
}

// ---------------------------------------------------------------------------
// Batch estimation

struct GroupAdvantage {
  std::string prompt_id;
  TaskKind task = TaskKind::T1_EM;
  double mu = 0.0;
  double sigma = 0.0;
  double smoothed_mu = 0.0;
  double pass_rate = 0.0;
  double weight = 1.0;  ///< weight actually applied; 1 unless tmn_reweight
  std::vector<double> raw_advantage;
  std::vector<double> final_advantage;
};

struct TaskStats {
  TaskKind task = TaskKind::T1_EM;
  double sigma_task = 0.0;
  double mu_task = 0.0;
  std::size_t num_groups = 0;
  /// Every group of the task has zero variance; all its advantages are 0.
  bool degenerate = false;
};

struct AdvantageReport {
  Method method = Method::tmn_reweight;
  std::vector<GroupAdvantage> groups;  ///< batch order
  std::map<TaskKind, TaskStats> tasks;

  const TaskStats& task(TaskKind kind) const {
    auto it = tasks.find(kind);
    if (it == tasks.end()) throw Error(ErrorCode::empty_task, "task not present in report");
    return it->second;
  }
};

namespace detail {

// Pass 1: per-group mean/std and per-task sigma/mu.
inline AdvantageReport collect_statistics(const TaskBatch& batch, const EstimatorConfig& config) {
  AdvantageReport report;
  report.method = config.method;
  report.groups.resize(batch.groups().size());
  for (std::size_t i = 0; i < batch.groups().size(); ++i) {
    const auto& g = batch.groups()[i];
    auto [mean, sd] = group_stats(g.rewards);
    auto& out = report.groups[i];
    out.prompt_id = g.prompt_id;
    out.task = g.task;
    out.mu = mean;
    out.sigma = sd;
  }
  for (const auto& [task, indices] : batch.partition()) {
    if (indices.empty()) throw Error(ErrorCode::empty_task, "task partition cell is empty");
    std::vector<double> stds;
    double mu_sum = 0.0;
    for (auto i : indices) {
      stds.push_back(report.groups[i].sigma);
      mu_sum += report.groups[i].mu;
    }
    TaskStats ts;
    ts.task = task;
    ts.sigma_task = task_sigma(stds);
    ts.mu_task = mu_sum / static_cast<double>(indices.size());
    ts.num_groups = indices.size();
    ts.degenerate = ts.sigma_task == 0.0;
    report.tasks.emplace(task, ts);
  }
  return report;
}

}  // namespace detail

/// All four estimators share one report layout; the method picks the transform.
inline AdvantageReport compute_advantages(const TaskBatch& batch, const EstimatorConfig& config) {
  config.validate();
  AdvantageReport report = detail::collect_statistics(batch, config);

  // Pass 2: per-response transform.
  for (std::size_t i = 0; i < batch.groups().size(); ++i) {
    const auto& g = batch.groups()[i];
    auto& out = report.groups[i];
    const TaskStats& ts = report.tasks.at(g.task);
    auto sp = smoothed_pass_rate(g, ts.mu_task, config.alpha);
    out.smoothed_mu = sp.smoothed_mu;
    out.pass_rate = sp.pass_rate;

    double denom = 1.0;
    switch (config.method) {
      case Method::grpo: denom = out.sigma + config.delta; break;
      case Method::drgrpo: denom = 1.0; break;
      case Method::tmn:
      case Method::tmn_reweight: denom = ts.sigma_task + config.delta; break;
    }
    const double weight = config.method == Method::tmn_reweight ? difficulty_weight(out.pass_rate) : 1.0;
    out.weight = weight;
    out.raw_advantage.reserve(g.size());
    out.final_advantage.reserve(g.size());
    for (double r : g.rewards) {
      const double raw = (r - out.mu) / denom;
      out.raw_advantage.push_back(raw);
      out.final_advantage.push_back(config.method == Method::tmn_reweight ? reweight_four_quadrant(raw, weight) : raw);
    }
  }
  return report;
}

inline AdvantageReport tmn_advantages(const TaskBatch& batch, double delta) {
  EstimatorConfig config;
  config.method = Method::tmn;
  config.delta = delta;
  return compute_advantages(batch, config);
}

inline AdvantageReport tmn_reweight_advantages(const TaskBatch& batch, const EstimatorConfig& config) {
  if (config.method != Method::tmn_reweight) {
    throw Error(ErrorCode::invalid_argument, "tmn_reweight_advantages requires method tmn_reweight");
  }
  return compute_advantages(batch, config);
}

// ---------------------------------------------------------------------------
// Clipped surrogate objective

enum class LossAggregation {
  group_token_mean,  ///< divide the group's token sum by sum_j |o_j|
  sequence_mean,     ///< 1/|o_i| inside each response, then 1/G
  global_constant,   ///< 1/(G L) with the configured global length
};

/// The aggregation each estimator names in its own objective. Values from
/// different aggregations are not comparable.
constexpr LossAggregation paired_aggregation(Method m) {
  switch (m) {
    case Method::grpo: return LossAggregation::sequence_mean;
    case Method::drgrpo: return LossAggregation::global_constant;
    default: return LossAggregation::group_token_mean;
  }
}

inline double clip(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

/// Surrogate term min(rho A, clip(rho, 1-eps_low, 1+eps_high) A).
inline double clipped_term(double ratio, double adv, double clip_low, double clip_high) {
  return std::min(ratio * adv, clip(ratio, 1.0 - clip_low, 1.0 + clip_high) * adv);
}

/// Objective value (maximization convention) of one group.
/// `ratios[i]` holds the per-token importance ratios of response i.
inline double clipped_surrogate_loss(std::span<const double> advantages,
                                     const std::vector<std::vector<double>>& ratios,
                                     std::span<const std::int64_t> token_lengths, const EstimatorConfig& config,
                                     LossAggregation aggregation = LossAggregation::group_token_mean) {
  config.validate();
  const std::size_t n = advantages.size();
  if (ratios.size() != n || token_lengths.size() != n || n == 0) {
    throw Error(ErrorCode::invalid_argument, "advantages, ratios and token lengths must have equal non-zero length");
  }
  std::int64_t total_tokens = 0;
  std::int64_t longest = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (token_lengths[i] <= 0 || ratios[i].size() != static_cast<std::size_t>(token_lengths[i])) {
      throw Error(ErrorCode::invalid_argument, "ratio count must equal the response token length");
    }
    total_tokens += token_lengths[i];
    longest = std::max(longest, token_lengths[i]);
  }

  double objective = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double response_sum = 0.0;
    for (double rho : ratios[i]) {
      if (!(rho > 0.0) || !std::isfinite(rho)) throw Error(ErrorCode::invalid_ratio, "importance ratio must be positive");
      response_sum += clipped_term(rho, advantages[i], config.clip_low, config.clip_high);
    }
    if (aggregation == LossAggregation::sequence_mean) response_sum /= static_cast<double>(token_lengths[i]);
    objective += response_sum;
  }
  switch (aggregation) {
    case LossAggregation::group_token_mean: return objective / static_cast<double>(total_tokens);
    case LossAggregation::sequence_mean: return objective / static_cast<double>(n);
    case LossAggregation::global_constant: {
      const double length = static_cast<double>(config.global_length.value_or(longest));
      return objective / (static_cast<double>(n) * length);
    }
  }
  return objective;
}

}  // namespace tmnrl::advantage
