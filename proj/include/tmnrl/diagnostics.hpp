#pragma once

// Cross-task disparity of advantage magnitudes.
//
// For a method, every task gets the mean |advantage| over its responses. The
// per-task values are divided by their cross-task mean, so a perfectly
// uniform estimator puts every task at 1.0. The coefficient of variation
// (population std / mean) summarizes the spread; a task is "within band"
// when its normalized value is inside 1 +- 0.15.

#include <cmath>
#include <cstddef>
#include <iomanip>
#include <map>
#include <ostream>
#include <vector>

#include "tmnrl/advantage.hpp"
#include "tmnrl/error.hpp"
#include "tmnrl/task_kind.hpp"

namespace tmnrl::diagnostics {

using advantage::EstimatorConfig;
using advantage::Method;
using advantage::TaskBatch;

inline constexpr double kBandHalfWidth = 0.15;

struct DisparityReport {
  Method method = Method::grpo;
  std::map<TaskKind, double> per_task_mean_abs;
  std::map<TaskKind, double> normalized;
  std::map<TaskKind, bool> within_band;
  double cv = 0.0;
};

/// Mean of |final advantage| over the responses of each task (per response,
/// not per token).
inline std::map<TaskKind, double> per_task_mean_abs_advantage(const TaskBatch& batch, const EstimatorConfig& config) {
  auto report = advantage::compute_advantages(batch, config);
  std::map<TaskKind, double> sum;
  std::map<TaskKind, std::size_t> count;
  for (const auto& g : report.groups) {
    for (double a : g.final_advantage) sum[g.task] += std::fabs(a);
    count[g.task] += g.final_advantage.size();
  }
  std::map<TaskKind, double> out;
  for (const auto& [task, s] : sum) out[task] = s / static_cast<double>(count[task]);
  return out;
}

/// Population coefficient of variation; 0 for an all-zero input.
inline double coefficient_of_variation(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (mean == 0.0) return 0.0;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size())) / mean;
}

inline DisparityReport disparity_report(const TaskBatch& batch, const EstimatorConfig& config) {
  if (batch.num_tasks() < 2) throw Error(ErrorCode::insufficient_tasks, "disparity needs at least two tasks");
  DisparityReport rep;
  rep.method = config.method;
  rep.per_task_mean_abs = per_task_mean_abs_advantage(batch, config);

  std::vector<double> values;
  double mean = 0.0;
  for (const auto& [task, v] : rep.per_task_mean_abs) {
    values.push_back(v);
    mean += v;
  }
  mean /= static_cast<double>(values.size());
  if (!(mean > 0.0)) throw Error(ErrorCode::degenerate_batch, "every task has zero mean |advantage|");
  for (const auto& [task, v] : rep.per_task_mean_abs) {
    const double n = v / mean;
    rep.normalized[task] = n;
    rep.within_band[task] = std::fabs(n - 1.0) <= kBandHalfWidth;
  }
  rep.cv = coefficient_of_variation(values);
  return rep;
}

struct SecondMoment {
  double value = 0.0;     ///< mean of TMN A^2 over the task's responses
  double expected = 0.0;  ///< (G-1)/G
  bool degenerate = false;
};

/// Within-task mean of squared TMN advantages. With equal group size G and
/// delta -> 0 this equals (G-1)/G for any reward distribution.
inline std::map<TaskKind, SecondMoment> second_moment_check(const TaskBatch& batch, EstimatorConfig config) {
  if (config.delta > 1e-8) throw Error(ErrorCode::invalid_argument, "second-moment check needs delta <= 1e-8");
  config.method = Method::tmn;
  for (const auto& [task, indices] : batch.partition()) {
    const std::size_t g0 = batch.groups()[indices.front()].size();
    for (auto i : indices) {
      if (batch.groups()[i].size() != g0) {
        throw Error(ErrorCode::mixed_group_size, "second-moment check needs one group size per task");
      }
    }
  }
  auto report = advantage::compute_advantages(batch, config);
  std::map<TaskKind, double> sum;
  std::map<TaskKind, std::size_t> count;
  for (const auto& g : report.groups) {
    for (double a : g.raw_advantage) sum[g.task] += a * a;
    count[g.task] += g.raw_advantage.size();
  }
  std::map<TaskKind, SecondMoment> out;
  for (const auto& [task, indices] : batch.partition()) {
    const double gsize = static_cast<double>(batch.groups()[indices.front()].size());
    SecondMoment m;
    m.value = sum[task] / static_cast<double>(count[task]);
    m.expected = (gsize - 1.0) / gsize;
    m.degenerate = report.task(task).degenerate;
    out[task] = m;
  }
  return out;
}

/// Per-method table: one row per task, then the cv line.
inline void write_disparity_table(std::ostream& os, const std::vector<DisparityReport>& reports, int precision = 6) {
  os << std::setprecision(precision);
  for (const auto& rep : reports) {
    os << "# method " << advantage::method_name(rep.method) << "\n";
    os << "task\tmean_abs\tnormalized\twithin_band\n";
    for (const auto& [task, v] : rep.per_task_mean_abs) {
      os << task_code(task) << '\t' << v << '\t' << rep.normalized.at(task) << '\t'
         << (rep.within_band.at(task) ? "true" : "false") << "\n";
    }
    os << "cv\t" << rep.cv << "\n\n";
  }
}

/// Columnar export for external plotting: method, task, normalized value.
inline void write_plot_data(std::ostream& os, const std::vector<DisparityReport>& reports, int precision = 6) {
  os << std::setprecision(precision);
  os << "method\ttask\tnormalized\tcv\n";
  for (const auto& rep : reports) {
    for (const auto& [task, n] : rep.normalized) {
      os << advantage::method_name(rep.method) << '\t' << task_code(task) << '\t' << n << '\t' << rep.cv << "\n";
    }
  }
}

}  // namespace tmnrl::diagnostics
