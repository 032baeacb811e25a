#pragma once

// Command-line front end: score, advantage, diagnose, simulate, decontam.
//
// Exit codes: 0 success, 1 I/O failure, 2 usage or record error.

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tmnrl/advantage.hpp"
#include "tmnrl/diagnostics.hpp"
#include "tmnrl/error.hpp"
#include "tmnrl/io.hpp"
#include "tmnrl/pipeline.hpp"
#include "tmnrl/simulator.hpp"

namespace tmnrl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitUsage = 2;

struct CommandConfig {
  std::string subcommand;
  std::string input, output, train, eval, retained, discarded, config, plot_data;
  std::string method = "tmn_reweight";
  std::vector<std::string> methods = {"grpo", "drgrpo", "tmn"};
  std::string group_by;
  double alpha = 0.8;
  double delta = 1e-6;
  double clip_low = 0.2;
  double clip_high = 0.28;
  std::size_t group_size = 16;
  std::uint64_t seed = 0;
  std::size_t ngram_n = pipeline::kDefaultNgram;
  std::size_t steps = 0;
  double learning_rate = 0.0;
  int precision = 6;
  bool skip_bad = false;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline advantage::EstimatorConfig estimator(const CommandConfig& c, const std::string& method) {
  advantage::EstimatorConfig e;
  e.method = advantage::parse_method(method);
  e.alpha = c.alpha;
  e.delta = c.delta;
  e.clip_low = c.clip_low;
  e.clip_high = c.clip_high;
  e.validate();
  return e;
}

inline void report_skipped(std::ostream& err, std::size_t bad) {
  if (bad > 0) err << "skipped " << bad << " bad record(s)\n";
}

inline int run_score(const CommandConfig& c, std::ostream& err) {
  std::size_t bad = 0;
  auto records = io::read_jsonl(c.input, c.skip_bad ? &bad : nullptr);
  std::vector<io::Json> out;
  for (const auto& lr : records) {
    try {
      out.push_back(io::score_record(lr.value, c.precision));
    } catch (const Error& e) {
      if (!c.skip_bad) throw Error(e.code(), "line " + std::to_string(lr.line) + ": " + e.what());
      ++bad;
    }
  }
  io::write_files_atomically({{c.output, io::to_jsonl(out)}});
  report_skipped(err, bad);
  return kExitOk;
}

inline advantage::TaskBatch load_batch(const CommandConfig& c, std::ostream& err) {
  std::size_t bad = 0;
  auto records = io::read_jsonl(c.input, c.skip_bad ? &bad : nullptr);
  auto groups = io::groups_from_records(records, c.group_by, c.skip_bad ? &bad : nullptr);
  report_skipped(err, bad);
  return advantage::TaskBatch(std::move(groups));
}

inline int run_advantage(const CommandConfig& c, std::ostream& err) {
  auto cfg = estimator(c, c.method);
  auto batch = load_batch(c, err);
  auto report = advantage::compute_advantages(batch, cfg);
  io::write_files_atomically({{c.output, io::to_jsonl(io::report_records(batch, report, c.precision))}});
  return kExitOk;
}

inline int run_diagnose(const CommandConfig& c, std::ostream& err) {
  auto batch = load_batch(c, err);
  std::vector<diagnostics::DisparityReport> reports;
  for (const auto& m : c.methods) reports.push_back(diagnostics::disparity_report(batch, estimator(c, m)));
  std::ostringstream table;
  diagnostics::write_disparity_table(table, reports, c.precision);
  std::vector<std::pair<std::filesystem::path, std::string>> files{{c.output, table.str()}};
  if (!c.plot_data.empty()) {
    std::ostringstream plot;
    diagnostics::write_plot_data(plot, reports, c.precision);
    files.emplace_back(c.plot_data, plot.str());
  }
  io::write_files_atomically(files);
  return kExitOk;
}

inline int run_simulate(const CommandConfig& c, const CLI::App& sub) {
  std::istringstream text(io::read_file(c.config));
  auto cfg = simulator::parse_experiment_config(text);
  if (sub.count("--method")) cfg.estimator.method = advantage::parse_method(c.method);
  if (sub.count("--alpha")) cfg.estimator.alpha = c.alpha;
  if (sub.count("--delta")) cfg.estimator.delta = c.delta;
  if (sub.count("--clip-low")) cfg.estimator.clip_low = c.clip_low;
  if (sub.count("--clip-high")) cfg.estimator.clip_high = c.clip_high;
  if (sub.count("--group-size")) cfg.group_size = c.group_size;
  if (sub.count("--seed")) cfg.seed = c.seed;
  if (sub.count("--steps")) cfg.steps = c.steps;
  if (sub.count("--learning-rate")) cfg.learning_rate = c.learning_rate;
  auto trace = simulator::run_experiment(cfg);
  std::ostringstream out;
  simulator::write_trace(out, trace, c.precision);
  io::write_files_atomically({{c.output, out.str()}});
  return kExitOk;
}

inline std::vector<pipeline::QueryRecord> load_queries(const std::string& path, bool skip_bad, std::size_t& bad) {
  std::vector<pipeline::QueryRecord> out;
  for (const auto& lr : io::read_jsonl(path, skip_bad ? &bad : nullptr)) {
    try {
      out.push_back(io::query_from_record(lr.value));
    } catch (const Error& e) {
      if (!skip_bad) throw Error(e.code(), path + " line " + std::to_string(lr.line) + ": " + e.what());
      ++bad;
    }
  }
  return out;
}

inline int run_decontam(const CommandConfig& c, std::ostream& err) {
  std::size_t bad = 0;
  auto train = load_queries(c.train, c.skip_bad, bad);
  auto eval = load_queries(c.eval, c.skip_bad, bad);
  auto result = pipeline::ngram_overlap_filter(train, eval, c.ngram_n);
  std::vector<io::Json> kept, dropped;
  // Retained records are re-read so the output keeps every original field.
  std::unordered_map<std::string, io::Json> originals;
  for (const auto& lr : io::read_jsonl(c.train, c.skip_bad ? &bad : nullptr)) {
    if (lr.value.contains("id") && lr.value.at("id").is_string()) {
      originals.emplace(lr.value.at("id").get<std::string>(), lr.value);
    }
  }
  for (const auto& r : result.retained) kept.push_back(originals.at(r.id));
  for (const auto& d : result.discarded) dropped.push_back(io::discarded_record(d));
  io::write_files_atomically({{c.retained, io::to_jsonl(kept)}, {c.discarded, io::to_jsonl(dropped)}});
  report_skipped(err, bad);
  err << "retained " << kept.size() << ", discarded " << dropped.size() << "\n";
  return kExitOk;
}

}  // namespace detail

/// Parses `args` (without the program name) and runs the selected subcommand.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CommandConfig c;
  CLI::App app{"Reward scoring, group-relative advantage estimation and multitask diagnostics", "tmnrl"};
  app.require_subcommand(1);

  auto add_precision = [&](CLI::App* s) {
    s->add_option("--precision", c.precision, "Significant digits of numeric output (default 6)")
        ->check(CLI::Range(1, 17))
        ->envname("TMNRL_PRECISION");
  };
  auto add_estimator = [&](CLI::App* s) {
    s->add_option("--alpha", c.alpha, "Pass-rate smoothing coefficient (default 0.8, best value of the alpha ablation)")
        ->check(CLI::Range(0.0, 1.0))
        ->envname("TMNRL_ALPHA");
    s->add_option("--delta", c.delta, "Stability constant added to the denominator (default 1e-6)")
        ->check(CLI::PositiveNumber)
        ->envname("TMNRL_DELTA");
    s->add_option("--clip-low", c.clip_low, "Lower clip ratio (default 0.2)")->envname("TMNRL_CLIP_LOW");
    s->add_option("--clip-high", c.clip_high, "Upper clip ratio (default 0.28)")->envname("TMNRL_CLIP_HIGH");
  };
  const auto methods = CLI::IsMember({"grpo", "drgrpo", "tmn", "tmn_reweight"});

  auto* score = app.add_subcommand("score", "Score predictions against references");
  score->add_option("--in", c.input, "Input records {id, task, prediction, reference}")->required()->check(CLI::ExistingFile);
  score->add_option("--out", c.output, "Output records with reward and parse_ok")->required();
  score->add_flag("--skip-bad", c.skip_bad, "Count and skip malformed records instead of failing");
  add_precision(score);

  auto* adv = app.add_subcommand("advantage", "Compute per-response advantages");
  adv->add_option("--in", c.input, "Rollout records {prompt_id, task, rewards, token_lengths}")->required()->check(CLI::ExistingFile);
  adv->add_option("--out", c.output, "Advantage report (one record per prompt plus a batch trailer)")->required();
  adv->add_option("--method", c.method, "Estimator (default tmn_reweight)")->check(methods)->envname("TMNRL_METHOD");
  adv->add_option("--group-by", c.group_by, "Assemble groups from flat scored records by this field (e.g. prompt_id)");
  adv->add_flag("--skip-bad", c.skip_bad, "Count and skip malformed records instead of failing");
  add_estimator(adv);
  add_precision(adv);

  auto* diag = app.add_subcommand("diagnose", "Cross-task disparity of mean absolute advantages");
  diag->add_option("--in", c.input, "Rollout records or an advantage report")->required()->check(CLI::ExistingFile);
  diag->add_option("--out", c.output, "Disparity table")->required();
  diag->add_option("--methods", c.methods, "Estimators to compare (default grpo,drgrpo,tmn)")
      ->delimiter(',')
      ->check(methods);
  diag->add_option("--group-by", c.group_by, "Assemble groups from flat scored records by this field");
  diag->add_option("--plot-data", c.plot_data, "Also write columnar plot data to this path");
  diag->add_flag("--skip-bad", c.skip_bad, "Count and skip malformed records instead of failing");
  add_estimator(diag);
  add_precision(diag);

  auto* sim = app.add_subcommand("simulate", "Run the synthetic multitask training sandbox");
  sim->add_option("--config", c.config, "Experiment config (key = value lines)")->required()->check(CLI::ExistingFile);
  sim->add_option("--out", c.output, "Trace output (one row per step)")->required();
  sim->add_option("--method", c.method, "Override the config's estimator")->check(methods);
  sim->add_option("--group-size", c.group_size, "Rollouts per prompt (default 16, the training group size)")
      ->check(CLI::Range(2, 1 << 20))
      ->envname("TMNRL_GROUP_SIZE");
  sim->add_option("--seed", c.seed, "Experiment seed (default 0)")->envname("TMNRL_SEED");
  sim->add_option("--steps", c.steps, "Override the number of training steps");
  sim->add_option("--learning-rate", c.learning_rate, "Override the toy-policy learning rate (default 0.05)")
      ->check(CLI::PositiveNumber);
  add_estimator(sim);
  add_precision(sim);

  auto* dec = app.add_subcommand("decontam", "Drop training queries sharing an n-gram with evaluation queries");
  dec->add_option("--train", c.train, "Training query records {id, text}")->required()->check(CLI::ExistingFile);
  dec->add_option("--eval", c.eval, "Evaluation query records {id, text}")->required()->check(CLI::ExistingFile);
  dec->add_option("--n", c.ngram_n, "Window length in tokens (default 13)")
      ->check(CLI::Range(1, 1 << 20))
      ->envname("TMNRL_NGRAM_N");
  dec->add_option("--retained", c.retained, "Output for kept training records")->required();
  dec->add_option("--discarded", c.discarded, "Output for dropped records with witness spans")->required();
  dec->add_flag("--skip-bad", c.skip_bad, "Count and skip malformed records instead of failing");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    auto same = [](const std::string& a, const std::string& b) {
      return !a.empty() && !b.empty() && std::filesystem::weakly_canonical(a) == std::filesystem::weakly_canonical(b);
    };
    if (same(c.input, c.output) || same(c.retained, c.discarded) || same(c.train, c.retained) ||
        same(c.train, c.discarded) || same(c.output, c.plot_data) || same(c.config, c.output)) {
      throw UsageError("input and output paths must differ");
    }
    if (*score) return detail::run_score(c, err);
    if (*adv) return detail::run_advantage(c, err);
    if (*diag) return detail::run_diagnose(c, err);
    if (*sim) return detail::run_simulate(c, *sim);
    if (*dec) return detail::run_decontam(c, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::io_error ? kExitIo : kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace tmnrl::cli
