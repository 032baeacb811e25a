#pragma once

// Newline-delimited JSON records for every file schema the tools exchange,
// plus atomic file output.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "tmnrl/advantage.hpp"
#include "tmnrl/error.hpp"
#include "tmnrl/pipeline.hpp"
#include "tmnrl/rewards.hpp"
#include "tmnrl/task_kind.hpp"
#include "tmnrl/text.hpp"

namespace tmnrl::io {

using Json = nlohmann::ordered_json;

/// Rounds to `precision` significant digits so serialization is stable.
inline double round_significant(double value, int precision) {
  if (!std::isfinite(value) || value == 0.0) return value == 0.0 ? 0.0 : value;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, value);
  return std::strtod(buf, nullptr);
}

inline Json number(double v, int precision) { return round_significant(v, precision); }

inline Json numbers(const std::vector<double>& v, int precision) {
  Json arr = Json::array();
  for (double x : v) arr.push_back(round_significant(x, precision));
  return arr;
}

struct LineRecord {
  std::size_t line = 0;
  Json value;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Parses every non-blank line; a malformed line throws unless `bad` is
/// given, in which case it is counted and skipped.
inline std::vector<LineRecord> parse_jsonl(const std::string& content, std::size_t* bad = nullptr) {
  std::vector<LineRecord> out;
  std::istringstream in(content);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      if (bad) {
        ++*bad;
        continue;
      }
      throw Error(ErrorCode::parse_error, "line " + std::to_string(lineno) + ": not a JSON object");
    }
    out.push_back({lineno, std::move(j)});
  }
  return out;
}

inline std::vector<LineRecord> read_jsonl(const std::filesystem::path& path, std::size_t* bad = nullptr) {
  return parse_jsonl(read_file(path), bad);
}

inline std::string to_jsonl(const std::vector<Json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

/// Writes every file to a sibling temporary first and renames only after all
/// writes succeeded, so a failure leaves no partial outputs behind.
inline void write_files_atomically(const std::vector<std::pair<std::filesystem::path, std::string>>& files) {
  std::vector<std::filesystem::path> temps;
  auto cleanup = [&] {
    std::error_code ec;
    for (const auto& t : temps) std::filesystem::remove(t, ec);
  };
  for (const auto& [path, content] : files) {
    auto tmp = path;
    tmp += ".tmp";
    temps.push_back(tmp);
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    out.close();
    if (!out) {
      cleanup();
      throw Error(ErrorCode::io_error, "cannot write '" + path.string() + "'");
    }
  }
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::error_code ec;
    std::filesystem::rename(temps[i], files[i].first, ec);
    if (ec) {
      cleanup();
      throw Error(ErrorCode::io_error, "cannot rename into '" + files[i].first.string() + "'");
    }
  }
}

template <class T>
T field(const Json& rec, const char* key) {
  if (!rec.contains(key)) throw Error(ErrorCode::parse_error, std::string("missing field '") + key + "'");
  try {
    return rec.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::parse_error, std::string("field '") + key + "' has the wrong type");
  }
}

// ---------------------------------------------------------------------------
// Scoring records: {"id", "task", "prediction", "reference"} -> + {"reward", "parse_ok"}

inline Json score_record(const Json& rec, int precision) {
  field<std::string>(rec, "id");
  TaskKind kind = parse_task_kind(field<std::string>(rec, "task"));
  auto prediction = field<std::string>(rec, "prediction");
  if (!rec.contains("reference")) throw Error(ErrorCode::parse_error, "missing field 'reference'");
  nlohmann::json ref = nlohmann::json::parse(rec.at("reference").dump());
  auto result = rewards::score(kind, prediction, rewards::reference_from_json(kind, ref));
  Json out = rec;
  out["reward"] = number(result.reward, precision);
  out["parse_ok"] = result.parse_ok;
  return out;
}

// ---------------------------------------------------------------------------
// Rollout records: {"prompt_id", "task", "rewards": [..], "token_lengths": [..]}

inline bool is_trailer(const Json& rec) {
  return rec.contains("type") && rec.at("type").is_string() && rec.at("type").get<std::string>() == "batch_trailer";
}

inline advantage::RolloutGroup group_from_record(const Json& rec) {
  advantage::RolloutGroup g;
  g.prompt_id = field<std::string>(rec, "prompt_id");
  g.task = parse_task_kind(field<std::string>(rec, "task"));
  g.rewards = field<std::vector<double>>(rec, "rewards");
  if (rec.contains("token_lengths")) {
    g.token_lengths = field<std::vector<std::int64_t>>(rec, "token_lengths");
  } else {
    g.token_lengths.assign(g.rewards.size(), 1);
  }
  advantage::validate_group(g);
  return g;
}

/// Assembles groups from flat scored records keyed by `key`, in first
/// appearance order. A record's token length is its "token_length" field,
/// else the whitespace token count of its prediction, else 1.
inline std::vector<advantage::RolloutGroup> groups_from_flat(const std::vector<Json>& records, const std::string& key) {
  std::vector<advantage::RolloutGroup> groups;
  std::unordered_map<std::string, std::size_t> where;
  for (const auto& rec : records) {
    if (!rec.contains(key)) throw Error(ErrorCode::parse_error, "missing grouping field '" + key + "'");
    const auto& kv = rec.at(key);
    std::string id = kv.is_string() ? kv.get<std::string>() : kv.dump();
    TaskKind task = parse_task_kind(field<std::string>(rec, "task"));
    double reward = field<double>(rec, "reward");
    std::int64_t len = 1;
    if (rec.contains("token_length")) {
      len = field<std::int64_t>(rec, "token_length");
    } else if (rec.contains("prediction") && rec.at("prediction").is_string()) {
      len = std::max<std::int64_t>(1, static_cast<std::int64_t>(
                                          text::split_whitespace(rec.at("prediction").get<std::string>()).size()));
    }
    auto [it, fresh] = where.emplace(id, groups.size());
    if (fresh) {
      advantage::RolloutGroup g;
      g.prompt_id = id;
      g.task = task;
      groups.push_back(std::move(g));
    }
    auto& g = groups[it->second];
    if (g.task != task) throw Error(ErrorCode::parse_error, "group '" + id + "' mixes task kinds");
    g.rewards.push_back(reward);
    g.token_lengths.push_back(len);
  }
  for (const auto& g : groups) advantage::validate_group(g);
  return groups;
}

/// Reads grouped rollout records (or an advantage report, whose trailer is
/// ignored); with a non-empty `group_by`, flat scored records instead.
inline std::vector<advantage::RolloutGroup> groups_from_records(const std::vector<LineRecord>& records,
                                                                const std::string& group_by, std::size_t* bad) {
  std::vector<advantage::RolloutGroup> groups;
  std::vector<Json> flat;
  for (const auto& lr : records) {
    if (is_trailer(lr.value)) continue;
    try {
      if (!group_by.empty() && !lr.value.contains("rewards")) {
        // Validate the flat record shape eagerly so skip-bad can drop it.
        field<double>(lr.value, "reward");
        parse_task_kind(field<std::string>(lr.value, "task"));
        if (!lr.value.contains(group_by)) throw Error(ErrorCode::parse_error, "missing grouping field '" + group_by + "'");
        flat.push_back(lr.value);
      } else {
        if (!lr.value.contains("rewards")) {
          throw Error(ErrorCode::parse_error, "record has no 'rewards' (flat records need --group-by)");
        }
        groups.push_back(group_from_record(lr.value));
      }
    } catch (const Error& e) {
      if (!bad) throw Error(e.code(), "line " + std::to_string(lr.line) + ": " + e.what());
      ++*bad;
    }
  }
  if (!flat.empty()) {
    auto assembled = groups_from_flat(flat, group_by);
    groups.insert(groups.end(), assembled.begin(), assembled.end());
  }
  return groups;
}

inline std::vector<Json> report_records(const advantage::TaskBatch& batch, const advantage::AdvantageReport& report,
                                        int precision) {
  std::vector<Json> out;
  for (std::size_t i = 0; i < report.groups.size(); ++i) {
    const auto& g = report.groups[i];
    const auto& src = batch.groups()[i];
    Json rec;
    rec["prompt_id"] = g.prompt_id;
    rec["task"] = std::string(task_code(g.task));
    rec["rewards"] = numbers(src.rewards, precision);
    rec["token_lengths"] = src.token_lengths;
    rec["mu_u"] = number(g.mu, precision);
    rec["sigma_u"] = number(g.sigma, precision);
    rec["smoothed_mu"] = number(g.smoothed_mu, precision);
    rec["pass_rate"] = number(g.pass_rate, precision);
    rec["weight"] = number(g.weight, precision);
    rec["raw_advantage"] = numbers(g.raw_advantage, precision);
    rec["final_advantage"] = numbers(g.final_advantage, precision);
    out.push_back(std::move(rec));
  }
  Json trailer;
  trailer["type"] = "batch_trailer";
  trailer["method"] = std::string(advantage::method_name(report.method));
  Json tasks = Json::array();
  for (const auto& [task, ts] : report.tasks) {
    Json t;
    t["task"] = std::string(task_code(task));
    t["sigma_task"] = number(ts.sigma_task, precision);
    t["mu_task"] = number(ts.mu_task, precision);
    t["num_groups"] = ts.num_groups;
    t["degenerate"] = ts.degenerate;
    tasks.push_back(std::move(t));
  }
  trailer["tasks"] = std::move(tasks);
  out.push_back(std::move(trailer));
  return out;
}

// ---------------------------------------------------------------------------
// Query records {"id", "text"} and decontamination outputs

inline pipeline::QueryRecord query_from_record(const Json& rec) {
  return pipeline::make_query(field<std::string>(rec, "id"), field<std::string>(rec, "text"));
}

inline Json discarded_record(const pipeline::Discarded& d) {
  Json rec;
  rec["id"] = d.record.id;
  rec["witness_span"] = Json::array({d.witness_start, d.witness_length});
  rec["eval_id"] = d.eval_id;
  return rec;
}

}  // namespace tmnrl::io
