#pragma once

// Task-aligned reward functions. Every scorer maps a raw model output and a
// reference to a reward in [0,1]. Malformed outputs score 0 with
// `parse_ok == false`; malformed references throw `invalid_reference`.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "tmnrl/error.hpp"
#include "tmnrl/task_kind.hpp"
#include "tmnrl/text.hpp"

namespace tmnrl::rewards {

struct ScoreResult {
  double reward = 0.0;
  bool parse_ok = true;
};

struct TableObject {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> data;

  bool operator==(const TableObject&) const = default;
};

struct Relevance {
  std::string id;
  double grade = 0.0;
};
using RelevanceList = std::vector<Relevance>;
using IdList = std::vector<std::string>;

/// Kind-shaped reference value: text (T1-T4, T6, T9), table (T5),
/// graded ids (T7) or an ordering (T8).
using Reference = std::variant<std::string, TableObject, RelevanceList, IdList>;

inline constexpr double kMathRelativeTolerance = 1e-4;

namespace detail {

inline void require_reference(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::invalid_reference, what);
}

inline ScoreResult unparsed() { return {0.0, false}; }

inline std::vector<std::string> normalized_ids(std::span<const std::string> ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    std::string n = text::normalize(id);
    if (!n.empty()) out.push_back(std::move(n));
  }
  return out;
}

inline std::string strip_option_punct(std::string_view tok) {
  constexpr std::string_view punct = "()[]{}.:,;*\"'";
  while (!tok.empty() && punct.find(tok.front()) != std::string_view::npos) tok.remove_prefix(1);
  while (!tok.empty() && punct.find(tok.back()) != std::string_view::npos) tok.remove_suffix(1);
  return std::string(tok);
}

inline std::string cell_string(const nlohmann::json& cell) {
  if (cell.is_string()) return cell.get<std::string>();
  if (cell.is_null()) return "";
  return cell.dump();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Set and sequence primitives

/// F1 over the distinct elements of both sides; 0 when either side is empty.
inline double set_f1(std::span<const std::string> prediction, std::span<const std::string> reference) {
  std::unordered_set<std::string> pred(prediction.begin(), prediction.end());
  std::unordered_set<std::string> ref(reference.begin(), reference.end());
  if (pred.empty() || ref.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& tok : pred) common += ref.count(tok);
  if (common == 0) return 0.0;
  // 2PR/(P+R) with P = c/|pred|, R = c/|ref|.
  return 2.0 * static_cast<double>(common) / static_cast<double>(pred.size() + ref.size());
}

inline std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// |A n B| / |A u B|; two empty sets are identical and score 1.
inline double set_iou(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

// ---------------------------------------------------------------------------
// Tables

/// Attribute set of a table: normalized column names plus one entry per row.
/// A row is encoded as its (column, cell) pairs sorted by column, so neither
/// row order nor column order affects the set.
inline std::set<std::string> table_attributes(const TableObject& table) {
  std::set<std::string> attrs;
  std::vector<std::string> cols;
  cols.reserve(table.columns.size());
  for (const auto& c : table.columns) {
    cols.push_back(text::normalize(c));
    attrs.insert("col\x1f" + cols.back());
  }
  for (const auto& row : table.data) {
    std::vector<std::pair<std::string, std::string>> cells;
    for (std::size_t k = 0; k < row.size() && k < cols.size(); ++k) {
      cells.emplace_back(cols[k], text::normalize(row[k]));
    }
    std::sort(cells.begin(), cells.end());
    std::string key = "row";
    for (const auto& [col, val] : cells) {
      key += '\x1f';
      key += col;
      key += '\x1e';
      key += val;
    }
    attrs.insert(std::move(key));
  }
  return attrs;
}

inline std::optional<TableObject> table_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("columns") || !j.contains("data")) return std::nullopt;
  const auto& cols = j.at("columns");
  const auto& data = j.at("data");
  if (!cols.is_array() || !data.is_array()) return std::nullopt;
  TableObject table;
  for (const auto& c : cols) {
    if (c.is_array() || c.is_object()) return std::nullopt;
    table.columns.push_back(detail::cell_string(c));
  }
  for (const auto& row : data) {
    if (!row.is_array() || row.size() != table.columns.size()) return std::nullopt;
    std::vector<std::string> cells;
    for (const auto& cell : row) {
      if (cell.is_array() || cell.is_object()) return std::nullopt;
      cells.push_back(detail::cell_string(cell));
    }
    table.data.push_back(std::move(cells));
  }
  return table;
}

inline nlohmann::json table_to_json(const TableObject& table) {
  return nlohmann::json{{"columns", table.columns}, {"data", table.data}};
}

/// Deserializes the JSON object inside a model output's answer region.
inline std::optional<TableObject> parse_table(std::string_view output) {
  std::string_view region = text::answer_region(output);
  std::size_t open = region.find('{');
  std::size_t close = region.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) return std::nullopt;
  auto j = nlohmann::json::parse(region.substr(open, close - open + 1), nullptr, false);
  if (j.is_discarded()) return std::nullopt;
  return table_from_json(j);
}

// ---------------------------------------------------------------------------
// Numbers

/// Every number in the text, in order. Thousands separators are accepted and
/// a trailing '%' (optionally after one space) divides the value by 100.
inline std::vector<double> parse_numbers(std::string_view s) {
  std::vector<double> values;
  auto digit = [&](std::size_t k) { return k < s.size() && s[k] >= '0' && s[k] <= '9'; };
  auto alnum = [&](std::size_t k) {
    return std::isalnum(static_cast<unsigned char>(s[k])) != 0 || s[k] == '_';
  };
  std::size_t i = 0;
  while (i < s.size()) {
    bool starts = digit(i) || (s[i] == '.' && digit(i + 1));
    bool signed_start = false;
    if ((s[i] == '-' || s[i] == '+') && (digit(i + 1) || (s.size() > i + 2 && s[i + 1] == '.' && digit(i + 2)))) {
      // A sign counts only when it does not follow a value ("2019-2020" is two numbers).
      signed_start = i == 0 || !(alnum(i - 1) || s[i - 1] == '.');
    }
    if (!starts && !signed_start) {
      ++i;
      continue;
    }
    if (starts && i > 0 && (std::isalpha(static_cast<unsigned char>(s[i - 1])) != 0 || s[i - 1] == '_')) {
      // Digits glued to a word ("T4", "v2") are identifiers, not values.
      while (i < s.size() && (alnum(i) || s[i] == '.')) ++i;
      continue;
    }
    std::string buf;
    if (signed_start) {
      if (s[i] == '-') buf.push_back('-');
      ++i;
    }
    while (digit(i)) {
      buf.push_back(s[i++]);
      while (i < s.size() && s[i] == ',' && digit(i + 1) && digit(i + 2) && digit(i + 3) && !digit(i + 4)) {
        buf.append(s.substr(i + 1, 3));
        i += 4;
      }
    }
    if (i < s.size() && s[i] == '.' && digit(i + 1)) {
      buf.push_back(s[i++]);
      while (digit(i)) buf.push_back(s[i++]);
    }
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc() || ptr != buf.data() + buf.size()) continue;
    if (i < s.size() && s[i] == '%') {
      value /= 100.0;
      ++i;
    } else if (i + 1 < s.size() && s[i] == ' ' && s[i + 1] == '%') {
      value /= 100.0;
      i += 2;
    }
    values.push_back(value);
  }
  return values;
}

inline bool numbers_match(double predicted, double reference) {
  return std::fabs(predicted - reference) <= kMathRelativeTolerance * std::fabs(reference) + 1e-12;
}

// ---------------------------------------------------------------------------
// Scorers

inline ScoreResult score_exact_match(std::string_view prediction, std::string_view reference) {
  std::string ref = text::normalize(text::answer_region(reference));
  detail::require_reference(!ref.empty(), "exact-match reference is empty after normalization");
  std::string pred = text::normalize(text::answer_region(prediction));
  if (pred.empty()) return detail::unparsed();
  return {pred == ref ? 1.0 : 0.0, true};
}

/// The answer letter (upper-cased), or nullopt when none can be found.
inline std::optional<char> extract_option_letter(std::string_view prediction) {
  bool marked = text::has_answer_marker(prediction);
  std::string_view region = text::answer_region(prediction);
  for (const auto& raw : text::split_whitespace(region)) {
    std::string tok = detail::strip_option_punct(raw);
    if (tok.size() != 1) continue;
    char c = tok[0];
    if (c >= 'A' && c <= 'E') return c;
    if (marked && c >= 'a' && c <= 'e') return static_cast<char>(c - 'a' + 'A');
  }
  return std::nullopt;
}

inline ScoreResult score_mc_accuracy(std::string_view prediction, std::string_view reference) {
  std::string ref = detail::strip_option_punct(text::trim(text::answer_region(reference)));
  detail::require_reference(ref.size() == 1, "option reference must be a single letter");
  char want = static_cast<char>(std::toupper(static_cast<unsigned char>(ref[0])));
  detail::require_reference(want >= 'A' && want <= 'E', "option reference must be one of A-E");
  auto got = extract_option_letter(prediction);
  if (!got) return detail::unparsed();
  return {*got == want ? 1.0 : 0.0, true};
}

/// Token-level F1 over the answer regions of both sides.
inline ScoreResult score_token_f1(std::string_view prediction, std::string_view reference) {
  auto pred = text::tokens(text::answer_region(prediction));
  auto ref = text::tokens(text::answer_region(reference));
  return {set_f1(pred, ref), !pred.empty()};
}

inline ScoreResult score_math_verify(std::string_view prediction, std::string_view reference) {
  auto ref = parse_numbers(text::answer_region(reference));
  detail::require_reference(!ref.empty(), "math reference contains no numeric value");
  auto pred = parse_numbers(text::answer_region(prediction));
  if (pred.empty()) return detail::unparsed();
  bool all = std::all_of(ref.begin(), ref.end(), [&](double want) {
    return std::any_of(pred.begin(), pred.end(), [&](double got) { return numbers_match(got, want); });
  });
  return {all ? 1.0 : 0.0, true};
}

inline ScoreResult score_iou_structured(std::string_view prediction, const TableObject& reference) {
  for (const auto& row : reference.data) {
    detail::require_reference(row.size() == reference.columns.size(), "table row length differs from column count");
  }
  auto table = parse_table(prediction);
  if (!table) return detail::unparsed();
  return {set_iou(table_attributes(*table), table_attributes(reference)), true};
}

/// Every reference line must appear inside the normalized answer region.
inline ScoreResult score_subem(std::string_view prediction, std::string_view reference) {
  auto items = text::lines(text::answer_region(reference));
  detail::require_reference(!items.empty(), "substring reference is empty after normalization");
  std::string pred = text::normalize(text::answer_region(prediction));
  if (pred.empty()) return detail::unparsed();
  bool all = std::all_of(items.begin(), items.end(),
                         [&](const std::string& item) { return pred.find(item) != std::string::npos; });
  return {all ? 1.0 : 0.0, true};
}

/// NDCG@k with k = number of reference ids, linear gain, log2(i+1) discount.
/// Repeated predicted ids earn gain only at their first position.
inline double score_ndcg(std::span<const std::string> ranked, const RelevanceList& reference) {
  detail::require_reference(!reference.empty(), "ranking reference is empty");
  std::unordered_map<std::string, double> grade;
  std::vector<double> ideal;
  for (const auto& r : reference) {
    detail::require_reference(std::isfinite(r.grade) && r.grade >= 0.0, "relevance grades must be non-negative");
    std::string id = text::normalize(r.id);
    detail::require_reference(!id.empty() && grade.emplace(id, r.grade).second, "ranking reference ids must be distinct");
    ideal.push_back(r.grade);
  }
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const std::size_t k = reference.size();
  double idcg = 0.0;
  for (std::size_t i = 0; i < k; ++i) idcg += ideal[i] / std::log2(static_cast<double>(i) + 2.0);
  detail::require_reference(idcg > 0.0, "ranking reference has no positive relevance");

  auto ids = detail::normalized_ids(ranked);
  std::unordered_set<std::string> seen;
  double dcg = 0.0;
  for (std::size_t i = 0; i < ids.size() && i < k; ++i) {
    auto it = grade.find(ids[i]);
    if (it == grade.end() || !seen.insert(ids[i]).second) continue;
    dcg += it->second / std::log2(static_cast<double>(i) + 2.0);
  }
  return dcg / idcg;
}

/// Fraction of reference pairs whose order the prediction reproduces. A pair
/// with a member missing from the prediction counts as discordant.
inline double score_pairwise(std::span<const std::string> prediction, std::span<const std::string> reference) {
  auto ref = detail::normalized_ids(reference);
  detail::require_reference(ref.size() >= 2, "pairwise reference needs at least two ids");
  std::unordered_map<std::string, std::size_t> ref_pos;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    detail::require_reference(ref_pos.emplace(ref[i], i).second, "pairwise reference ids must be distinct");
  }
  auto pred = detail::normalized_ids(prediction);
  std::unordered_map<std::string, std::size_t> pred_pos;
  for (std::size_t i = 0; i < pred.size(); ++i) pred_pos.emplace(pred[i], i);

  std::size_t concordant = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    auto pi = pred_pos.find(ref[i]);
    if (pi == pred_pos.end()) continue;
    for (std::size_t j = i + 1; j < ref.size(); ++j) {
      auto pj = pred_pos.find(ref[j]);
      if (pj != pred_pos.end() && pi->second < pj->second) ++concordant;
    }
  }
  const double pairs = static_cast<double>(ref.size()) * static_cast<double>(ref.size() - 1) / 2.0;
  return static_cast<double>(concordant) / pairs;
}

/// Sentence-level ROUGE-L F-measure with beta = 1.
inline ScoreResult score_rouge_l(std::string_view prediction, std::string_view reference) {
  auto ref = text::tokens(text::answer_region(reference));
  detail::require_reference(!ref.empty(), "summary reference is empty");
  auto pred = text::tokens(text::answer_region(prediction));
  if (pred.empty()) return detail::unparsed();
  std::size_t lcs = lcs_length(pred, ref);
  if (lcs == 0) return {0.0, true};
  // 2PR/(P+R) with P = lcs/|pred|, R = lcs/|ref|.
  return {2.0 * static_cast<double>(lcs) / static_cast<double>(pred.size() + ref.size()), true};
}

// ---------------------------------------------------------------------------
// Kind dispatch

/// Answer lines of a ranked or ordered output, one id per line.
inline IdList answer_items(std::string_view output) {
  IdList items;
  std::string_view region = text::answer_region(output);
  std::size_t start = 0;
  while (start <= region.size()) {
    std::size_t end = region.find('\n', start);
    if (end == std::string_view::npos) end = region.size();
    std::string_view line = text::trim(region.substr(start, end - start));
    if (!line.empty()) items.emplace_back(line);
    start = end + 1;
  }
  return items;
}

namespace detail {

template <class T>
const T& expect(const Reference& ref, TaskKind kind) {
  if (const T* v = std::get_if<T>(&ref)) return *v;
  throw Error(ErrorCode::invalid_reference,
              "reference shape does not match task " + std::string(task_code(kind)));
}

/// T3 compares line items when either side lists several, tokens otherwise.
inline ScoreResult score_f1_items(std::string_view prediction, std::string_view reference) {
  auto pred_lines = text::lines(text::answer_region(prediction));
  auto ref_lines = text::lines(text::answer_region(reference));
  if (pred_lines.size() >= 2 || ref_lines.size() >= 2) {
    return {set_f1(pred_lines, ref_lines), !pred_lines.empty()};
  }
  return score_token_f1(prediction, reference);
}

}  // namespace detail

inline ScoreResult score(TaskKind kind, std::string_view prediction, const Reference& reference) {
  switch (kind) {
    case TaskKind::T1_EM:
      return score_exact_match(prediction, detail::expect<std::string>(reference, kind));
    case TaskKind::T2_Accuracy:
      return score_mc_accuracy(prediction, detail::expect<std::string>(reference, kind));
    case TaskKind::T3_F1:
      return detail::score_f1_items(prediction, detail::expect<std::string>(reference, kind));
    case TaskKind::T4_MathVerify:
      return score_math_verify(prediction, detail::expect<std::string>(reference, kind));
    case TaskKind::T5_IoU:
      return score_iou_structured(prediction, detail::expect<TableObject>(reference, kind));
    case TaskKind::T6_SubEM:
      return score_subem(prediction, detail::expect<std::string>(reference, kind));
    case TaskKind::T7_NDCG: {
      const auto& rel = detail::expect<RelevanceList>(reference, kind);
      auto ids = answer_items(prediction);
      if (ids.empty()) return detail::unparsed();
      return {score_ndcg(ids, rel), true};
    }
    case TaskKind::T8_Pairwise: {
      const auto& order = detail::expect<IdList>(reference, kind);
      auto ids = answer_items(prediction);
      if (ids.empty()) {
        score_pairwise(ids, order);  // still validates the reference
        return detail::unparsed();
      }
      return {score_pairwise(ids, order), true};
    }
    case TaskKind::T9_Summary:
      return score_rouge_l(prediction, detail::expect<std::string>(reference, kind));
  }
  throw Error(ErrorCode::invalid_argument, "unknown task kind");
}

/// Builds a kind-shaped reference from its JSON-record form.
///  - text kinds: a string, or an array of strings (one item per line; numbers allowed)
///  - T5: a table object, or a string holding one
///  - T7: an {id: grade} object, or a ranked array / line list (grades n..1)
///  - T8: an ordered array of ids, or a line list
inline Reference reference_from_json(TaskKind kind, const nlohmann::json& j) {
  auto as_line_list = [&]() {
    IdList items;
    if (j.is_array()) {
      for (const auto& e : j) {
        detail::require_reference(e.is_string() || e.is_number(), "reference list entries must be scalars");
        items.push_back(detail::cell_string(e));
      }
    } else if (j.is_string()) {
      items = answer_items(j.get<std::string>());
    } else {
      throw Error(ErrorCode::invalid_reference, "expected a list reference");
    }
    return items;
  };
  switch (kind) {
    case TaskKind::T5_IoU: {
      std::optional<TableObject> table;
      if (j.is_string()) {
        table = parse_table(j.get<std::string>());
      } else {
        table = table_from_json(j);
      }
      detail::require_reference(table.has_value(), "malformed table reference");
      return *table;
    }
    case TaskKind::T7_NDCG: {
      RelevanceList rel;
      if (j.is_object()) {
        for (const auto& [id, grade] : j.items()) {
          detail::require_reference(grade.is_number(), "relevance grades must be numbers");
          rel.push_back({id, grade.get<double>()});
        }
      } else {
        auto items = as_line_list();
        for (std::size_t i = 0; i < items.size(); ++i) {
          rel.push_back({items[i], static_cast<double>(items.size() - i)});
        }
      }
      return rel;
    }
    case TaskKind::T8_Pairwise:
      return as_line_list();
    default: {
      if (j.is_string()) return j.get<std::string>();
      if (j.is_number()) return j.dump();
      std::string joined;
      for (const auto& item : as_line_list()) {
        if (!joined.empty()) joined += '\n';
        joined += item;
      }
      return joined;
    }
  }
}

/// Renders a reference as a well-formed model answer for its kind.
inline std::string render_answer(TaskKind kind, const Reference& reference) {
  auto join = [](const IdList& items) {
    std::string out;
    for (const auto& s : items) out += "\n" + s;
    return out;
  };
  switch (kind) {
    case TaskKind::T5_IoU:
      return "<answer>" + table_to_json(detail::expect<TableObject>(reference, kind)).dump() + "</answer>";
    case TaskKind::T7_NDCG: {
      auto rel = detail::expect<RelevanceList>(reference, kind);
      std::stable_sort(rel.begin(), rel.end(), [](const Relevance& a, const Relevance& b) { return a.grade > b.grade; });
      IdList ids;
      for (const auto& r : rel) ids.push_back(r.id);
      return std::string(text::kAnswerMarker) + join(ids);
    }
    case TaskKind::T8_Pairwise:
      return std::string(text::kAnswerMarker) + join(detail::expect<IdList>(reference, kind));
    default:
      return std::string(text::kAnswerMarker) + "\n" + detail::expect<std::string>(reference, kind);
  }
}

}  // namespace tmnrl::rewards
