#pragma once

// Dataset hygiene: n-gram decontamination, pass-rate difficulty staging,
// log2 length bins and the task sampling distribution.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tmnrl/error.hpp"
#include "tmnrl/text.hpp"

namespace tmnrl::pipeline {

inline constexpr std::size_t kDefaultNgram = 13;

struct QueryRecord {
  std::string id;
  std::vector<std::string> tokens;  ///< case-folded whitespace tokens
};

inline QueryRecord make_query(std::string id, std::string_view raw) {
  QueryRecord q{std::move(id), text::split_whitespace(raw)};
  for (auto& tok : q.tokens) {
    for (char& c : tok) c = text::fold(c);
  }
  if (q.tokens.empty()) throw Error(ErrorCode::invalid_argument, "query '" + q.id + "' has no tokens");
  return q;
}

struct Discarded {
  QueryRecord record;
  std::size_t witness_start = 0;  ///< first token of the shared window in the train record
  std::size_t witness_length = 0;
  std::string eval_id;            ///< evaluation record that contains the window
};

struct FilterResult {
  std::vector<QueryRecord> retained;
  std::vector<Discarded> discarded;
};

/// Hashed index of every n-token window of the evaluation set. A hash hit is
/// confirmed token by token before it counts.
class NgramIndex {
 public:
  NgramIndex(const std::vector<QueryRecord>& eval, std::size_t n) : eval_(&eval), n_(n) {
    if (n == 0) throw Error(ErrorCode::invalid_argument, "n-gram size must be at least 1");
    for (std::size_t r = 0; r < eval.size(); ++r) {
      const auto& toks = eval[r].tokens;
      for (std::size_t s = 0; s + n <= toks.size(); ++s) {
        index_[window_hash(toks, s)].push_back({r, s});
      }
    }
  }

  /// Eval record index holding the window that starts at `start`, if any.
  std::optional<std::size_t> find(const std::vector<std::string>& toks, std::size_t start) const {
    auto it = index_.find(window_hash(toks, start));
    if (it == index_.end()) return std::nullopt;
    for (const auto& [rec, pos] : it->second) {
      const auto& other = (*eval_)[rec].tokens;
      bool same = true;
      for (std::size_t k = 0; k < n_ && same; ++k) same = toks[start + k] == other[pos + k];
      if (same) return rec;
    }
    return std::nullopt;
  }

  std::size_t n() const { return n_; }

 private:
  struct Location {
    std::size_t record;
    std::size_t start;
  };

  std::uint64_t window_hash(const std::vector<std::string>& toks, std::size_t start) const {
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t k = 0; k < n_; ++k) {
      h ^= std::hash<std::string>{}(toks[start + k]) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    }
    return h;
  }

  const std::vector<QueryRecord>* eval_;
  std::size_t n_;
  std::unordered_map<std::uint64_t, std::vector<Location>> index_;
};

/// Splits `train` into records that share no n-token window with `eval` and
/// records that do; discards carry the first shared window as witness.
inline FilterResult ngram_overlap_filter(const std::vector<QueryRecord>& train, const std::vector<QueryRecord>& eval,
                                         std::size_t n = kDefaultNgram) {
  NgramIndex index(eval, n);
  FilterResult out;
  for (const auto& rec : train) {
    std::optional<Discarded> hit;
    for (std::size_t s = 0; s + n <= rec.tokens.size() && !hit; ++s) {
      if (auto e = index.find(rec.tokens, s)) hit = Discarded{rec, s, n, eval[*e].id};
    }
    if (hit) {
      out.discarded.push_back(std::move(*hit));
    } else {
      out.retained.push_back(rec);
    }
  }
  return out;
}

enum class DifficultyLabel { easy, medium, hard, unsolved, quality_insufficient };

constexpr std::string_view label_name(DifficultyLabel l) {
  switch (l) {
    case DifficultyLabel::easy: return "easy";
    case DifficultyLabel::medium: return "medium";
    case DifficultyLabel::hard: return "hard";
    case DifficultyLabel::unsolved: return "unsolved";
    case DifficultyLabel::quality_insufficient: return "quality_insufficient";
  }
  return "unknown";
}

/// Stage 1: easy (> 0.75), medium [0.5, 0.75], unsolved (< 0.5).
/// Stage 2: medium (> 0.75), hard [0.25, 0.75], quality_insufficient (< 0.25).
/// Boundary values belong to the middle class.
inline DifficultyLabel classify_difficulty(double pass_rate, int stage) {
  if (!(pass_rate >= 0.0 && pass_rate <= 1.0)) throw Error(ErrorCode::domain_error, "pass rate must lie in [0,1]");
  if (stage == 1) {
    if (pass_rate > 0.75) return DifficultyLabel::easy;
    if (pass_rate >= 0.5) return DifficultyLabel::medium;
    return DifficultyLabel::unsolved;
  }
  if (stage == 2) {
    if (pass_rate > 0.75) return DifficultyLabel::medium;
    if (pass_rate >= 0.25) return DifficultyLabel::hard;
    return DifficultyLabel::quality_insufficient;
  }
  throw Error(ErrorCode::domain_error, "stage must be 1 or 2");
}

struct LengthBin {
  std::uint64_t low = 1;   ///< inclusive, a power of two
  std::uint64_t high = 2;  ///< exclusive

  std::string label() const { return "[" + std::to_string(low) + ", " + std::to_string(high) + ")"; }
  bool operator==(const LengthBin&) const = default;
};

inline LengthBin length_bin(std::uint64_t token_count) {
  if (token_count == 0) throw Error(ErrorCode::domain_error, "token count must be positive");
  std::uint64_t low = 1;
  while (low <= token_count / 2) low <<= 1;
  return {low, low << 1};
}

/// count / total for every key.
template <class Key>
std::map<Key, double> task_sampling_distribution(const std::map<Key, std::uint64_t>& counts) {
  std::uint64_t total = 0;
  for (const auto& [k, c] : counts) total += c;
  if (total == 0) throw Error(ErrorCode::domain_error, "sampling distribution needs a positive total");
  std::map<Key, double> out;
  for (const auto& [k, c] : counts) out[k] = static_cast<double>(c) / static_cast<double>(total);
  return out;
}

}  // namespace tmnrl::pipeline
