#pragma once

// Text normalization and answer-region extraction shared by the reward parsers.
//
// Normalization: ASCII case-fold, collapse whitespace runs to one space, trim,
// then drop trailing sentence punctuation (. ! ?). All other punctuation is
// kept, so "Paris, France" never normalizes to "Paris".

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace tmnrl::text {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline char fold(char c) {
  return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

inline bool is_sentence_end(char c) { return c == '.' || c == '!' || c == '?'; }

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::string normalize(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(fold(c));
  }
  while (!out.empty() && (is_sentence_end(out.back()) || out.back() == ' ')) out.pop_back();
  return out;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t start = i;
    while (i < s.size() && !is_space(s[i])) ++i;
    if (i > start) tokens.emplace_back(s.substr(start, i - start));
  }
  return tokens;
}

/// Whitespace tokens of the normalized text.
inline std::vector<std::string> tokens(std::string_view s) { return split_whitespace(normalize(s)); }

/// Non-empty normalized lines.
inline std::vector<std::string> lines(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t end = s.find('\n', start);
    if (end == std::string_view::npos) end = s.size();
    std::string line = normalize(s.substr(start, end - start));
    if (!line.empty()) out.push_back(std::move(line));
    start = end + 1;
  }
  return out;
}

inline bool matches_folded(std::string_view hay, std::size_t pos, std::string_view needle) {
  if (pos + needle.size() > hay.size()) return false;
  for (std::size_t k = 0; k < needle.size(); ++k) {
    if (fold(hay[pos + k]) != fold(needle[k])) return false;
  }
  return true;
}

/// Case-insensitive search for the first occurrence of `needle` at or after `from`.
inline std::size_t find_folded(std::string_view hay, std::string_view needle, std::size_t from = 0) {
  for (std::size_t pos = from; pos + needle.size() <= hay.size(); ++pos) {
    if (matches_folded(hay, pos, needle)) return pos;
  }
  return std::string_view::npos;
}

/// Case-insensitive search for the last occurrence of `needle`.
inline std::size_t rfind_folded(std::string_view hay, std::string_view needle) {
  if (needle.size() > hay.size()) return std::string_view::npos;
  for (std::size_t pos = hay.size() - needle.size() + 1; pos-- > 0;) {
    if (matches_folded(hay, pos, needle)) return pos;
  }
  return std::string_view::npos;
}

inline constexpr std::string_view kAnswerMarker = "[Answer]";

/// True when the text carries an explicit answer delimiter.
inline bool has_answer_marker(std::string_view s) {
  return rfind_folded(s, kAnswerMarker) != std::string_view::npos ||
         rfind_folded(s, "<answer>") != std::string_view::npos;
}

/// The scored part of a model output. An `<answer>...</answer>` span wins,
/// then the text after the last "[Answer]" marker, then the whole output.
inline std::string_view answer_region(std::string_view s) {
  std::size_t open = rfind_folded(s, "<answer>");
  if (open != std::string_view::npos) {
    std::string_view rest = s.substr(open + 8);
    std::size_t close = find_folded(rest, "</answer>");
    return close == std::string_view::npos ? rest : rest.substr(0, close);
  }
  std::size_t marker = rfind_folded(s, kAnswerMarker);
  if (marker != std::string_view::npos) return s.substr(marker + kAnswerMarker.size());
  return s;
}

}  // namespace tmnrl::text
