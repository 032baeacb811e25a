#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "tmnrl/error.hpp"

namespace tmnrl {

/// The nine reward kinds. Each kind fixes both the metric and the shape of
/// its reference value.
enum class TaskKind : std::uint8_t {
  T1_EM = 1,
  T2_Accuracy,
  T3_F1,
  T4_MathVerify,
  T5_IoU,
  T6_SubEM,
  T7_NDCG,
  T8_Pairwise,
  T9_Summary,
};

inline constexpr std::array<TaskKind, 9> kAllTaskKinds = {
    TaskKind::T1_EM,     TaskKind::T2_Accuracy, TaskKind::T3_F1,
    TaskKind::T4_MathVerify, TaskKind::T5_IoU,  TaskKind::T6_SubEM,
    TaskKind::T7_NDCG,   TaskKind::T8_Pairwise, TaskKind::T9_Summary,
};

constexpr std::string_view task_code(TaskKind kind) {
  switch (kind) {
    case TaskKind::T1_EM: return "T1";
    case TaskKind::T2_Accuracy: return "T2";
    case TaskKind::T3_F1: return "T3";
    case TaskKind::T4_MathVerify: return "T4";
    case TaskKind::T5_IoU: return "T5";
    case TaskKind::T6_SubEM: return "T6";
    case TaskKind::T7_NDCG: return "T7";
    case TaskKind::T8_Pairwise: return "T8";
    case TaskKind::T9_Summary: return "T9";
  }
  return "??";
}

constexpr std::string_view metric_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::T1_EM: return "exact_match";
    case TaskKind::T2_Accuracy: return "mc_accuracy";
    case TaskKind::T3_F1: return "token_f1";
    case TaskKind::T4_MathVerify: return "math_verify";
    case TaskKind::T5_IoU: return "iou_structured";
    case TaskKind::T6_SubEM: return "subem";
    case TaskKind::T7_NDCG: return "ndcg";
    case TaskKind::T8_Pairwise: return "pairwise";
    case TaskKind::T9_Summary: return "rouge_l";
  }
  return "unknown";
}

/// Kinds whose reward is always 0 or 1.
constexpr bool is_binary(TaskKind kind) {
  return kind == TaskKind::T1_EM || kind == TaskKind::T2_Accuracy ||
         kind == TaskKind::T4_MathVerify || kind == TaskKind::T6_SubEM;
}

inline std::optional<TaskKind> try_parse_task_kind(std::string_view text) {
  for (TaskKind kind : kAllTaskKinds) {
    if (text == task_code(kind)) return kind;
  }
  return std::nullopt;
}

inline TaskKind parse_task_kind(std::string_view text) {
  if (auto kind = try_parse_task_kind(text)) return *kind;
  throw Error(ErrorCode::parse_error, "unknown task kind '" + std::string(text) + "'");
}

}  // namespace tmnrl
