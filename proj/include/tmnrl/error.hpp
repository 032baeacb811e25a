#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tmnrl {

enum class ErrorCode {
  invalid_reference,
  invalid_argument,
  group_too_small,
  empty_task,
  invalid_ratio,
  insufficient_tasks,
  mixed_group_size,
  degenerate_batch,
  numerical_failure,
  domain_error,
  parse_error,
  io_error,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_reference: return "invalid-reference";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::group_too_small: return "group-too-small";
    case ErrorCode::empty_task: return "empty-task";
    case ErrorCode::invalid_ratio: return "invalid-ratio";
    case ErrorCode::insufficient_tasks: return "insufficient-tasks";
    case ErrorCode::mixed_group_size: return "mixed-group-size";
    case ErrorCode::degenerate_batch: return "degenerate-batch";
    case ErrorCode::numerical_failure: return "numerical-failure";
    case ErrorCode::domain_error: return "domain-error";
    case ErrorCode::parse_error: return "parse-error";
    case ErrorCode::io_error: return "io-error";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tmnrl
