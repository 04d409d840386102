#pragma once

#include <stdexcept>
#include <string>

namespace planrl {

enum class ErrorCode {
  dimension_mismatch,
  non_finite,
  invalid_argument,
  plan_failed,
  demo_budget_exhausted,
  capacity_exceeded,
  single_class_dataset,
  config,
  io,
  format,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::plan_failed: return "plan_failed";
    case ErrorCode::demo_budget_exhausted: return "demo_budget_exhausted";
    case ErrorCode::capacity_exceeded: return "capacity_exceeded";
    case ErrorCode::single_class_dataset: return "single_class_dataset";
    case ErrorCode::config: return "config";
    case ErrorCode::io: return "io";
    case ErrorCode::format: return "format";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace planrl
