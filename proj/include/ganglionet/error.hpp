#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ganglionet {

/// Failure categories. The CLI maps each one to a distinct exit code.
enum class ErrorCode {
  InvalidArgument,
  ShapeMismatch,
  Io,
  MissingInput,
  Config,
  Checkpoint,
  ArchMismatch,
  Calibration,
  Numeric,
  Placement,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::Io: return "io";
    case ErrorCode::MissingInput: return "missing_input";
    case ErrorCode::Config: return "config";
    case ErrorCode::Checkpoint: return "checkpoint";
    case ErrorCode::ArchMismatch: return "arch_mismatch";
    case ErrorCode::Calibration: return "calibration";
    case ErrorCode::Numeric: return "numeric";
    case ErrorCode::Placement: return "placement";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace ganglionet
