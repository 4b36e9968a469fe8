#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace durl {

enum class ErrorCode {
  kInvalidArgument,
  kNonPositiveDepth,
  kShapeMismatch,
  kCenterOutsideCell,
  kInsufficientCorrespondences,
  kNoConsensus,
  kSolverDivergence,
  kNoDetection,
  kSamplingExhausted,
  kEmptyInput,
  kFrameMismatch,
  kFormat,
  kIo,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kNonPositiveDepth: return "non_positive_depth";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kCenterOutsideCell: return "center_outside_cell";
    case ErrorCode::kInsufficientCorrespondences: return "insufficient";
    case ErrorCode::kNoConsensus: return "no_consensus";
    case ErrorCode::kSolverDivergence: return "solver_divergence";
    case ErrorCode::kNoDetection: return "no_detection";
    case ErrorCode::kSamplingExhausted: return "sampling_exhausted";
    case ErrorCode::kEmptyInput: return "empty_input";
    case ErrorCode::kFrameMismatch: return "frame_mismatch";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

/// Exception carrying a typed error code. Every failure the library reports
/// goes through this type so callers can branch on `code()`.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace durl
