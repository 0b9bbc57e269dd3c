// Copyright 2026 The lorashield Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lorashield {

enum class ErrorCode {
  kMalformedHeader,
  kOverlappingOffsets,
  kUnsupportedDtype,
  kNameCollision,
  kShapeMismatch,
  kNonFiniteInput,
  kNonFiniteLoss,
  kNoLayersMatched,
  kMissingBaseWeight,
  kMissingNeutral,
  kUnevenPairs,
  kShapeDisagreement,
  kIndexOutOfRange,
  kRankTooLarge,
  kNoConvergence,
  kInvalidConfig,
  kServiceUnavailable,
  kProtocolError,
  kIo,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedHeader: return "MalformedHeader";
    case ErrorCode::kOverlappingOffsets: return "OverlappingOffsets";
    case ErrorCode::kUnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::kNameCollision: return "NameCollision";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFiniteInput: return "NonFiniteInput";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kNoLayersMatched: return "NoLayersMatched";
    case ErrorCode::kMissingBaseWeight: return "MissingBaseWeight";
    case ErrorCode::kMissingNeutral: return "MissingNeutral";
    case ErrorCode::kUnevenPairs: return "UnevenPairs";
    case ErrorCode::kShapeDisagreement: return "ShapeDisagreement";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kRankTooLarge: return "RankTooLarge";
    case ErrorCode::kNoConvergence: return "NoConvergence";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kServiceUnavailable: return "ServiceUnavailable";
    case ErrorCode::kProtocolError: return "ProtocolError";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

/// Single exception type for the library. `what()` is prefixed with the
/// error class name so it surfaces verbatim on stderr.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace lorashield
