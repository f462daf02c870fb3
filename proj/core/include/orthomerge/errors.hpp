// Copyright (c) 2026 The OrthoMerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace orthomerge {

// Stable error identifiers. The names below appear verbatim in exception
// messages, CLI diagnostics, and exit-code mapping.
enum class ErrorCode {
  kMalformedHeader,
  kOffsetOutOfRange,
  kUnsupportedDtype,
  kShapeMismatch,
  kBadBlockLayout,
  kEmptyInput,
  kSingularSolve,
  kCayleyDomain,
  kDegenerateDirections,
  kDuplicateColumns,
  kInvalidArgument,
  kRecipeInvalid,
  kIoError,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedHeader: return "MALFORMED_HEADER";
    case ErrorCode::kOffsetOutOfRange: return "OFFSET_OUT_OF_RANGE";
    case ErrorCode::kUnsupportedDtype: return "UNSUPPORTED_DTYPE";
    case ErrorCode::kShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::kBadBlockLayout: return "BAD_BLOCK_LAYOUT";
    case ErrorCode::kEmptyInput: return "EMPTY_INPUT";
    case ErrorCode::kSingularSolve: return "SINGULAR_SOLVE";
    case ErrorCode::kCayleyDomain: return "CAYLEY_DOMAIN";
    case ErrorCode::kDegenerateDirections: return "DEGENERATE_DIRECTIONS";
    case ErrorCode::kDuplicateColumns: return "DUPLICATE_COLUMNS";
    case ErrorCode::kInvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::kRecipeInvalid: return "RECIPE_INVALID";
    case ErrorCode::kIoError: return "IO_ERROR";
  }
  return "UNKNOWN";
}

}  // namespace orthomerge
