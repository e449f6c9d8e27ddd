// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nvsp {

enum class ErrorCode {
  MissingFile,
  SchemaViolation,
  DimensionMismatch,
  UnsupportedPlyVariant,
  MalformedHeader,
  IoFailure,
  EmptyMask,
  NoVisiblePose,
  EmptyInput,
  DegenerateUp,
  CoincidentTarget,
  BehindCamera,
  NoVisiblePixels,
  DegenerateCrop,
  DegenerateSum,
  UnnormalizedInput,
  EmptyGroundTruth,
  MissingStageArtifact,
  ProviderFailure,
};

inline constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
  case ErrorCode::MissingFile: return "MissingFile";
  case ErrorCode::SchemaViolation: return "SchemaViolation";
  case ErrorCode::DimensionMismatch: return "DimensionMismatch";
  case ErrorCode::UnsupportedPlyVariant: return "UnsupportedPlyVariant";
  case ErrorCode::MalformedHeader: return "MalformedHeader";
  case ErrorCode::IoFailure: return "IoFailure";
  case ErrorCode::EmptyMask: return "EmptyMask";
  case ErrorCode::NoVisiblePose: return "NoVisiblePose";
  case ErrorCode::EmptyInput: return "EmptyInput";
  case ErrorCode::DegenerateUp: return "DegenerateUp";
  case ErrorCode::CoincidentTarget: return "CoincidentTarget";
  case ErrorCode::BehindCamera: return "BehindCamera";
  case ErrorCode::NoVisiblePixels: return "NoVisiblePixels";
  case ErrorCode::DegenerateCrop: return "DegenerateCrop";
  case ErrorCode::DegenerateSum: return "DegenerateSum";
  case ErrorCode::UnnormalizedInput: return "UnnormalizedInput";
  case ErrorCode::EmptyGroundTruth: return "EmptyGroundTruth";
  case ErrorCode::MissingStageArtifact: return "MissingStageArtifact";
  case ErrorCode::ProviderFailure: return "ProviderFailure";
  }
  return "Unknown";
}

/// Library-wide exception. `what()` is "<Code>: <detail>", where the detail
/// names the offending field, file or step.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string &detail) { throw Error(code, detail); }

} // namespace nvsp
