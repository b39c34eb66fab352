#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedstill {

enum class ErrorCode {
  kShapeMismatch,
  kNonFiniteValue,
  kNotScalar,
  kMissingGradient,
  kUnknownClass,
  kCorruptModel,
  kVersionMismatch,
  kPlacementFailure,
  kParseError,
  kValidationError,
  kEmptyAnnotationSet,
  kClassSetMismatch,
  kEmptyMask,
  kDataUnavailable,
  kUntrainedClient,
  kEmptyDistillationSet,
  kEmptyStore,
  kOneTimeInferenceViolation,
  kUncoveredClass,
  kHeterogeneousArchitectures,
  kMissingGlobalModel,
  kMissingLocalModel,
  kStaleRun,
  kUnknownDataset,
  kIncompatibleRuns,
  kIoError,
};

std::string_view error_name(ErrorCode code);

// Exit code for the CLI: 2 for config/validation problems, 3 otherwise.
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace fedstill
