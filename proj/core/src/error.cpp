#include "fedstill/error.hpp"

namespace fedstill {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kNotScalar: return "NotScalar";
    case ErrorCode::kMissingGradient: return "MissingGradient";
    case ErrorCode::kUnknownClass: return "UnknownClass";
    case ErrorCode::kCorruptModel: return "CorruptModel";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kPlacementFailure: return "PlacementFailure";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kValidationError: return "ValidationError";
    case ErrorCode::kEmptyAnnotationSet: return "EmptyAnnotationSet";
    case ErrorCode::kClassSetMismatch: return "ClassSetMismatch";
    case ErrorCode::kEmptyMask: return "EmptyMask";
    case ErrorCode::kDataUnavailable: return "DataUnavailable";
    case ErrorCode::kUntrainedClient: return "UntrainedClient";
    case ErrorCode::kEmptyDistillationSet: return "EmptyDistillationSet";
    case ErrorCode::kEmptyStore: return "EmptyStore";
    case ErrorCode::kOneTimeInferenceViolation: return "OneTimeInferenceViolation";
    case ErrorCode::kUncoveredClass: return "UncoveredClass";
    case ErrorCode::kHeterogeneousArchitectures: return "HeterogeneousArchitectures";
    case ErrorCode::kMissingGlobalModel: return "MissingGlobalModel";
    case ErrorCode::kMissingLocalModel: return "MissingLocalModel";
    case ErrorCode::kStaleRun: return "StaleRun";
    case ErrorCode::kUnknownDataset: return "UnknownDataset";
    case ErrorCode::kIncompatibleRuns: return "IncompatibleRuns";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParseError:
    case ErrorCode::kValidationError:
    case ErrorCode::kUnknownClass:
    case ErrorCode::kPlacementFailure:
      return 2;
    default:
      return 3;
  }
}

}  // namespace fedstill
