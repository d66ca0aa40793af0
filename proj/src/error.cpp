#include "fairmtl/error.hpp"

namespace fairmtl {

std::string_view ToString(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNoPeaks: return "NoPeaks";
    case ErrorCode::kTooFewIntervals: return "TooFewIntervals";
    case ErrorCode::kInvalidInput: return "InvalidInput";
    case ErrorCode::kDegenerateGroup: return "DegenerateGroup";
    case ErrorCode::kNotBinary: return "NotBinary";
    case ErrorCode::kTooSmall: return "TooSmall";
    case ErrorCode::kBadStrength: return "BadStrength";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kStaleTrace: return "StaleTrace";
    case ErrorCode::kCorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::kUnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kMissingAttribute: return "MissingAttribute";
    case ErrorCode::kNoCheckpoints: return "NoCheckpoints";
    case ErrorCode::kUndefinedRatio: return "UndefinedRatio";
    case ErrorCode::kEmptyGroup: return "EmptyGroup";
    case ErrorCode::kMissingOutcomeClass: return "MissingOutcomeClass";
    case ErrorCode::kEmptyCell: return "EmptyCell";
    case ErrorCode::kEmptyCohort: return "EmptyCohort";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

}  // namespace fairmtl
