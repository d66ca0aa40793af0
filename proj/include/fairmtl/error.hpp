#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fairmtl {

enum class ErrorCode {
  kNoPeaks,
  kTooFewIntervals,
  kInvalidInput,
  kDegenerateGroup,
  kNotBinary,
  kTooSmall,
  kBadStrength,
  kShapeMismatch,
  kStaleTrace,
  kCorruptCheckpoint,
  kUnsupportedVersion,
  kNonFinite,
  kMissingAttribute,
  kNoCheckpoints,
  kUndefinedRatio,
  kEmptyGroup,
  kMissingOutcomeClass,
  kEmptyCell,
  kEmptyCohort,
  kIo,
};

std::string_view ToString(ErrorCode code);

// Every failure raised by the library carries one of the codes above so
// callers (the CLI in particular) can branch on the kind of failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ToString(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fairmtl
