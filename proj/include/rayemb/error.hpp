#pragma once

#include <stdexcept>
#include <string>

namespace rayemb {

enum class ErrorCode {
  kInvalidArgument,
  kUnreadableFile,
  kBadHeader,
  kUnsupportedDatatype,
  kIoError,
  kEmptyMask,
  kBehindCamera,
  kNearPiRotation,
  kBadScale,
  kMissingPose,
  kSizeMismatch,
  kBadMagic,
  kDimMismatch,
  kTooFewVisibleTemplates,
  kDegenerateConfiguration,
  kNoValidHypothesis,
  kEmptyLandmarks,
  kEmptyResults,
};

const char* to_string(ErrorCode code);

/// Library-wide exception. Every failure mode that callers may want to
/// branch on carries a code; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace rayemb
