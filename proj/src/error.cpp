#include "rayemb/error.hpp"

namespace rayemb {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kUnreadableFile: return "UnreadableFile";
    case ErrorCode::kBadHeader: return "BadHeader";
    case ErrorCode::kUnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kEmptyMask: return "EmptyMask";
    case ErrorCode::kBehindCamera: return "BehindCamera";
    case ErrorCode::kNearPiRotation: return "NearPiRotation";
    case ErrorCode::kBadScale: return "BadScale";
    case ErrorCode::kMissingPose: return "MissingPose";
    case ErrorCode::kSizeMismatch: return "SizeMismatch";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kTooFewVisibleTemplates: return "TooFewVisibleTemplates";
    case ErrorCode::kDegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::kNoValidHypothesis: return "NoValidHypothesis";
    case ErrorCode::kEmptyLandmarks: return "EmptyLandmarks";
    case ErrorCode::kEmptyResults: return "EmptyResults";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace rayemb
