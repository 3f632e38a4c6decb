#include "structvo/error.hpp"

namespace structvo {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::SingularInput: return "SingularInput";
    case ErrorCode::FrameMismatch: return "FrameMismatch";
    case ErrorCode::InvalidRotation: return "InvalidRotation";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::FrameNotFound: return "FrameNotFound";
    case ErrorCode::CorruptInput: return "CorruptInput";
    case ErrorCode::OutsideCone: return "OutsideCone";
    case ErrorCode::EmptyCluster: return "EmptyCluster";
    case ErrorCode::InsufficientSupport: return "InsufficientSupport";
    case ErrorCode::DegenerateTranslation: return "DegenerateTranslation";
    case ErrorCode::TooFewCorrespondences: return "TooFewCorrespondences";
    case ErrorCode::InitializationFailed: return "InitializationFailed";
    case ErrorCode::LowParallax: return "LowParallax";
    case ErrorCode::NegativeDepth: return "NegativeDepth";
    case ErrorCode::DegeneratePlane: return "DegeneratePlane";
    case ErrorCode::DegenerateLine: return "DegenerateLine";
    case ErrorCode::IllPosed: return "IllPosed";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::TrackingLost: return "TrackingLost";
    case ErrorCode::NoOverlap: return "NoOverlap";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadPreset: return "BadPreset";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace structvo
