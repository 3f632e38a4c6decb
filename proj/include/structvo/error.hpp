#pragma once

#include <stdexcept>
#include <string>

namespace structvo {

enum class ErrorCode {
  NonPositiveDepth,
  SingularInput,
  FrameMismatch,
  InvalidRotation,
  DimensionMismatch,
  FrameNotFound,
  CorruptInput,
  OutsideCone,
  EmptyCluster,
  InsufficientSupport,
  DegenerateTranslation,
  TooFewCorrespondences,
  InitializationFailed,
  LowParallax,
  NegativeDepth,
  DegeneratePlane,
  DegenerateLine,
  IllPosed,
  Diverged,
  TrackingLost,
  NoOverlap,
  DegenerateConfiguration,
  IoError,
  BadPreset,
  ConfigError,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

}  // namespace structvo
