#pragma once

#include "structvo/geometry.hpp"

namespace structvo {

/// Pinhole camera without distortion.
struct CameraIntrinsics {
  double fx = 500.0;
  double fy = 500.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  /// Throws CorruptInput unless fx, fy, width, height are positive.
  void validate() const;
  Mat3 matrix() const;
  bool in_bounds(const Pixel& p, double margin = 0.0) const;
  /// Intrinsics of the same camera resampled by an integer factor.
  CameraIntrinsics downsampled(int factor) const;

  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

inline constexpr double kMinDepth = 1e-12;

/// (fx x/z + cx, fy y/z + cy); NonPositiveDepth when z <= 1e-12.
Pixel project(const Vec3& p, const CameraIntrinsics& k);
/// K^-1 (u, v, 1).
Vec3 normalize_pixel(const Pixel& p, const CameraIntrinsics& k);

}  // namespace structvo
