#include "structvo/camera.hpp"

#include "structvo/error.hpp"

namespace structvo {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || width <= 0 || height <= 0) {
    fail(ErrorCode::CorruptInput, "invalid camera intrinsics");
  }
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

bool CameraIntrinsics::in_bounds(const Pixel& p, double margin) const {
  return p.x() >= margin && p.y() >= margin && p.x() <= width - 1.0 - margin && p.y() <= height - 1.0 - margin;
}

CameraIntrinsics CameraIntrinsics::downsampled(int factor) const {
  if (factor <= 1) return *this;
  const double s = 1.0 / factor;
  // Pixel centers: u' = (u + 0.5) / f - 0.5.
  return {fx * s, fy * s, (cx + 0.5) * s - 0.5, (cy + 0.5) * s - 0.5, width / factor, height / factor};
}

Pixel project(const Vec3& p, const CameraIntrinsics& k) {
  if (!(p.z() > kMinDepth)) fail(ErrorCode::NonPositiveDepth, "point at or behind the camera");
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

Vec3 normalize_pixel(const Pixel& p, const CameraIntrinsics& k) {
  return {(p.x() - k.cx) / k.fx, (p.y() - k.cy) / k.fy, 1.0};
}

}  // namespace structvo
