#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace structvo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Pixel = Eigen::Vector2d;

enum class FrameKind { World, Camera, Manhattan };

/// Identifies a coordinate frame. Camera frames are distinguished by index
/// (frame id); World and Manhattan are singletons.
struct FrameTag {
  FrameKind kind = FrameKind::World;
  std::int64_t index = 0;

  static FrameTag world() { return {FrameKind::World, 0}; }
  static FrameTag manhattan() { return {FrameKind::Manhattan, 0}; }
  static FrameTag camera(std::int64_t id) { return {FrameKind::Camera, id}; }

  friend bool operator==(const FrameTag&, const FrameTag&) = default;
};

std::string to_string(const FrameTag& tag);

/// Unit-length direction. Construction normalizes; direct construction from
/// an already-unit vector is checked to 1e-9.
class UnitVec3 {
 public:
  UnitVec3() : dir_(0.0, 0.0, 1.0) {}
  static UnitVec3 normalized(const Vec3& v);
  static UnitVec3 from_unit(const Vec3& v);

  const Vec3& vec() const { return dir_; }
  double x() const { return dir_.x(); }
  double y() const { return dir_.y(); }
  double z() const { return dir_.z(); }
  UnitVec3 operator-() const;

 private:
  explicit UnitVec3(const Vec3& v) : dir_(v) {}
  Vec3 dir_;
};

/// Element of SO(3) mapping coordinates in `source` to coordinates in `target`.
class RotationMatrix {
 public:
  static constexpr double kTolerance = 1e-9;

  /// Validates orthonormality and det = +1 to kTolerance.
  RotationMatrix(const Mat3& m, FrameTag source, FrameTag target);

  static RotationMatrix identity(FrameTag frame) { return {Mat3::Identity(), frame, frame}; }

  const Mat3& matrix() const { return m_; }
  FrameTag source() const { return source_; }
  FrameTag target() const { return target_; }

  RotationMatrix inverse() const;
  /// this * rhs; requires rhs.target() == source().
  RotationMatrix operator*(const RotationMatrix& rhs) const;
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  /// Same matrix, different tags (for relabeling at module boundaries).
  RotationMatrix retagged(FrameTag source, FrameTag target) const;

 private:
  struct Unchecked {};
  RotationMatrix(const Mat3& m, FrameTag source, FrameTag target, Unchecked)
      : m_(m), source_(source), target_(target) {}

  Mat3 m_;
  FrameTag source_;
  FrameTag target_;
};

/// Rigid transform x_target = R x_source + t.
class Pose {
 public:
  Pose(RotationMatrix rotation, Vec3 translation, double timestamp = 0.0);

  static Pose identity(FrameTag frame, double timestamp = 0.0);

  const RotationMatrix& rotation() const { return rotation_; }
  const Mat3& R() const { return rotation_.matrix(); }
  const Vec3& t() const { return translation_; }
  double timestamp() const { return timestamp_; }
  FrameTag source() const { return rotation_.source(); }
  FrameTag target() const { return rotation_.target(); }

  Vec3 operator*(const Vec3& p) const { return R() * p + translation_; }
  Eigen::Isometry3d isometry() const;

  /// Position of the source origin in the target frame (camera center for
  /// a camera-to-world pose).
  Vec3 origin() const { return translation_; }

  Pose with_timestamp(double ts) const { return {rotation_, translation_, ts}; }

 private:
  RotationMatrix rotation_;
  Vec3 translation_;
  double timestamp_;
};

/// a ∘ b: apply b, then a. Requires b.target() == a.source(); keeps b's timestamp.
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& a);

/// Closest rotation in Frobenius norm (SVD polar factor, determinant corrected).
Mat3 nearest_rotation_matrix(const Mat3& m);
RotationMatrix nearest_rotation(const Mat3& m, FrameTag source, FrameTag target);

Mat3 skew(const Vec3& v);
/// Rodrigues exponential of an axis-angle vector.
Mat3 so3_exp(const Vec3& omega);
/// Inverse of so3_exp, accurate near identity and near pi.
Vec3 so3_log(const Mat3& r);
/// Geodesic angle of a rotation, radians.
double rotation_angle(const Mat3& r);
/// Angle between two rotations, radians.
double rotation_distance(const Mat3& a, const Mat3& b);

}  // namespace structvo
