#include "structvo/geometry.hpp"

#include <cmath>

#include <Eigen/SVD>

#include "structvo/error.hpp"

namespace structvo {

std::string to_string(const FrameTag& tag) {
  switch (tag.kind) {
    case FrameKind::World: return "world";
    case FrameKind::Manhattan: return "manhattan";
    case FrameKind::Camera: return "camera[" + std::to_string(tag.index) + "]";
  }
  return "?";
}

UnitVec3 UnitVec3::normalized(const Vec3& v) {
  const double n = v.norm();
  if (!(n > 1e-300) || !std::isfinite(n)) fail(ErrorCode::SingularInput, "cannot normalize zero or non-finite vector");
  return UnitVec3(v / n);
}

UnitVec3 UnitVec3::from_unit(const Vec3& v) {
  if (std::abs(v.norm() - 1.0) > 1e-9) fail(ErrorCode::SingularInput, "vector is not unit length");
  return UnitVec3(v);
}

UnitVec3 UnitVec3::operator-() const { return UnitVec3(-dir_); }

RotationMatrix::RotationMatrix(const Mat3& m, FrameTag source, FrameTag target)
    : m_(m), source_(source), target_(target) {
  if (!m.allFinite()) fail(ErrorCode::InvalidRotation, "non-finite entries");
  const Mat3 gram = m.transpose() * m - Mat3::Identity();
  if (gram.cwiseAbs().maxCoeff() > kTolerance) fail(ErrorCode::InvalidRotation, "matrix is not orthonormal");
  if (std::abs(m.determinant() - 1.0) > kTolerance) fail(ErrorCode::InvalidRotation, "determinant is not +1");
}

RotationMatrix RotationMatrix::inverse() const {
  return {m_.transpose(), target_, source_, Unchecked{}};
}

RotationMatrix RotationMatrix::operator*(const RotationMatrix& rhs) const {
  if (!(rhs.target_ == source_)) {
    fail(ErrorCode::FrameMismatch, "cannot chain " + to_string(rhs.source_) + "->" + to_string(rhs.target_) +
                                       " into " + to_string(source_) + "->" + to_string(target_));
  }
  return {m_ * rhs.m_, rhs.source_, target_, Unchecked{}};
}

RotationMatrix RotationMatrix::retagged(FrameTag source, FrameTag target) const {
  return {m_, source, target, Unchecked{}};
}

Pose::Pose(RotationMatrix rotation, Vec3 translation, double timestamp)
    : rotation_(std::move(rotation)), translation_(std::move(translation)), timestamp_(timestamp) {
  if (!translation_.allFinite()) fail(ErrorCode::SingularInput, "non-finite translation");
}

Pose Pose::identity(FrameTag frame, double timestamp) {
  return {RotationMatrix::identity(frame), Vec3::Zero(), timestamp};
}

Eigen::Isometry3d Pose::isometry() const {
  Eigen::Isometry3d iso = Eigen::Isometry3d::Identity();
  iso.linear() = R();
  iso.translation() = translation_;
  return iso;
}

Pose compose(const Pose& a, const Pose& b) {
  RotationMatrix r = a.rotation() * b.rotation();
  return {std::move(r), a.R() * b.t() + a.t(), b.timestamp()};
}

Pose inverse(const Pose& a) {
  RotationMatrix r = a.rotation().inverse();
  Vec3 t = -(r.matrix() * a.t());
  return {std::move(r), t, a.timestamp()};
}

Mat3 nearest_rotation_matrix(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (!(svd.singularValues()(2) >= 1e-12)) fail(ErrorCode::SingularInput, "matrix is (near) singular");
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Eigen::Vector3d d(1.0, 1.0, (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
  Mat3 r = u * d.asDiagonal() * v.transpose();
  // One Newton polar step pulls the result to orthonormal at machine precision.
  r = 0.5 * (r + r.inverse().transpose());
  return r;
}

RotationMatrix nearest_rotation(const Mat3& m, FrameTag source, FrameTag target) {
  return {nearest_rotation_matrix(m), source, target};
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) return Mat3::Identity() + skew(omega);
  return Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
}

Vec3 so3_log(const Mat3& r) {
  Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

double rotation_angle(const Mat3& r) {
  // atan2 form stays accurate at small angles where acos loses half the digits.
  const Vec3 v(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * v.norm(), 0.5 * (r.trace() - 1.0));
}

double rotation_distance(const Mat3& a, const Mat3& b) { return rotation_angle(a.transpose() * b); }

}  // namespace structvo
