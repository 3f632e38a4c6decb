#include "structvo/residuals.hpp"

#include <cmath>

#include "structvo/error.hpp"

namespace structvo {

Pose perturb_left(const Pose& cam_from_world, const Vector6d& xi) {
  const Mat3 dr = so3_exp(xi.head<3>());
  const Mat3 r = nearest_rotation_matrix(dr * cam_from_world.R());
  return {RotationMatrix(r, cam_from_world.source(), cam_from_world.target()),
          dr * cam_from_world.t() + xi.tail<3>(), cam_from_world.timestamp()};
}

Vec2 point_residual(const Pixel& observed, const Vec3& p_world, const Pose& cam_from_world,
                    const CameraIntrinsics& k) {
  return observed - project(cam_from_world * p_world, k);
}

namespace {

void require_depth(const Vec3& p) {
  if (!(p.z() > kMinDepth)) fail(ErrorCode::NonPositiveDepth, "point at or behind the camera");
}

}  // namespace

PointJacobianT point_jacobian_t(const Vec3& p, const CameraIntrinsics& k) {
  require_depth(p);
  const double iz = 1.0 / p.z();
  const double iz2 = iz * iz;
  PointJacobianT j;
  j << -k.fx * iz, 0.0, k.fx * p.x() * iz2, 0.0, -k.fy * iz, k.fy * p.y() * iz2;
  return j;
}

PointJacobianPose point_jacobian_pose(const Vec3& p, const CameraIntrinsics& k) {
  require_depth(p);
  const double x = p.x(), y = p.y(), z = p.z();
  const double z2 = z * z;
  PointJacobianPose j;
  j.row(0) << x * y * k.fx / z2, -(z2 + x * x) * k.fx / z2, y * k.fx / z, -k.fx / z, 0.0, x * k.fx / z2;
  j.row(1) << (z2 + y * y) * k.fy / z2, -x * y * k.fy / z2, -x * k.fy / z, 0.0, -k.fy / z, y * k.fy / z2;
  return j;
}

Vec3 line_function(const Pixel& start, const Pixel& end) {
  const Vec3 s(start.x(), start.y(), 1.0);
  const Vec3 e(end.x(), end.y(), 1.0);
  const Vec3 c = s.cross(e);
  if (c.norm() < 1e-12) fail(ErrorCode::DegenerateLine, "line endpoints coincide");
  return c / (s.norm() * e.norm());
}

double line_residual(const Vec3& l, const Vec3& p_world, const Pose& cam_from_world, const CameraIntrinsics& k) {
  const Pixel q = project(cam_from_world * p_world, k);
  return l.dot(Vec3(q.x(), q.y(), 1.0));
}

LineJacobianT line_jacobian_t(const Vec3& p, const Vec3& l, const CameraIntrinsics& k) {
  require_depth(p);
  const double z = p.z();
  LineJacobianT j;
  j << k.fx * l.x() / z, k.fy * l.y() / z, -(k.fx * l.x() * p.x() + k.fy * l.y() * p.y()) / (z * z);
  return j;
}

LineJacobianPose line_jacobian_pose(const Vec3& p, const Vec3& l, const CameraIntrinsics& k) {
  require_depth(p);
  const double x = p.x(), y = p.y(), z = p.z();
  const double z2 = z * z;
  const double ax = k.fx * l.x();
  const double by = k.fy * l.y();
  LineJacobianPose j;
  j << -(by * z2 + ax * x * y + by * y * y) / z2, (ax * z2 + ax * x * x + by * x * y) / z2, -(ax * y - by * x) / z,
      ax / z, by / z, -(ax * x + by * y) / z2;
  return j;
}

}  // namespace structvo
