#pragma once

#include <Eigen/Core>

#include "structvo/camera.hpp"
#include "structvo/geometry.hpp"

namespace structvo {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using PointJacobianT = Eigen::Matrix<double, 2, 3>;
using PointJacobianPose = Eigen::Matrix<double, 2, 6>;
using LineJacobianT = Eigen::Matrix<double, 1, 3>;
using LineJacobianPose = Eigen::Matrix<double, 1, 6>;

// Pose parameterization for the Jacobians below: a left perturbation
// xi = (omega, rho) acting on camera-frame points as
//   P_cam' = Exp(omega) P_cam + rho,
// i.e. R' = Exp(omega) R, t' = Exp(omega) t + rho. Columns are ordered
// rotation first, translation last.
Pose perturb_left(const Pose& cam_from_world, const Vector6d& xi);

/// e = p - pi(R P + t), pixels. Throws NonPositiveDepth.
Vec2 point_residual(const Pixel& observed, const Vec3& p_world, const Pose& cam_from_world,
                    const CameraIntrinsics& k);

/// d e / d t at camera-frame point p_cam. Throws NonPositiveDepth.
PointJacobianT point_jacobian_t(const Vec3& p_cam, const CameraIntrinsics& k);
/// Full 2x6 d e / d xi.
PointJacobianPose point_jacobian_pose(const Vec3& p_cam, const CameraIntrinsics& k);

/// l = (p_s x p_e) / (|p_s| |p_e|) on homogeneous pixels. Throws DegenerateLine.
Vec3 line_function(const Pixel& start, const Pixel& end);

/// e = l . (u, v, 1) with (u, v) = pi(R P + t). Throws NonPositiveDepth.
double line_residual(const Vec3& l, const Vec3& p_world, const Pose& cam_from_world, const CameraIntrinsics& k);

LineJacobianT line_jacobian_t(const Vec3& p_cam, const Vec3& l, const CameraIntrinsics& k);
LineJacobianPose line_jacobian_pose(const Vec3& p_cam, const Vec3& l, const CameraIntrinsics& k);

/// Converts a line residual to pixels of perpendicular distance.
inline double line_pixel_scale(const Vec3& l) { return std::hypot(l.x(), l.y()); }

}  // namespace structvo
