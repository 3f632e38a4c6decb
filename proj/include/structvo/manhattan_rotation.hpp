#pragma once

#include <array>
#include <numbers>
#include <span>
#include <vector>

#include "structvo/geometry.hpp"
#include "structvo/normal_map.hpp"

namespace structvo {

inline constexpr double kDegToRad = std::numbers::pi / 180.0;

struct MeanShiftConfig {
  /// c in the Gaussian weight exp(-c |m'|^2).
  double kernel_width = 2.0;
  double conic_half_angle = 20.0 * kDegToRad;
  int max_iterations = 20;
  double convergence_angle = 1e-5;
  int min_support_per_axis = 300;
  /// Sampling stride over the normal map, in map pixels.
  int stride = 4;
  /// Wider cone used by the first stage of initialize_from_identity.
  double capture_half_angle = 44.0 * kDegToRad;
};

/// Rotation from Manhattan axes to the camera: column n is axis n in camera coordinates.
struct ManhattanFrame {
  RotationMatrix rotation = RotationMatrix::identity(FrameTag::manhattan());
  std::array<int, 3> support{0, 0, 0};
  bool converged = false;
  int iterations_used = 0;
};

/// Q_n = [r_{n+1}, r_{n+2}, r_n]: the frame whose z-axis is axis n (indices mod 3).
Mat3 tangent_basis(const Mat3& axes, int n);

/// Gnomonic projection of a sign-folded direction onto the tangent plane of
/// axis n of `axes` (rotated into Q_n). Throws OutsideCone if the folded
/// angle to the axis is not below half_angle.
Vec2 tangent_project(const UnitVec3& v, int n, const Mat3& axes, double half_angle);

/// Gaussian-kernel weighted mean sum(w m) / sum(w), w = exp(-c |m|^2).
Vec2 cluster_mean(std::span<const Vec2> points, double c);

/// Planar-and-valid normals on a regular grid.
std::vector<Vec3> sample_normals(const NormalMap& map, int stride);

/// Spherical mean-shift refinement of the Manhattan axes starting from init.
/// Throws InsufficientSupport when fewer than two axes reach min support.
ManhattanFrame estimate_manhattan_rotation(std::span<const Vec3> samples, const RotationMatrix& init,
                                           const MeanShiftConfig& cfg);
ManhattanFrame estimate_manhattan_rotation(const NormalMap& map, std::span<const UnitVec3> line_dirs,
                                           const RotationMatrix& init, const MeanShiftConfig& cfg);

/// First-frame estimate from the identity: a wide-cone capture pass followed
/// by a refinement pass at the configured cone.
ManhattanFrame initialize_from_identity(const NormalMap& map, const MeanShiftConfig& cfg);
ManhattanFrame initialize_from_identity(std::span<const Vec3> samples, const MeanShiftConfig& cfg);

/// The 24 rotation matrices that permute and flip axes.
const std::array<Mat3, 24>& signed_permutations();
/// Smallest rotation angle between est * P and gt over signed permutations P.
double manhattan_rotation_error(const Mat3& est, const Mat3& gt);
/// est * P closest to reference.
Mat3 align_axes_to(const Mat3& est, const Mat3& reference);

}  // namespace structvo
