#pragma once

#include <optional>
#include <span>
#include <vector>

#include "structvo/camera.hpp"
#include "structvo/features.hpp"
#include "structvo/geometry.hpp"

namespace structvo {

struct Correspondence2D {
  Pixel p1 = Pixel::Zero();
  Pixel p2 = Pixel::Zero();
  std::optional<LandmarkId> hint;
};

/// Translation direction of camera 2 relative to camera 1 (x2 = R x1 + t).
struct TranslationEstimate {
  UnitVec3 direction;
  std::vector<bool> inliers;
  /// sigma_2 / sigma_3 of the stacked constraint matrix.
  double condition_ratio = 0.0;
};

struct TranslationSolveOptions {
  double min_condition_ratio = 10.0;
  double mad_factor = 3.0;
};

/// Coefficients a with a . t = 0 for the true translation: a = x2 x (R x1),
/// where x = K^-1 (u, v, 1). Equal to the bracket (t x x2) . (R x1) expanded
/// for t.
Vec3 constraint_row(const Correspondence2D& c, const Mat3& cam2_from_cam1, const CameraIntrinsics& k);

/// Homogeneous least squares for t with one MAD-based outlier rejection
/// round and cheirality sign selection. Throws TooFewCorrespondences or
/// DegenerateTranslation.
TranslationEstimate solve_translation(std::span<const Correspondence2D> cs, const RotationMatrix& cam2_from_cam1,
                                      const CameraIntrinsics& k, const TranslationSolveOptions& opts = {});

/// Depths (z1, z2) of a correspondence given relative pose; least squares.
Eigen::Vector2d correspondence_depths(const Correspondence2D& c, const Mat3& r, const Vec3& t,
                                      const CameraIntrinsics& k);

struct InitialPoint {
  Vec3 position;  // camera-1 coordinates
  int feature1 = 0;
  int feature2 = 0;
};

struct InitialLine {
  Segment3 segment;
  int feature1 = 0;
  int feature2 = 0;
};

/// Two-view map in camera-1 coordinates with |t| = 1.
struct InitialMap {
  Pose cam1_from_cam2;
  std::vector<InitialPoint> points;
  std::vector<InitialLine> lines;
  std::size_t landmark_count() const { return points.size() + lines.size(); }
};

struct InitOptions {
  int min_landmarks = 30;
  double max_reprojection_px = 2.0;
};

/// Triangulates all matched points and lines; drops landmarks behind a
/// camera or reprojecting worse than max_reprojection_px. Throws
/// InitializationFailed when fewer than min_landmarks survive.
InitialMap initialize_map(const FrameObservations& f1, const FrameObservations& f2, const FrameMatches& matches,
                          const RotationMatrix& cam2_from_cam1, const Vec3& t_dir, const CameraIntrinsics& k,
                          const InitOptions& opts = {});

}  // namespace structvo
