#pragma once

#include <vector>

#include "structvo/camera.hpp"
#include "structvo/geometry.hpp"
#include "structvo/residuals.hpp"

namespace structvo {

struct PointTerm {
  Pixel observed = Pixel::Zero();
  Vec3 world = Vec3::Zero();
};

/// One endpoint of a matched 3D line against the observed 2D line function.
struct LineTerm {
  Vec3 line = Vec3::Zero();
  Vec3 world = Vec3::Zero();
};

struct LmOptions {
  double lambda_init = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 0.5;
  double relative_cost_tolerance = 1e-8;
  double step_tolerance = 1e-8;
  int max_iterations = 50;
  int max_consecutive_rejections = 10;
};

struct RobustScales {
  double point_px = 2.0;
  double line_px = 1.5;
  /// Inlier iff residual < inlier_factor * scale.
  double inlier_factor = 3.0;
  /// Disable Huber weighting (plain least squares).
  bool plain_least_squares = false;
};

/// Translation-only problem with fixed rotation (world -> camera).
struct TranslationProblem {
  Mat3 rotation = Mat3::Identity();
  std::vector<PointTerm> points;
  std::vector<LineTerm> lines;
  RobustScales scales;
  Vec3 initial_t = Vec3::Zero();
  CameraIntrinsics k;
};

struct PoseProblem {
  Pose initial = Pose::identity(FrameTag::world());
  std::vector<PointTerm> points;
  std::vector<LineTerm> lines;
  RobustScales scales;
  CameraIntrinsics k;
};

struct LmSummary {
  int iterations = 0;
  int accepted_steps = 0;
  int rejected_steps = 0;
  /// Accepted steps whose cost exceeded the previous accepted cost. Always 0
  /// under the acceptance rule; counted as a runtime check.
  int monotonic_violations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  int dropped_terms = 0;
  std::vector<double> accepted_costs;
};

struct InlierSet {
  std::vector<bool> points;
  std::vector<bool> lines;
  int point_inliers = 0;
  int line_inliers = 0;
  int total() const { return point_inliers + line_inliers; }
};

struct TranslationSolution {
  Vec3 t = Vec3::Zero();
  InlierSet inliers;
  LmSummary summary;
  /// Second pass over the first pass's inliers; empty when none were rejected.
  LmSummary refinement;
};

struct PoseSolution {
  Pose pose = Pose::identity(FrameTag::world());
  InlierSet inliers;
  LmSummary summary;
  LmSummary refinement;
};

/// Huber-weighted LM over t, then one LM pass restricted to the inliers when
/// any term was rejected. Throws IllPosed or Diverged.
TranslationSolution solve_translation_lm(const TranslationProblem& problem, const LmOptions& opts = {});
/// Huber-weighted LM over the full pose using left perturbations. Throws IllPosed or Diverged.
PoseSolution solve_pose_lm(const PoseProblem& problem, const LmOptions& opts = {});

/// Inlier classification of the given terms at a fixed pose.
InlierSet classify_inliers(const Pose& cam_from_world, const std::vector<PointTerm>& points,
                           const std::vector<LineTerm>& lines, const RobustScales& scales,
                           const CameraIntrinsics& k);

}  // namespace structvo
