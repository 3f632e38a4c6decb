#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "structvo/geometry.hpp"

namespace structvo {

/// Camera-to-world poses with strictly increasing timestamps.
class Trajectory {
 public:
  Trajectory() = default;
  /// Throws CorruptInput unless timestamps strictly increase.
  explicit Trajectory(std::vector<Pose> poses);

  void push_back(const Pose& pose);
  /// Keeps the file quaternion (x, y, z, w) so canonical input re-serializes identically.
  void push_back(const Pose& pose, const Eigen::Vector4d& source_xyzw);
  std::size_t size() const { return poses_.size(); }
  bool empty() const { return poses_.empty(); }
  const Pose& operator[](std::size_t i) const { return poses_[i]; }
  const std::vector<Pose>& poses() const { return poses_; }
  const Eigen::Vector4d& quaternion(std::size_t i) const { return quats_[i]; }
  std::vector<Vec3> positions() const;
  /// Sum of consecutive position differences.
  double path_length() const;

 private:
  std::vector<Pose> poses_;
  std::vector<Eigen::Vector4d> quats_;
};

// TUM text format: `timestamp tx ty tz qx qy qz qw`, '#' comments.
// Canonical output: %.6f timestamp, %.9f elsewhere, qw >= 0.
std::string format_tum(const Trajectory& traj);
/// Quaternions off unit norm by more than 1e-6 are renormalized (warning),
/// by more than 1e-3 rejected with CorruptInput.
Trajectory parse_tum(const std::string& text);
void write_tum(const std::filesystem::path& path, const Trajectory& traj);
Trajectory read_tum(const std::filesystem::path& path);

using IndexPairs = std::vector<std::pair<std::size_t, std::size_t>>;

/// Greedy nearest-timestamp pairing, each pose used once. Throws NoOverlap.
IndexPairs associate(const Trajectory& est, const Trajectory& gt, double max_dt = 0.02);

/// x_gt = s R x_est + t.
struct Sim3 {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

/// Closed-form least squares similarity. Throws DegenerateConfiguration.
Sim3 align_sim3(std::span<const Vec3> est, std::span<const Vec3> gt, bool fix_scale = false);

double ate_rmse(std::span<const Vec3> est, std::span<const Vec3> gt, const Sim3& alignment);
/// Per-pair position errors after alignment.
std::vector<double> ate_errors(std::span<const Vec3> est, std::span<const Vec3> gt, const Sim3& alignment);

struct RpeResult {
  double trans_rmse = 0.0;
  double rot_rmse_deg = 0.0;
  std::size_t pairs = 0;
};
/// Relative error over index offset delta. Requires size > delta.
RpeResult rpe(std::span<const Pose> est, std::span<const Pose> gt, std::size_t delta = 1);
/// Same, pairing i with the first j whose gt timestamp is >= t_i + seconds.
RpeResult rpe_seconds(std::span<const Pose> est, std::span<const Pose> gt, double seconds = 1.0);

struct MetricReport {
  double ate_rmse = 0.0;
  RpeResult rpe_frame;
  RpeResult rpe_second;
  Sim3 alignment;
  std::vector<double> timestamps;
  std::vector<double> errors;
  std::size_t matched = 0;
  double gt_length = 0.0;
};

struct EvalOptions {
  double max_dt = 0.02;
  bool fix_scale = false;
  std::size_t rpe_delta = 1;
};

MetricReport evaluate(const Trajectory& est, const Trajectory& gt, const EvalOptions& opts = {});

/// `| name | ATE [m] | RPE trans [m] | RPE rot [deg] | frames |`
std::string format_table_row(const std::string& name, const MetricReport& report);
/// Header line `timestamp,ate_error`, one row per matched pose.
std::string format_error_csv(const MetricReport& report);
/// Top-down (x, z) view with one polyline per trajectory.
std::string format_svg(const std::vector<std::pair<std::string, std::vector<Vec3>>>& trajectories);

}  // namespace structvo
