#pragma once

#include <deque>
#include <functional>
#include <span>
#include <optional>
#include <string>
#include <vector>

#include "structvo/camera.hpp"
#include "structvo/epipolar_translation.hpp"
#include "structvo/features.hpp"
#include "structvo/keyframe_map.hpp"
#include "structvo/manhattan_rotation.hpp"
#include "structvo/normal_map.hpp"
#include "structvo/pose_optimizer.hpp"

namespace structvo {

struct TrackerConfig {
  MeanShiftConfig manhattan;
  InitOptions init;
  /// Median rotation-compensated displacement required before two-view initialization.
  double init_min_parallax_px = 15.0;
  double init_match_radius_px = 80.0;
  /// Line endpoints closer than this to the border count as clipped.
  double border_margin_px = 2.0;

  int min_inliers = 30;
  RobustScales scales;
  LmOptions lm;
  int local_map_keyframes = 5;
  /// Number of previous frames in the translation cost.
  int window = 2;
  MatchOptions matching;
  /// Gate for counting local-map matches during validation.
  double validation_radius_px = 10.0;
  KeyframePolicy keyframes;
  double max_triangulation_error_px = 3.0;

  /// Disables line terms everywhere (points-only ablation).
  bool use_lines = true;
  /// Estimate the Manhattan rotation concurrently with match preparation.
  bool parallel_rotation = true;
};

enum class TrackMode { Manhattan, FrameToFrame, KeyframeFallback };
std::string to_string(TrackMode mode);

struct TrackTiming {
  double rotation_ms = 0.0;
  double translation_ms = 0.0;
  double validation_ms = 0.0;
  double refinement_ms = 0.0;
  double total_ms = 0.0;
};

struct TrackResult {
  FrameId frame = 0;
  Pose pose = Pose::identity(FrameTag::world());  // world_from_camera
  TrackMode mode = TrackMode::Manhattan;
  int point_inliers = 0;
  int line_inliers = 0;
  bool accepted = false;
  /// Set for frames recovered by back-filling after two-view initialization.
  bool backfilled = false;
  /// Camera-from-world rotation before local-map refinement (Manhattan mode only).
  std::optional<Mat3> manhattan_rotation;
  TrackTiming timing;
  int inliers() const { return point_inliers + line_inliers; }
};

/// Feature-to-landmark association with the residual terms it induces.
struct LandmarkMatches {
  std::vector<PointTerm> points;
  std::vector<LineTerm> lines;
  /// Parallel to points: (feature index, landmark).
  std::vector<std::pair<int, LandmarkId>> point_links;
  /// One entry per matched line; line terms 2i and 2i+1 belong to entry i.
  std::vector<std::pair<int, LandmarkId>> line_links;
};

/// Monocular point/line tracker with per-frame Manhattan rotation.
/// World coordinates are the Manhattan frame fixed at initialization.
class Tracker {
 public:
  Tracker(TrackerConfig cfg, CameraIntrinsics k, const NormalProvider& normals, CameraIntrinsics normal_k);

  /// Feeds one frame. Before initialization returns nothing or, on the
  /// initializing frame, results for the buffered frames too. Throws
  /// TrackingLost when every tracking path fails.
  std::vector<TrackResult> process(const FrameObservations& frame);

  bool initialized() const { return initialized_; }
  const KeyframeMap& map() const { return map_; }
  const TrackerConfig& config() const { return cfg_; }
  /// Frames of the current initialization attempt that are buffered.
  std::size_t pending_frames() const { return pending_.size(); }

  /// Main path for one frame after initialization. Throws TrackingLost.
  TrackResult track_frame(const FrameObservations& frame);

 private:
  struct FrameState {
    FrameObservations obs;
    Pose cam_from_world;
    std::optional<Mat3> manhattan;
  };
  struct Pending {
    FrameObservations obs;
    Mat3 r_cm;
  };
  struct Attempt {
    Pose cam_from_world;
    LandmarkMatches local;
    InlierSet inliers;
  };

  Mat3 estimate_rotation(FrameId id, const Mat3& init) const;
  std::vector<TrackResult> try_initialize(const FrameObservations& frame);
  std::vector<TrackResult> backfill(const std::vector<Pending>& frames, const Pose& first, const Pose& last);

  LandmarkMatches match_previous(const FrameState& prev, const FrameObservations& cur, const Pose& predicted,
                                 double radius) const;
  LandmarkMatches match_local_map(const FrameObservations& cur, const Pose& cam_from_world, double radius) const;
  LandmarkMatches match_keyframe_descriptors(const FrameObservations& cur) const;
  Attempt validate(const FrameObservations& cur, const Pose& cam_from_world) const;
  std::optional<Attempt> fallback_stage(const FrameObservations& cur, const LandmarkMatches& matches,
                                        const Pose& start) const;
  Pose refine(const Pose& start, LandmarkMatches& local, InlierSet& inliers) const;
  void commit(const FrameObservations& cur, const Pose& cam_from_world, const std::optional<Mat3>& manhattan,
              const LandmarkMatches& local, const InlierSet& inliers, const std::vector<LandmarkMatches>& extra);
  void insert_keyframe(const FrameState& state);
  int triangulate_new(FrameId older, FrameId newer);

  TrackerConfig cfg_;
  CameraIntrinsics k_;
  const NormalProvider& normals_;
  CameraIntrinsics normal_k_;
  KeyframeMap map_;
  bool initialized_ = false;
  std::vector<Pending> pending_;
  std::deque<FrameState> recent_;
  std::optional<Mat3> last_manhattan_;
  int frames_since_keyframe_ = 0;
  int reference_inliers_ = 0;
};

struct RunSummary {
  std::size_t frames = 0;
  /// One entry per frame that produced a result, ordered by frame id.
  std::vector<TrackResult> results;
  std::vector<FrameId> lost;
  /// Accepted poses only.
  std::vector<Pose> accepted_poses() const;
  double tracked_fraction() const;
};

/// Called after each input frame with the results it produced (possibly
/// several after initialization) and whether tracking was lost.
using FrameCallback = std::function<void(const FrameObservations&, const std::vector<TrackResult>&, bool lost)>;

/// Feeds frames in order; a lost frame is recorded and tracking continues.
RunSummary run_tracker(Tracker& tracker, std::span<const FrameObservations> frames, const FrameCallback& on_frame = {});

/// Tags: camera(id) <- world.
Pose make_cam_from_world(const Mat3& r, const Vec3& t, FrameId id, double timestamp);

}  // namespace structvo
