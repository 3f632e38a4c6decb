#pragma once

#include <map>
#include <optional>
#include <vector>

#include "structvo/features.hpp"
#include "structvo/geometry.hpp"

namespace structvo {

struct Observation {
  FrameId keyframe = 0;
  int feature = 0;
  friend bool operator==(const Observation&, const Observation&) = default;
};

struct PointLandmark {
  LandmarkId id = 0;
  Vec3 position = Vec3::Zero();
  Descriptor descriptor;
  std::vector<Observation> observations;
};

struct LineLandmark {
  LandmarkId id = 0;
  Segment3 segment;
  Descriptor descriptor;
  std::vector<Observation> observations;
};

struct Keyframe {
  Pose world_from_camera;
  FrameObservations frame;
};

struct KeyframePolicy {
  /// Insert when tracked inliers fall below this fraction of the reference keyframe's.
  double inlier_fraction = 0.5;
  /// Insert at the latest after this many frames.
  int max_frame_gap = 20;
  /// Landmarks with fewer than 2 observations and none in this many recent keyframes are culled.
  int cull_window = 3;
};

bool needs_keyframe(int tracked_inliers, int reference_inliers, int frames_since_last, const KeyframePolicy& policy);

/// Keyframes, landmarks and covisibility. Single writer; readers copy.
/// Invariant: every landmark observation references an existing keyframe and
/// a feature in it whose landmark field points back at the landmark.
class KeyframeMap {
 public:
  enum class Kind { Point, Line };

  void insert_keyframe(FrameObservations frame, const Pose& world_from_camera);
  bool has_keyframe(FrameId id) const { return keyframes_.count(id) != 0; }
  const Keyframe& keyframe(FrameId id) const;
  const std::map<FrameId, Keyframe>& keyframes() const { return keyframes_; }
  /// Most recent n keyframe ids, newest first.
  std::vector<FrameId> recent_keyframes(std::size_t n) const;

  /// Creates a landmark from observations (each in an existing keyframe, feature unassigned).
  LandmarkId add_point(const Vec3& position, const Descriptor& descriptor, const std::vector<Observation>& obs);
  LandmarkId add_line(const Segment3& segment, const Descriptor& descriptor, const std::vector<Observation>& obs);
  void add_observation(Kind kind, LandmarkId id, const Observation& obs);
  void remove_observation(Kind kind, LandmarkId id, const Observation& obs);
  void set_point_position(LandmarkId id, const Vec3& position);

  /// Removes landmarks with < 2 observations that were not observed in the
  /// last `policy.cull_window` keyframes. Returns the number removed.
  int cull_landmarks(const KeyframePolicy& policy);

  const std::map<LandmarkId, PointLandmark>& points() const { return points_; }
  const std::map<LandmarkId, LineLandmark>& lines() const { return lines_; }
  const PointLandmark* point(LandmarkId id) const;
  const LineLandmark* line(LandmarkId id) const;

  int covisibility(FrameId a, FrameId b) const;

  bool check_integrity() const;

 private:
  void link(Kind kind, LandmarkId id, const Observation& obs);
  void unlink(Kind kind, const Observation& obs);
  void bump_covisibility(const std::vector<Observation>& existing, FrameId kf, int delta);

  std::map<FrameId, Keyframe> keyframes_;
  std::map<LandmarkId, PointLandmark> points_;
  std::map<LandmarkId, LineLandmark> lines_;
  std::map<std::pair<FrameId, FrameId>, int> covisibility_;
  LandmarkId next_id_ = 0;
};

}  // namespace structvo
