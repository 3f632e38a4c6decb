#include "structvo/keyframe_map.hpp"

#include <algorithm>

#include "structvo/error.hpp"

namespace structvo {

bool needs_keyframe(int tracked_inliers, int reference_inliers, int frames_since_last, const KeyframePolicy& policy) {
  if (frames_since_last >= policy.max_frame_gap) return true;
  return tracked_inliers < policy.inlier_fraction * reference_inliers;
}

void KeyframeMap::insert_keyframe(FrameObservations frame, const Pose& world_from_camera) {
  const FrameId id = frame.id;
  if (keyframes_.count(id)) fail(ErrorCode::FrameMismatch, "keyframe already present");
  for (auto& p : frame.points) p.landmark.reset();
  for (auto& l : frame.lines) l.landmark.reset();
  keyframes_.emplace(id, Keyframe{world_from_camera, std::move(frame)});
}

const Keyframe& KeyframeMap::keyframe(FrameId id) const {
  auto it = keyframes_.find(id);
  if (it == keyframes_.end()) fail(ErrorCode::FrameNotFound, "no keyframe " + std::to_string(id));
  return it->second;
}

std::vector<FrameId> KeyframeMap::recent_keyframes(std::size_t n) const {
  std::vector<FrameId> out;
  for (auto it = keyframes_.rbegin(); it != keyframes_.rend() && out.size() < n; ++it) out.push_back(it->first);
  return out;
}

void KeyframeMap::link(Kind kind, LandmarkId id, const Observation& obs) {
  auto it = keyframes_.find(obs.keyframe);
  if (it == keyframes_.end()) fail(ErrorCode::FrameNotFound, "observation in unknown keyframe");
  auto& frame = it->second.frame;
  std::optional<LandmarkId>* slot = nullptr;
  if (kind == Kind::Point) {
    if (obs.feature < 0 || obs.feature >= static_cast<int>(frame.points.size())) {
      fail(ErrorCode::FrameNotFound, "point feature index out of range");
    }
    slot = &frame.points[obs.feature].landmark;
  } else {
    if (obs.feature < 0 || obs.feature >= static_cast<int>(frame.lines.size())) {
      fail(ErrorCode::FrameNotFound, "line feature index out of range");
    }
    slot = &frame.lines[obs.feature].landmark;
  }
  if (slot->has_value()) fail(ErrorCode::FrameMismatch, "feature already bound to a landmark");
  *slot = id;
}

void KeyframeMap::unlink(Kind kind, const Observation& obs) {
  auto it = keyframes_.find(obs.keyframe);
  if (it == keyframes_.end()) return;
  auto& frame = it->second.frame;
  if (kind == Kind::Point) frame.points[obs.feature].landmark.reset();
  else frame.lines[obs.feature].landmark.reset();
}

void KeyframeMap::bump_covisibility(const std::vector<Observation>& existing, FrameId kf, int delta) {
  for (const auto& o : existing) {
    if (o.keyframe == kf) continue;
    const auto key = std::minmax(o.keyframe, kf);
    int& c = covisibility_[{key.first, key.second}];
    c += delta;
    if (c <= 0) covisibility_.erase({key.first, key.second});
  }
}

LandmarkId KeyframeMap::add_point(const Vec3& position, const Descriptor& descriptor,
                                  const std::vector<Observation>& obs) {
  const LandmarkId id = next_id_++;
  PointLandmark lm{id, position, descriptor, {}};
  points_.emplace(id, lm);
  for (const auto& o : obs) add_observation(Kind::Point, id, o);
  return id;
}

LandmarkId KeyframeMap::add_line(const Segment3& segment, const Descriptor& descriptor,
                                 const std::vector<Observation>& obs) {
  if ((segment.end - segment.start).norm() <= 0.0) fail(ErrorCode::DegeneratePlane, "zero-length line landmark");
  const LandmarkId id = next_id_++;
  lines_.emplace(id, LineLandmark{id, segment, descriptor, {}});
  for (const auto& o : obs) add_observation(Kind::Line, id, o);
  return id;
}

void KeyframeMap::add_observation(Kind kind, LandmarkId id, const Observation& obs) {
  std::vector<Observation>* list = nullptr;
  if (kind == Kind::Point) {
    auto it = points_.find(id);
    if (it == points_.end()) fail(ErrorCode::FrameNotFound, "unknown point landmark");
    list = &it->second.observations;
  } else {
    auto it = lines_.find(id);
    if (it == lines_.end()) fail(ErrorCode::FrameNotFound, "unknown line landmark");
    list = &it->second.observations;
  }
  for (const auto& o : *list) {
    if (o.keyframe == obs.keyframe) fail(ErrorCode::FrameMismatch, "landmark already observed in keyframe");
  }
  link(kind, id, obs);
  bump_covisibility(*list, obs.keyframe, +1);
  list->push_back(obs);
}

void KeyframeMap::remove_observation(Kind kind, LandmarkId id, const Observation& obs) {
  std::vector<Observation>* list = nullptr;
  if (kind == Kind::Point) {
    auto it = points_.find(id);
    if (it == points_.end()) return;
    list = &it->second.observations;
  } else {
    auto it = lines_.find(id);
    if (it == lines_.end()) return;
    list = &it->second.observations;
  }
  auto pos = std::find(list->begin(), list->end(), obs);
  if (pos == list->end()) return;
  list->erase(pos);
  unlink(kind, obs);
  bump_covisibility(*list, obs.keyframe, -1);
}

void KeyframeMap::set_point_position(LandmarkId id, const Vec3& position) {
  auto it = points_.find(id);
  if (it == points_.end()) fail(ErrorCode::FrameNotFound, "unknown point landmark");
  it->second.position = position;
}

int KeyframeMap::cull_landmarks(const KeyframePolicy& policy) {
  const auto recent = recent_keyframes(static_cast<std::size_t>(policy.cull_window));
  // Only cull once the window is full, so young landmarks get a chance.
  if (recent.size() < static_cast<std::size_t>(policy.cull_window)) return 0;
  auto seen_recently = [&](const std::vector<Observation>& obs) {
    for (const auto& o : obs) {
      if (std::find(recent.begin(), recent.end(), o.keyframe) != recent.end()) return true;
    }
    return false;
  };
  int removed = 0;
  auto cull = [&](auto& landmarks, Kind kind) {
    for (auto it = landmarks.begin(); it != landmarks.end();) {
      const auto& obs = it->second.observations;
      if (obs.size() < 2 && !seen_recently(obs)) {
        const auto copy = obs;
        for (const auto& o : copy) remove_observation(kind, it->first, o);
        it = landmarks.erase(it);
        ++removed;
      } else {
        ++it;
      }
    }
  };
  cull(points_, Kind::Point);
  cull(lines_, Kind::Line);
  return removed;
}

const PointLandmark* KeyframeMap::point(LandmarkId id) const {
  auto it = points_.find(id);
  return it == points_.end() ? nullptr : &it->second;
}

const LineLandmark* KeyframeMap::line(LandmarkId id) const {
  auto it = lines_.find(id);
  return it == lines_.end() ? nullptr : &it->second;
}

int KeyframeMap::covisibility(FrameId a, FrameId b) const {
  const auto key = std::minmax(a, b);
  auto it = covisibility_.find({key.first, key.second});
  return it == covisibility_.end() ? 0 : it->second;
}

bool KeyframeMap::check_integrity() const {
  std::size_t bound_points = 0, bound_lines = 0;
  auto check = [&](const auto& landmarks, bool is_point, std::size_t& bound) {
    for (const auto& [id, lm] : landmarks) {
      for (const auto& o : lm.observations) {
        auto kf = keyframes_.find(o.keyframe);
        if (kf == keyframes_.end()) return false;
        const auto& frame = kf->second.frame;
        if (is_point) {
          if (o.feature < 0 || o.feature >= static_cast<int>(frame.points.size())) return false;
          if (frame.points[o.feature].landmark != id) return false;
        } else {
          if (o.feature < 0 || o.feature >= static_cast<int>(frame.lines.size())) return false;
          if (frame.lines[o.feature].landmark != id) return false;
        }
        ++bound;
      }
    }
    return true;
  };
  if (!check(points_, true, bound_points) || !check(lines_, false, bound_lines)) return false;
  // No dangling back-references from features.
  std::size_t feature_points = 0, feature_lines = 0;
  for (const auto& [id, kf] : keyframes_) {
    for (const auto& p : kf.frame.points) feature_points += p.landmark.has_value();
    for (const auto& l : kf.frame.lines) feature_lines += l.landmark.has_value();
  }
  return feature_points == bound_points && feature_lines == bound_lines;
}

}  // namespace structvo
