#include "doctest.h"

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "structvo/error.hpp"
#include "structvo/keyframe_map.hpp"

using namespace structvo;

namespace {

FrameObservations frame_with(FrameId id, int points, int lines) {
  FrameObservations f;
  f.id = id;
  f.points.resize(static_cast<std::size_t>(points));
  for (int i = 0; i < lines; ++i) f.lines.push_back({Pixel(0, i), Pixel(50, i), {}, {}});
  return f;
}

Pose pose_at(double x) { return Pose(RotationMatrix(Mat3::Identity(), FrameTag::camera(0), FrameTag::world()), Vec3(x, 0, 0)); }

}  // namespace

TEST_CASE("steady tracking inserts a keyframe every 20 frames") {
  const KeyframePolicy policy;
  std::vector<int> inserted;
  int since = 0;
  for (int frame = 1; frame <= 100; ++frame) {
    ++since;
    if (needs_keyframe(200, 200, since, policy)) {
      inserted.push_back(frame);
      since = 0;
    }
  }
  CHECK(inserted == std::vector<int>{20, 40, 60, 80, 100});
}

TEST_CASE("inlier collapse triggers an immediate keyframe") {
  const KeyframePolicy policy;
  CHECK_FALSE(needs_keyframe(100, 200, 3, policy));
  CHECK(needs_keyframe(99, 200, 3, policy));
  CHECK(needs_keyframe(0, 200, 1, policy));
}

TEST_CASE("a landmark seen once is culled after three keyframes") {
  KeyframeMap map;
  const KeyframePolicy policy;
  map.insert_keyframe(frame_with(0, 4, 1), pose_at(0));
  map.insert_keyframe(frame_with(1, 4, 1), pose_at(1));
  const LandmarkId once = map.add_point(Vec3(0, 0, 3), {}, {{0, 0}});
  const LandmarkId twice = map.add_point(Vec3(0, 1, 3), {}, {{0, 1}, {1, 1}});
  const LandmarkId line = map.add_line({Vec3(0, 0, 3), Vec3(0, 1, 3)}, {}, {{0, 0}});
  CHECK(map.covisibility(0, 1) == 1);
  CHECK(map.cull_landmarks(policy) == 0);
  map.insert_keyframe(frame_with(2, 4, 1), pose_at(2));
  CHECK(map.cull_landmarks(policy) == 0);  // keyframe 0 is still in the window
  map.insert_keyframe(frame_with(3, 4, 1), pose_at(3));
  CHECK(map.cull_landmarks(policy) == 2);
  CHECK(map.point(once) == nullptr);
  CHECK(map.line(line) == nullptr);
  CHECK(map.point(twice) != nullptr);
  CHECK_FALSE(map.keyframe(0).frame.points[0].landmark.has_value());
  CHECK(map.check_integrity());
}

TEST_CASE("map operations reject inconsistent input") {
  KeyframeMap map;
  map.insert_keyframe(frame_with(0, 2, 0), pose_at(0));
  auto code_of = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  CHECK(code_of([&] { map.insert_keyframe(frame_with(0, 1, 0), pose_at(0)); }) == ErrorCode::FrameMismatch);
  CHECK(code_of([&] { map.add_point(Vec3::Zero(), {}, {{5, 0}}); }) == ErrorCode::FrameNotFound);
  CHECK(code_of([&] { map.add_point(Vec3::Zero(), {}, {{0, 7}}); }) == ErrorCode::FrameNotFound);
  const LandmarkId id = map.add_point(Vec3::Zero(), {}, {{0, 0}});
  CHECK(code_of([&] { map.add_observation(KeyframeMap::Kind::Point, id, {0, 1}); }) == ErrorCode::FrameMismatch);
  CHECK(code_of([&] { map.add_point(Vec3::Zero(), {}, {{0, 0}}); }) == ErrorCode::FrameMismatch);
  CHECK(code_of([&] { map.keyframe(9); }) == ErrorCode::FrameNotFound);
}

namespace {

// Naive reference: landmarks with observation lists, nothing else.
struct ReferenceMap {
  std::set<FrameId> keyframes;
  std::map<LandmarkId, std::pair<KeyframeMap::Kind, std::vector<Observation>>> landmarks;

  int covisibility(FrameId a, FrameId b) const {
    int c = 0;
    for (const auto& [id, entry] : landmarks) {
      bool in_a = false, in_b = false;
      for (const auto& o : entry.second) {
        in_a |= o.keyframe == a;
        in_b |= o.keyframe == b;
      }
      c += (in_a && in_b) ? 1 : 0;
    }
    return c;
  }

  void cull(int window) {
    if (static_cast<int>(keyframes.size()) < window) return;
    std::set<FrameId> recent;
    auto it = keyframes.rbegin();
    for (int i = 0; i < window; ++i, ++it) recent.insert(*it);
    for (auto lm = landmarks.begin(); lm != landmarks.end();) {
      const auto& obs = lm->second.second;
      const bool seen = std::any_of(obs.begin(), obs.end(), [&](const Observation& o) { return recent.count(o.keyframe); });
      if (obs.size() < 2 && !seen) lm = landmarks.erase(lm);
      else ++lm;
    }
  }
};

bool same(const KeyframeMap& map, const ReferenceMap& ref) {
  std::size_t count = 0;
  for (const auto& [id, entry] : ref.landmarks) {
    const auto* obs = entry.first == KeyframeMap::Kind::Point
                          ? (map.point(id) ? &map.point(id)->observations : nullptr)
                          : (map.line(id) ? &map.line(id)->observations : nullptr);
    if (!obs) return false;
    auto a = *obs, b = entry.second;
    const auto order = [](const Observation& x, const Observation& y) {
      return std::tie(x.keyframe, x.feature) < std::tie(y.keyframe, y.feature);
    };
    std::sort(a.begin(), a.end(), order);
    std::sort(b.begin(), b.end(), order);
    if (a != b) return false;
    ++count;
  }
  if (count != map.points().size() + map.lines().size()) return false;
  for (FrameId a : ref.keyframes) {
    for (FrameId b : ref.keyframes) {
      if (a < b && map.covisibility(a, b) != ref.covisibility(a, b)) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("random interleavings keep the map consistent with a naive reference") {
  constexpr int kPoints = 12, kLines = 4;
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    std::mt19937_64 rng(seed);
    KeyframeMap map;
    ReferenceMap ref;
    const KeyframePolicy policy;
    FrameId next_frame = 0;
    auto pick = [&](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
    auto free_feature = [&](KeyframeMap::Kind kind, FrameId kf) -> int {
      const auto& f = map.keyframe(kf).frame;
      std::vector<int> free;
      if (kind == KeyframeMap::Kind::Point) {
        for (int i = 0; i < static_cast<int>(f.points.size()); ++i) {
          if (!f.points[static_cast<std::size_t>(i)].landmark) free.push_back(i);
        }
      } else {
        for (int i = 0; i < static_cast<int>(f.lines.size()); ++i) {
          if (!f.lines[static_cast<std::size_t>(i)].landmark) free.push_back(i);
        }
      }
      return free.empty() ? -1 : free[static_cast<std::size_t>(pick(static_cast<int>(free.size())))];
    };
    for (int step = 0; step < 400; ++step) {
      const int op = pick(10);
      std::vector<FrameId> kfs(ref.keyframes.begin(), ref.keyframes.end());
      if (op == 0 || kfs.empty()) {
        map.insert_keyframe(frame_with(next_frame, kPoints, kLines), pose_at(static_cast<double>(next_frame)));
        ref.keyframes.insert(next_frame++);
      } else if (op <= 4) {
        const auto kind = pick(4) == 0 ? KeyframeMap::Kind::Line : KeyframeMap::Kind::Point;
        std::vector<Observation> obs;
        std::shuffle(kfs.begin(), kfs.end(), rng);
        const int n = 1 + pick(std::min<int>(3, static_cast<int>(kfs.size())));
        for (int i = 0; i < n; ++i) {
          const int f = free_feature(kind, kfs[static_cast<std::size_t>(i)]);
          if (f >= 0) obs.push_back({kfs[static_cast<std::size_t>(i)], f});
        }
        if (obs.empty()) continue;
        const LandmarkId id = kind == KeyframeMap::Kind::Point
                                  ? map.add_point(Vec3(1, 2, 3), {}, obs)
                                  : map.add_line({Vec3(0, 0, 3), Vec3(0, 1, 3)}, {}, obs);
        ref.landmarks[id] = {kind, obs};
      } else if (op <= 6 && !ref.landmarks.empty()) {
        auto it = std::next(ref.landmarks.begin(), pick(static_cast<int>(ref.landmarks.size())));
        const FrameId kf = kfs[static_cast<std::size_t>(pick(static_cast<int>(kfs.size())))];
        auto& obs = it->second.second;
        if (std::any_of(obs.begin(), obs.end(), [&](const Observation& o) { return o.keyframe == kf; })) continue;
        const int f = free_feature(it->second.first, kf);
        if (f < 0) continue;
        map.add_observation(it->second.first, it->first, {kf, f});
        obs.push_back({kf, f});
      } else if (op == 7 && !ref.landmarks.empty()) {
        auto it = std::next(ref.landmarks.begin(), pick(static_cast<int>(ref.landmarks.size())));
        auto& obs = it->second.second;
        if (obs.empty()) continue;
        const Observation o = obs[static_cast<std::size_t>(pick(static_cast<int>(obs.size())))];
        map.remove_observation(it->second.first, it->first, o);
        obs.erase(std::find(obs.begin(), obs.end(), o));
      } else {
        map.cull_landmarks(policy);
        ref.cull(policy.cull_window);
      }
      REQUIRE(map.check_integrity());
      REQUIRE(same(map, ref));
    }
  }
}
