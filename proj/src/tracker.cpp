#include "structvo/tracker.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <future>
#include <set>
#include <unordered_set>

#include "structvo/error.hpp"

namespace structvo {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

constexpr double kNear = 0.05;
constexpr std::size_t kMaxPendingFrames = 60;

Mat3 rotation_homography(const CameraIntrinsics& k, const Mat3& r) {
  const Mat3 km = k.matrix();
  return km * r * km.inverse();
}

Pixel warp(const Mat3& h, const Pixel& p) {
  const Vec3 q = h * Vec3(p.x(), p.y(), 1.0);
  if (!(q.z() > 1e-9)) return Pixel(-1e9, -1e9);
  return q.head<2>() / q.z();
}

FrameObservations warp_frame(const FrameObservations& f, const Mat3& h) {
  FrameObservations out = f;
  for (auto& p : out.points) p.pixel = warp(h, p.pixel);
  for (auto& l : out.lines) {
    l.start = warp(h, l.start);
    l.end = warp(h, l.end);
  }
  return out;
}

double median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

bool recoverable(const Error& e) {
  switch (e.code()) {
    case ErrorCode::IllPosed:
    case ErrorCode::Diverged:
    case ErrorCode::NonPositiveDepth:
    case ErrorCode::DegenerateLine:
      return true;
    default:
      return false;
  }
}

/// Part of a world segment inside the camera frustum (depth >= kNear and
/// within the image bounds), clipped parametrically. Returned in camera
/// coordinates.
std::optional<std::pair<Vec3, Vec3>> frustum_clip(const Segment3& s, const Pose& cam_from_world,
                                                  const CameraIntrinsics& k) {
  const Vec3 a = cam_from_world * s.start;
  const Vec3 d = cam_from_world * s.end - a;
  // Half-spaces n.p + c >= 0: near plane and the four image-border planes.
  const std::array<std::pair<Vec3, double>, 5> planes{{
      {Vec3(0.0, 0.0, 1.0), -kNear},
      {Vec3(k.fx, 0.0, k.cx), 0.0},
      {Vec3(-k.fx, 0.0, k.width - k.cx), 0.0},
      {Vec3(0.0, k.fy, k.cy), 0.0},
      {Vec3(0.0, -k.fy, k.height - k.cy), 0.0},
  }};
  double lo = 0.0, hi = 1.0;
  for (const auto& [n, c] : planes) {
    const double f0 = n.dot(a) + c;
    const double df = n.dot(d);
    if (std::abs(df) < 1e-15) {
      if (f0 < 0.0) return std::nullopt;
      continue;
    }
    const double u = -f0 / df;
    if (df > 0.0) lo = std::max(lo, u);
    else hi = std::min(hi, u);
    if (lo >= hi) return std::nullopt;
  }
  return std::make_pair(Vec3(a + lo * d), Vec3(a + hi * d));
}

struct Candidates {
  std::vector<LandmarkId> point_ids;
  std::vector<Descriptor> point_desc;
  std::vector<LandmarkId> line_ids;
  std::vector<Descriptor> line_desc;
};

/// Matches landmark candidates to the frame. radius < 0 disables the
/// geometric gate (descriptor-only matching).
LandmarkMatches match_candidates(const KeyframeMap& map, const Candidates& c, const FrameObservations& cur,
                                 const Pose& cam_from_world, const CameraIntrinsics& k, MatchOptions opts,
                                 double radius, bool use_lines) {
  LandmarkMatches out;
  const bool gated = radius >= 0.0;
  opts.radius = gated ? radius : 0.0;

  std::vector<PointFeature> pseudo;
  std::vector<Pixel> predicted;
  std::vector<const PointLandmark*> lms;
  for (std::size_t i = 0; i < c.point_ids.size(); ++i) {
    const PointLandmark* lm = map.point(c.point_ids[i]);
    if (lm == nullptr) continue;
    Pixel px(0.0, 0.0);
    if (gated) {
      const Vec3 pc = cam_from_world * lm->position;
      if (pc.z() < kNear) continue;
      px = project(pc, k);
      if (!k.in_bounds(px, -radius)) continue;
    }
    pseudo.push_back({px, c.point_desc[i], lm->id});
    predicted.push_back(px);
    lms.push_back(lm);
  }
  std::vector<Match> pm;
  if (gated) {
    pm = match_points(pseudo, cur.points, opts, predicted);
  } else {
    std::vector<Descriptor> da, db;
    for (const auto& p : pseudo) da.push_back(p.descriptor);
    for (const auto& p : cur.points) db.push_back(p.descriptor);
    pm = match_descriptors(da, db, [](int, int) { return true; }, opts);
  }
  for (const Match& m : pm) {
    out.points.push_back({cur.points[static_cast<std::size_t>(m.b)].pixel, lms[static_cast<std::size_t>(m.a)]->position});
    out.point_links.emplace_back(m.b, lms[static_cast<std::size_t>(m.a)]->id);
  }
  if (!use_lines) return out;

  std::vector<LineFeature> pseudo_l;
  std::vector<const LineLandmark*> lls;
  std::vector<Segment3> anchors_of;
  for (std::size_t i = 0; i < c.line_ids.size(); ++i) {
    const LineLandmark* lm = map.line(c.line_ids[i]);
    if (lm == nullptr) continue;
    // Residual anchors are the visible part of the landmark, so no anchor
    // sits at or behind the camera plane.
    const auto visible = frustum_clip(lm->segment, cam_from_world, k);
    if (!visible) continue;
    const Pose world_from_cam = inverse(cam_from_world);
    const Segment3 anchors{world_from_cam * visible->first, world_from_cam * visible->second};
    LineFeature f;
    if (gated) {
      f.start = project(visible->first, k);
      f.end = project(visible->second, k);
      if ((f.end - f.start).norm() < 1.0) continue;
    }
    f.descriptor = c.line_desc[i];
    pseudo_l.push_back(f);
    lls.push_back(lm);
    anchors_of.push_back(anchors);
  }
  std::vector<Match> lm_matches;
  if (gated) {
    lm_matches = match_lines(pseudo_l, cur.lines, opts);
  } else {
    std::vector<Descriptor> da, db;
    for (const auto& l : pseudo_l) da.push_back(l.descriptor);
    for (const auto& l : cur.lines) db.push_back(l.descriptor);
    lm_matches = match_descriptors(da, db, [](int, int) { return true; }, opts);
  }
  for (const Match& m : lm_matches) {
    const LineFeature& obs = cur.lines[static_cast<std::size_t>(m.b)];
    Vec3 l;
    try {
      l = line_function(obs.start, obs.end);
    } catch (const Error&) {
      continue;
    }
    const LineLandmark* lm = lls[static_cast<std::size_t>(m.a)];
    const Segment3& anchor = anchors_of[static_cast<std::size_t>(m.a)];
    out.lines.push_back({l, anchor.start});
    out.lines.push_back({l, anchor.end});
    out.line_links.emplace_back(m.b, lm->id);
  }
  return out;
}

/// Union of match sets; the first set wins on feature or landmark conflicts.
LandmarkMatches merge(const std::vector<LandmarkMatches>& sets) {
  LandmarkMatches out;
  std::set<int> pf, lf;
  std::set<LandmarkId> pl, ll;
  for (const auto& s : sets) {
    for (std::size_t i = 0; i < s.point_links.size(); ++i) {
      const auto& [f, id] = s.point_links[i];
      if (pf.count(f) || pl.count(id)) continue;
      pf.insert(f);
      pl.insert(id);
      out.point_links.push_back(s.point_links[i]);
      out.points.push_back(s.points[i]);
    }
    for (std::size_t i = 0; i < s.line_links.size(); ++i) {
      const auto& [f, id] = s.line_links[i];
      if (lf.count(f) || ll.count(id)) continue;
      lf.insert(f);
      ll.insert(id);
      out.line_links.push_back(s.line_links[i]);
      out.lines.push_back(s.lines[2 * i]);
      out.lines.push_back(s.lines[2 * i + 1]);
    }
  }
  return out;
}

int scalar_residuals(const LandmarkMatches& m) { return static_cast<int>(2 * m.points.size() + m.lines.size()); }

}  // namespace

std::string to_string(TrackMode mode) {
  switch (mode) {
    case TrackMode::Manhattan:
      return "manhattan";
    case TrackMode::FrameToFrame:
      return "frame_to_frame";
    case TrackMode::KeyframeFallback:
      return "keyframe_fallback";
  }
  return "unknown";
}

Pose make_cam_from_world(const Mat3& r, const Vec3& t, FrameId id, double timestamp) {
  return {RotationMatrix(r, FrameTag::world(), FrameTag::camera(id)), t, timestamp};
}

Tracker::Tracker(TrackerConfig cfg, CameraIntrinsics k, const NormalProvider& normals, CameraIntrinsics normal_k)
    : cfg_(std::move(cfg)), k_(k), normals_(normals), normal_k_(normal_k) {
  k_.validate();
  normal_k_.validate();
  if (cfg_.min_inliers < 1 || cfg_.window < 1 || cfg_.local_map_keyframes < 1) {
    fail(ErrorCode::ConfigError, "min_inliers, window and local_map_keyframes must be positive");
  }
}

Mat3 Tracker::estimate_rotation(FrameId id, const Mat3& init) const {
  const NormalMap map = normals_.provide(id);
  MeanShiftConfig c = cfg_.manhattan;
  c.stride = std::max(1, static_cast<int>(std::lround(static_cast<double>(c.stride) * map.width() / k_.width)));
  const ManhattanFrame f =
      estimate_manhattan_rotation(map, {}, RotationMatrix(init, FrameTag::manhattan(), FrameTag::camera(id)), c);
  return align_axes_to(f.rotation.matrix(), init);
}

std::vector<TrackResult> Tracker::process(const FrameObservations& frame) {
  if (!initialized_) return try_initialize(frame);
  return {track_frame(frame)};
}

std::vector<TrackResult> Tracker::try_initialize(const FrameObservations& frame) {
  Mat3 r_cm;
  try {
    if (pending_.empty()) {
      const NormalMap map = normals_.provide(frame.id);
      MeanShiftConfig c = cfg_.manhattan;
      c.stride = std::max(1, static_cast<int>(std::lround(static_cast<double>(c.stride) * map.width() / k_.width)));
      r_cm = initialize_from_identity(map, c).rotation.matrix();
    } else {
      r_cm = estimate_rotation(frame.id, pending_.back().r_cm);
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InsufficientSupport) throw;
    pending_.clear();
    return {};
  }
  auto defer = [&] {
    pending_.push_back({frame, r_cm});
    if (pending_.size() > kMaxPendingFrames) pending_.erase(pending_.begin());
    return std::vector<TrackResult>{};
  };
  if (pending_.empty()) return defer();

  const Pending ref = pending_.front();
  const Mat3 r_rel = nearest_rotation_matrix(r_cm * ref.r_cm.transpose());
  const FrameObservations warped = warp_frame(ref.obs, rotation_homography(k_, r_rel));
  MatchOptions mo = cfg_.matching;
  mo.radius = cfg_.init_match_radius_px;
  FrameMatches matches = match_features(warped, frame, mo);
  if (!cfg_.use_lines) matches.lines.clear();

  std::vector<Correspondence2D> cs;
  std::vector<double> parallax;
  for (const Match& m : matches.points) {
    cs.push_back({ref.obs.points[static_cast<std::size_t>(m.a)].pixel, frame.points[static_cast<std::size_t>(m.b)].pixel, {}});
    parallax.push_back((warped.points[static_cast<std::size_t>(m.a)].pixel - frame.points[static_cast<std::size_t>(m.b)].pixel).norm());
  }
  const std::size_t n_point_cs = cs.size();
  for (const Match& m : matches.lines) {
    const LineFeature& a = ref.obs.lines[static_cast<std::size_t>(m.a)];
    const LineFeature& wa = warped.lines[static_cast<std::size_t>(m.a)];
    const LineFeature& b = frame.lines[static_cast<std::size_t>(m.b)];
    const bool flip = (wa.start - b.start).norm() + (wa.end - b.end).norm() >
                      (wa.start - b.end).norm() + (wa.end - b.start).norm();
    const Pixel ends_a[2] = {a.start, a.end};
    const Pixel ends_w[2] = {wa.start, wa.end};
    const Pixel ends_b[2] = {flip ? b.end : b.start, flip ? b.start : b.end};
    for (int i = 0; i < 2; ++i) {
      if (!k_.in_bounds(ends_a[i], cfg_.border_margin_px) || !k_.in_bounds(ends_b[i], cfg_.border_margin_px)) continue;
      cs.push_back({ends_a[i], ends_b[i], {}});
      parallax.push_back((ends_w[i] - ends_b[i]).norm());
    }
  }
  if (parallax.empty() || median(parallax) < cfg_.init_min_parallax_px) return defer();

  const RotationMatrix rel(r_rel, FrameTag::camera(ref.obs.id), FrameTag::camera(frame.id));
  std::optional<TranslationEstimate> te;
  try {
    te = solve_translation(cs, rel, k_);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateTranslation && e.code() != ErrorCode::TooFewCorrespondences) throw;
    return defer();
  }
  FrameMatches kept;
  for (std::size_t i = 0; i < matches.points.size(); ++i) {
    if (i < n_point_cs && te->inliers[i]) kept.points.push_back(matches.points[i]);
  }
  kept.lines = matches.lines;
  std::optional<InitialMap> im;
  try {
    im = initialize_map(ref.obs, frame, kept, rel, te->direction.vec(), k_, cfg_.init);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InitializationFailed) throw;
    return defer();
  }

  // World = Manhattan frame; the reference camera sits at the origin and
  // the baseline to the initializing frame has unit length.
  const Pose ref_cw = make_cam_from_world(ref.r_cm, Vec3::Zero(), ref.obs.id, ref.obs.timestamp);
  const Pose cur_cw = make_cam_from_world(r_cm, te->direction.vec(), frame.id, frame.timestamp);
  map_ = KeyframeMap{};
  map_.insert_keyframe(ref.obs, inverse(ref_cw));
  map_.insert_keyframe(frame, inverse(cur_cw));
  const Mat3 w_from_c1 = ref.r_cm.transpose();
  for (const InitialPoint& p : im->points) {
    map_.add_point(w_from_c1 * p.position, frame.points[static_cast<std::size_t>(p.feature2)].descriptor,
                   {{ref.obs.id, p.feature1}, {frame.id, p.feature2}});
  }
  for (const InitialLine& l : im->lines) {
    map_.add_line({w_from_c1 * l.segment.start, w_from_c1 * l.segment.end},
                  frame.lines[static_cast<std::size_t>(l.feature2)].descriptor,
                  {{ref.obs.id, l.feature1}, {frame.id, l.feature2}});
  }
  initialized_ = true;

  const int point_inl = static_cast<int>(im->points.size());
  const int line_inl = 2 * static_cast<int>(im->lines.size());
  std::vector<TrackResult> results;
  TrackResult first;
  first.frame = ref.obs.id;
  first.pose = inverse(ref_cw);
  first.point_inliers = point_inl;
  first.line_inliers = line_inl;
  first.accepted = first.inliers() >= cfg_.min_inliers;
  first.manhattan_rotation = ref.r_cm;
  results.push_back(first);

  std::vector<Pending> middle(pending_.begin() + 1, pending_.end());
  pending_.clear();
  recent_.clear();
  auto filled = backfill(middle, ref_cw, cur_cw);
  results.insert(results.end(), filled.begin(), filled.end());

  TrackResult last = first;
  last.frame = frame.id;
  last.pose = inverse(cur_cw);
  last.manhattan_rotation = r_cm;
  results.push_back(last);

  recent_.push_back({map_.keyframe(frame.id).frame, cur_cw, r_cm});
  while (static_cast<int>(recent_.size()) > cfg_.window) recent_.pop_front();
  last_manhattan_ = r_cm;
  frames_since_keyframe_ = 0;
  reference_inliers_ = last.inliers();
  return results;
}

std::vector<TrackResult> Tracker::backfill(const std::vector<Pending>& frames, const Pose& first, const Pose& last) {
  std::vector<TrackResult> out;
  const Vec3 c0 = -(first.R().transpose() * first.t());
  const Vec3 c1 = -(last.R().transpose() * last.t());
  const double t0 = first.timestamp(), t1 = last.timestamp();
  for (const Pending& p : frames) {
    const auto start = Clock::now();
    const double alpha = t1 > t0 ? (p.obs.timestamp - t0) / (t1 - t0) : 0.5;
    const Vec3 c = (1.0 - alpha) * c0 + alpha * c1;
    const Pose predicted = make_cam_from_world(p.r_cm, -(p.r_cm * c), p.obs.id, p.obs.timestamp);
    TrackResult r;
    r.frame = p.obs.id;
    r.pose = inverse(predicted);
    r.backfilled = true;
    r.manhattan_rotation = p.r_cm;
    try {
      LandmarkMatches m = match_local_map(p.obs, predicted, 1.5 * cfg_.matching.radius);
      TranslationProblem tp{p.r_cm, m.points, m.lines, cfg_.scales, predicted.t(), k_};
      const TranslationSolution sol = solve_translation_lm(tp, cfg_.lm);
      const Pose pose = make_cam_from_world(p.r_cm, sol.t, p.obs.id, p.obs.timestamp);
      Attempt a = validate(p.obs, pose);
      if (a.inliers.total() >= cfg_.min_inliers) {
        const Pose refined = refine(pose, a.local, a.inliers);
        r.pose = inverse(refined);
        r.point_inliers = a.inliers.point_inliers;
        r.line_inliers = a.inliers.line_inliers;
        r.accepted = r.inliers() >= cfg_.min_inliers;
        if (r.accepted) {
          FrameState st{p.obs, refined, p.r_cm};
          for (auto& f : st.obs.points) f.landmark.reset();
          for (auto& f : st.obs.lines) f.landmark.reset();
          for (std::size_t i = 0; i < a.local.point_links.size(); ++i) {
            if (a.inliers.points[i]) st.obs.points[static_cast<std::size_t>(a.local.point_links[i].first)].landmark = a.local.point_links[i].second;
          }
          for (std::size_t i = 0; i < a.local.line_links.size(); ++i) {
            if (a.inliers.lines[2 * i] && a.inliers.lines[2 * i + 1]) {
              st.obs.lines[static_cast<std::size_t>(a.local.line_links[i].first)].landmark = a.local.line_links[i].second;
            }
          }
          recent_.push_back(std::move(st));
          while (static_cast<int>(recent_.size()) > cfg_.window) recent_.pop_front();
        }
      }
    } catch (const Error& e) {
      if (!recoverable(e)) throw;
    }
    r.timing.total_ms = ms_since(start);
    out.push_back(r);
  }
  return out;
}

LandmarkMatches Tracker::match_previous(const FrameState& prev, const FrameObservations& cur, const Pose& predicted,
                                        double radius) const {
  Candidates c;
  for (const auto& p : prev.obs.points) {
    if (p.landmark) {
      c.point_ids.push_back(*p.landmark);
      c.point_desc.push_back(p.descriptor);
    }
  }
  for (const auto& l : prev.obs.lines) {
    if (l.landmark) {
      c.line_ids.push_back(*l.landmark);
      c.line_desc.push_back(l.descriptor);
    }
  }
  return match_candidates(map_, c, cur, predicted, k_, cfg_.matching, radius, cfg_.use_lines);
}

LandmarkMatches Tracker::match_local_map(const FrameObservations& cur, const Pose& cam_from_world,
                                         double radius) const {
  std::set<LandmarkId> pts, lns;
  for (FrameId kf : map_.recent_keyframes(static_cast<std::size_t>(cfg_.local_map_keyframes))) {
    const Keyframe& k = map_.keyframe(kf);
    for (const auto& p : k.frame.points) {
      if (p.landmark) pts.insert(*p.landmark);
    }
    for (const auto& l : k.frame.lines) {
      if (l.landmark) lns.insert(*l.landmark);
    }
  }
  Candidates c;
  for (LandmarkId id : pts) {
    if (const PointLandmark* lm = map_.point(id)) {
      c.point_ids.push_back(id);
      c.point_desc.push_back(lm->descriptor);
    }
  }
  for (LandmarkId id : lns) {
    if (const LineLandmark* lm = map_.line(id)) {
      c.line_ids.push_back(id);
      c.line_desc.push_back(lm->descriptor);
    }
  }
  return match_candidates(map_, c, cur, cam_from_world, k_, cfg_.matching, radius, cfg_.use_lines);
}

LandmarkMatches Tracker::match_keyframe_descriptors(const FrameObservations& cur) const {
  const auto ids = map_.recent_keyframes(1);
  if (ids.empty()) return {};
  FrameState kf{map_.keyframe(ids.front()).frame, Pose::identity(FrameTag::world()), std::nullopt};
  Candidates c;
  for (const auto& p : kf.obs.points) {
    if (p.landmark) {
      c.point_ids.push_back(*p.landmark);
      c.point_desc.push_back(p.descriptor);
    }
  }
  for (const auto& l : kf.obs.lines) {
    if (l.landmark) {
      c.line_ids.push_back(*l.landmark);
      c.line_desc.push_back(l.descriptor);
    }
  }
  return match_candidates(map_, c, cur, kf.cam_from_world, k_, cfg_.matching, -1.0, cfg_.use_lines);
}

Tracker::Attempt Tracker::validate(const FrameObservations& cur, const Pose& cam_from_world) const {
  Attempt a{cam_from_world, match_local_map(cur, cam_from_world, cfg_.validation_radius_px), {}};
  a.inliers = classify_inliers(cam_from_world, a.local.points, a.local.lines, cfg_.scales, k_);
  return a;
}

std::optional<Tracker::Attempt> Tracker::fallback_stage(const FrameObservations& cur, const LandmarkMatches& matches,
                                                        const Pose& start) const {
  if (scalar_residuals(matches) < 6) return std::nullopt;
  try {
    const PoseSolution sol = solve_pose_lm({start, matches.points, matches.lines, cfg_.scales, k_}, cfg_.lm);
    Attempt a = validate(cur, make_cam_from_world(sol.pose.R(), sol.pose.t(), cur.id, cur.timestamp));
    if (a.inliers.total() >= cfg_.min_inliers) return a;
  } catch (const Error& e) {
    if (!recoverable(e)) throw;
  }
  return std::nullopt;
}

Pose Tracker::refine(const Pose& start, LandmarkMatches& local, InlierSet& inliers) const {
  try {
    const PoseSolution sol = solve_pose_lm({start, local.points, local.lines, cfg_.scales, k_}, cfg_.lm);
    const Pose refined = make_cam_from_world(sol.pose.R(), sol.pose.t(), start.target().index, start.timestamp());
    const InlierSet after = classify_inliers(refined, local.points, local.lines, cfg_.scales, k_);
    if (after.total() >= cfg_.min_inliers && after.total() >= inliers.total() / 2) {
      inliers = after;
      return refined;
    }
  } catch (const Error& e) {
    if (!recoverable(e)) throw;
  }
  return start;
}

TrackResult Tracker::track_frame(const FrameObservations& cur) {
  if (!initialized_ || recent_.empty()) fail(ErrorCode::TrackingLost, "tracker is not initialized");
  const auto start = Clock::now();
  TrackResult r;
  r.frame = cur.id;
  const FrameState& prev = recent_.back();
  const Mat3 rot_init = last_manhattan_.value_or(prev.cam_from_world.R());

  // (1) Manhattan rotation, concurrently with gathering the window candidates.
  auto rotation_job = [this, &cur, rot_init]() -> std::optional<Mat3> {
    try {
      return estimate_rotation(cur.id, rot_init);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InsufficientSupport) throw;
      return std::nullopt;
    }
  };
  std::future<std::optional<Mat3>> rotation_future;
  if (cfg_.parallel_rotation) rotation_future = std::async(std::launch::async, rotation_job);
  const Vec3 c_prev = -(prev.cam_from_world.R().transpose() * prev.cam_from_world.t());
  const std::size_t window = std::min(recent_.size(), static_cast<std::size_t>(cfg_.window));
  const std::optional<Mat3> r_cm = cfg_.parallel_rotation ? rotation_future.get() : rotation_job();
  r.timing.rotation_ms = ms_since(start);

  std::optional<Attempt> accepted;
  std::vector<LandmarkMatches> window_matches;
  if (r_cm) {
    const auto t1 = Clock::now();
    const Pose predicted = make_cam_from_world(*r_cm, -(*r_cm * c_prev), cur.id, cur.timestamp);
    // (2) Translation against the previous frames of the window.
    for (std::size_t j = 0; j < window; ++j) {
      window_matches.push_back(match_previous(recent_[recent_.size() - 1 - j], cur, predicted, cfg_.matching.radius));
    }
    const LandmarkMatches merged = merge(window_matches);
    try {
      TranslationProblem tp{*r_cm, merged.points, merged.lines, cfg_.scales, predicted.t(), k_};
      const TranslationSolution sol = solve_translation_lm(tp, cfg_.lm);
      r.timing.translation_ms = ms_since(t1);
      // (3) Local-map validation.
      const auto t2 = Clock::now();
      Attempt a = validate(cur, make_cam_from_world(*r_cm, sol.t, cur.id, cur.timestamp));
      r.timing.validation_ms = ms_since(t2);
      if (a.inliers.total() >= cfg_.min_inliers) {
        accepted = std::move(a);
        r.mode = TrackMode::Manhattan;
        r.manhattan_rotation = *r_cm;
      }
    } catch (const Error& e) {
      if (!recoverable(e)) throw;
    }
  }

  // (4) Fallbacks: reprojection-guided frame-to-frame, then keyframe descriptors.
  if (!accepted) {
    window_matches.clear();
    const Pose last = make_cam_from_world(prev.cam_from_world.R(), prev.cam_from_world.t(), cur.id, cur.timestamp);
    const LandmarkMatches m1 = match_previous(prev, cur, last, cfg_.matching.radius);
    accepted = fallback_stage(cur, m1, last);
    r.mode = TrackMode::FrameToFrame;
    if (accepted) {
      window_matches.push_back(m1);
    } else {
      const LandmarkMatches m2 = match_keyframe_descriptors(cur);
      accepted = fallback_stage(cur, m2, last);
      r.mode = TrackMode::KeyframeFallback;
      if (accepted) window_matches.push_back(m2);
    }
    if (!accepted) {
      fail(ErrorCode::TrackingLost, "frame " + std::to_string(cur.id) + ": all tracking paths rejected");
    }
  }

  // (5) 6-DoF local-map refinement with rotation free.
  const auto t3 = Clock::now();
  const Pose final_pose = refine(accepted->cam_from_world, accepted->local, accepted->inliers);
  r.timing.refinement_ms = ms_since(t3);
  r.pose = inverse(final_pose);
  r.point_inliers = accepted->inliers.point_inliers;
  r.line_inliers = accepted->inliers.line_inliers;
  r.accepted = r.inliers() >= cfg_.min_inliers;
  if (!r.accepted) fail(ErrorCode::TrackingLost, "frame " + std::to_string(cur.id) + ": inlier gate failed");
  commit(cur, final_pose, r.mode == TrackMode::Manhattan ? r_cm : std::nullopt, accepted->local, accepted->inliers,
         window_matches);
  r.timing.total_ms = ms_since(start);
  return r;
}

void Tracker::commit(const FrameObservations& cur, const Pose& cam_from_world, const std::optional<Mat3>& manhattan,
                     const LandmarkMatches& local, const InlierSet& inliers,
                     const std::vector<LandmarkMatches>& extra) {
  FrameState st{cur, cam_from_world, manhattan};
  for (auto& f : st.obs.points) f.landmark.reset();
  for (auto& f : st.obs.lines) f.landmark.reset();
  std::unordered_set<LandmarkId> used;
  auto link_point = [&](int feature, LandmarkId id) {
    auto& f = st.obs.points[static_cast<std::size_t>(feature)];
    if (f.landmark || used.count(id)) return;
    f.landmark = id;
    used.insert(id);
  };
  auto link_line = [&](int feature, LandmarkId id) {
    auto& f = st.obs.lines[static_cast<std::size_t>(feature)];
    if (f.landmark || used.count(id)) return;
    f.landmark = id;
    used.insert(id);
  };
  for (std::size_t i = 0; i < local.point_links.size(); ++i) {
    if (inliers.points[i]) link_point(local.point_links[i].first, local.point_links[i].second);
  }
  for (std::size_t i = 0; i < local.line_links.size(); ++i) {
    if (inliers.lines[2 * i] && inliers.lines[2 * i + 1]) link_line(local.line_links[i].first, local.line_links[i].second);
  }
  for (const LandmarkMatches& m : extra) {
    const InlierSet in = classify_inliers(cam_from_world, m.points, m.lines, cfg_.scales, k_);
    for (std::size_t i = 0; i < m.point_links.size(); ++i) {
      if (in.points[i]) link_point(m.point_links[i].first, m.point_links[i].second);
    }
    for (std::size_t i = 0; i < m.line_links.size(); ++i) {
      if (in.lines[2 * i] && in.lines[2 * i + 1]) link_line(m.line_links[i].first, m.line_links[i].second);
    }
  }
  if (manhattan) last_manhattan_ = manhattan;
  else last_manhattan_.reset();

  recent_.push_back(std::move(st));
  while (static_cast<int>(recent_.size()) > cfg_.window) recent_.pop_front();
  ++frames_since_keyframe_;
  if (needs_keyframe(inliers.total(), reference_inliers_, frames_since_keyframe_, cfg_.keyframes)) {
    insert_keyframe(recent_.back());
  }
}

void Tracker::insert_keyframe(const FrameState& state) {
  const FrameId id = state.obs.id;
  map_.insert_keyframe(state.obs, inverse(state.cam_from_world));
  for (std::size_t i = 0; i < state.obs.points.size(); ++i) {
    const auto& lm = state.obs.points[i].landmark;
    if (lm && map_.point(*lm)) map_.add_observation(KeyframeMap::Kind::Point, *lm, {id, static_cast<int>(i)});
  }
  for (std::size_t i = 0; i < state.obs.lines.size(); ++i) {
    const auto& lm = state.obs.lines[i].landmark;
    if (lm && map_.line(*lm)) map_.add_observation(KeyframeMap::Kind::Line, *lm, {id, static_cast<int>(i)});
  }
  const auto ids = map_.recent_keyframes(2);
  if (ids.size() == 2) triangulate_new(ids[1], ids[0]);
  map_.cull_landmarks(cfg_.keyframes);

  const FrameObservations& stored = map_.keyframe(id).frame;
  int linked = 0;
  for (const auto& p : stored.points) linked += p.landmark ? 1 : 0;
  for (const auto& l : stored.lines) linked += l.landmark ? 2 : 0;
  reference_inliers_ = linked;
  frames_since_keyframe_ = 0;
  recent_.back().obs = stored;
}

int Tracker::triangulate_new(FrameId older, FrameId newer) {
  const Keyframe& a = map_.keyframe(older);
  const Keyframe& b = map_.keyframe(newer);
  const Pose& wa = a.world_from_camera;
  const Pose& wb = b.world_from_camera;
  // x_b = r_ba x_a + t_ba
  const Mat3 r_ba = wb.R().transpose() * wa.R();
  const Vec3 t_ba = wb.R().transpose() * (wa.t() - wb.t());
  const Mat3 kinv = k_.matrix().inverse();
  const Mat3 f = kinv.transpose() * skew(t_ba) * r_ba * kinv;
  const Mat3 h = rotation_homography(k_, r_ba);
  const Pose cam_b = inverse(wb);
  const Pose cam_a = inverse(wa);

  std::vector<int> ia, ib;
  std::vector<Descriptor> da, db;
  for (std::size_t i = 0; i < a.frame.points.size(); ++i) {
    if (!a.frame.points[i].landmark) {
      ia.push_back(static_cast<int>(i));
      da.push_back(a.frame.points[i].descriptor);
    }
  }
  for (std::size_t i = 0; i < b.frame.points.size(); ++i) {
    if (!b.frame.points[i].landmark) {
      ib.push_back(static_cast<int>(i));
      db.push_back(b.frame.points[i].descriptor);
    }
  }
  auto epipolar_ok = [&](int i, int j) {
    const Pixel& pa = a.frame.points[static_cast<std::size_t>(ia[static_cast<std::size_t>(i)])].pixel;
    const Pixel& pb = b.frame.points[static_cast<std::size_t>(ib[static_cast<std::size_t>(j)])].pixel;
    if ((warp(h, pa) - pb).norm() > 250.0) return false;
    const Vec3 l = f * Vec3(pa.x(), pa.y(), 1.0);
    const double n = std::hypot(l.x(), l.y());
    return n > 1e-12 && std::abs(l.dot(Vec3(pb.x(), pb.y(), 1.0))) / n <= cfg_.max_triangulation_error_px;
  };
  int created = 0;
  std::vector<std::pair<Vec3, std::pair<int, int>>> new_points;
  for (const Match& m : match_descriptors(da, db, epipolar_ok, cfg_.matching)) {
    const int fa = ia[static_cast<std::size_t>(m.a)], fb = ib[static_cast<std::size_t>(m.b)];
    const Pixel& pa = a.frame.points[static_cast<std::size_t>(fa)].pixel;
    const Pixel& pb = b.frame.points[static_cast<std::size_t>(fb)].pixel;
    try {
      const Vec3 x = triangulate_point(pa, pb, wa, wb, k_);
      const Vec3 xa = cam_a * x, xb = cam_b * x;
      if (xa.z() < kNear || xb.z() < kNear) continue;
      if ((project(xa, k_) - pa).norm() > cfg_.max_triangulation_error_px ||
          (project(xb, k_) - pb).norm() > cfg_.max_triangulation_error_px) {
        continue;
      }
      new_points.push_back({x, {fa, fb}});
    } catch (const Error&) {
    }
  }
  for (const auto& [x, fs] : new_points) {
    map_.add_point(x, b.frame.points[static_cast<std::size_t>(fs.second)].descriptor, {{older, fs.first}, {newer, fs.second}});
    ++created;
  }
  if (!cfg_.use_lines) return created;

  std::vector<int> la, lb;
  std::vector<Descriptor> dla, dlb;
  for (std::size_t i = 0; i < a.frame.lines.size(); ++i) {
    if (!a.frame.lines[i].landmark) {
      la.push_back(static_cast<int>(i));
      dla.push_back(a.frame.lines[i].descriptor);
    }
  }
  for (std::size_t i = 0; i < b.frame.lines.size(); ++i) {
    if (!b.frame.lines[i].landmark) {
      lb.push_back(static_cast<int>(i));
      dlb.push_back(b.frame.lines[i].descriptor);
    }
  }
  auto line_distance = [&](const Vec3& p_cam, const LineFeature& l) {
    const Pixel q = project(p_cam, k_);
    const Vec2 d = l.end - l.start;
    return std::abs(d.x() * (q.y() - l.start.y()) - d.y() * (q.x() - l.start.x())) / d.norm();
  };
  std::vector<std::pair<Segment3, std::pair<int, int>>> new_lines;
  for (const Match& m : match_descriptors(dla, dlb, [](int, int) { return true; }, cfg_.matching)) {
    const int fa = la[static_cast<std::size_t>(m.a)], fb = lb[static_cast<std::size_t>(m.b)];
    const LineFeature& l1 = a.frame.lines[static_cast<std::size_t>(fa)];
    const LineFeature& l2 = b.frame.lines[static_cast<std::size_t>(fb)];
    try {
      const Segment3 s = triangulate_line(l1, l2, wa, wb, k_);
      bool ok = true;
      for (const Vec3& e : {s.start, s.end}) {
        const Vec3 ea = cam_a * e, eb = cam_b * e;
        if (ea.z() < kNear || eb.z() < kNear || line_distance(ea, l1) > cfg_.max_triangulation_error_px ||
            line_distance(eb, l2) > cfg_.max_triangulation_error_px) {
          ok = false;
        }
      }
      if (ok) new_lines.push_back({s, {fa, fb}});
    } catch (const Error&) {
    }
  }
  for (const auto& [s, fs] : new_lines) {
    map_.add_line(s, b.frame.lines[static_cast<std::size_t>(fs.second)].descriptor, {{older, fs.first}, {newer, fs.second}});
    ++created;
  }
  return created;
}

std::vector<Pose> RunSummary::accepted_poses() const {
  std::vector<Pose> out;
  for (const auto& r : results) {
    if (r.accepted) out.push_back(r.pose);
  }
  return out;
}

double RunSummary::tracked_fraction() const {
  if (frames == 0) return 0.0;
  std::size_t n = 0;
  for (const auto& r : results) n += r.accepted ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(frames);
}

RunSummary run_tracker(Tracker& tracker, std::span<const FrameObservations> frames, const FrameCallback& on_frame) {
  RunSummary out;
  out.frames = frames.size();
  for (const FrameObservations& f : frames) {
    std::vector<TrackResult> produced;
    bool lost = false;
    try {
      produced = tracker.process(f);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::TrackingLost) throw;
      lost = true;
      out.lost.push_back(f.id);
    }
    if (on_frame) on_frame(f, produced, lost);
    out.results.insert(out.results.end(), produced.begin(), produced.end());
  }
  std::sort(out.results.begin(), out.results.end(),
            [](const TrackResult& a, const TrackResult& b) { return a.frame < b.frame; });
  return out;
}

}  // namespace structvo
