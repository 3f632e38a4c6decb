#include "structvo/sim_world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>

#include "json.hpp"
#include "structvo/error.hpp"
#include "structvo/evaluation.hpp"

namespace structvo::sim {

namespace {

constexpr double kNearPlane = 0.05;
constexpr double kOcclusionSlack = 1e-6;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Descriptor random_descriptor(std::mt19937_64& rng) {
  Descriptor d;
  for (int w = 0; w < 4; ++w) {
    const std::uint64_t bits = rng();
    for (int b = 0; b < 64; ++b) d[w * 64 + b] = (bits >> b) & 1U;
  }
  return d;
}

Descriptor corrupt(Descriptor d, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return d;
  if (rate >= 1.0) return ~d;
  std::geometric_distribution<int> gap(rate);
  for (int i = gap(rng); i < 256; i += 1 + gap(rng)) d.flip(static_cast<std::size_t>(i));
  return d;
}

Vec3 perturb_normal(const Vec3& n, double sigma, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> gauss(0.0, sigma);
  const double phi = uni(rng);
  const double angle = gauss(rng);
  Vec3 a = std::abs(n.x()) < 0.9 ? n.cross(Vec3::UnitX()) : n.cross(Vec3::UnitY());
  a.normalize();
  const Vec3 b = n.cross(a);
  const Vec3 axis = std::cos(phi) * a + std::sin(phi) * b;
  return Eigen::AngleAxisd(angle, axis) * n;
}

Vec3 blob_normal(int u, int v, const CameraIntrinsics& k) {
  const double su = static_cast<double>(u) / k.width * 640.0;
  const double sv = static_cast<double>(v) / k.height * 480.0;
  return Vec3(0.6 * std::sin(0.07 * su + 0.13 * sv), 0.6 * std::cos(0.05 * su - 0.09 * sv), -1.0).normalized();
}

bool visible(const PlanarScene& scene, const Vec3& origin, const Vec3& target) {
  const Vec3 d = target - origin;
  const double dist = d.norm();
  if (dist < 1e-9) return false;
  const RayHit hit = cast_ray(scene, origin, d / dist);
  return hit.plane < 0 || hit.distance >= dist * (1.0 - kOcclusionSlack) - kOcclusionSlack;
}

int add_plane(PlanarScene& s, const Vec3& center, const Vec3& normal, const Vec3& u, const Vec3& v, double hu,
              double hv, bool planar = true) {
  ScenePlane p;
  p.id = static_cast<int>(s.planes.size());
  p.center = center;
  p.normal = normal.normalized();
  p.axis_u = u.normalized();
  p.axis_v = v.normalized();
  p.half_u = hu;
  p.half_v = hv;
  p.planar = planar;
  s.planes.push_back(p);
  return p.id;
}

/// Inward-facing box walls.
void add_box(PlanarScene& s, const Vec3& lo, const Vec3& hi) {
  const Vec3 c = 0.5 * (lo + hi);
  const Vec3 h = 0.5 * (hi - lo);
  const Vec3 ex = Vec3::UnitX(), ey = Vec3::UnitY(), ez = Vec3::UnitZ();
  add_plane(s, {c.x(), hi.y(), c.z()}, -ey, ex, ez, h.x(), h.z());  // floor
  add_plane(s, {c.x(), lo.y(), c.z()}, ey, ex, ez, h.x(), h.z());   // ceiling
  add_plane(s, {lo.x(), c.y(), c.z()}, ex, ez, ey, h.z(), h.y());
  add_plane(s, {hi.x(), c.y(), c.z()}, -ex, ez, ey, h.z(), h.y());
  add_plane(s, {c.x(), c.y(), lo.z()}, ez, ex, ey, h.x(), h.y());
  add_plane(s, {c.x(), c.y(), hi.z()}, -ez, ex, ey, h.x(), h.y());
}

void add_points(PlanarScene& s, int plane, double density, std::mt19937_64& rng) {
  const ScenePlane& p = s.planes[static_cast<std::size_t>(plane)];
  const int count = static_cast<int>(std::lround(density * 4.0 * p.half_u * p.half_v));
  std::uniform_real_distribution<double> du(-p.half_u * 0.98, p.half_u * 0.98);
  std::uniform_real_distribution<double> dv(-p.half_v * 0.98, p.half_v * 0.98);
  for (int i = 0; i < count; ++i) {
    ScenePoint pt;
    pt.id = static_cast<LandmarkId>(s.points.size());
    const double a = du(rng), b = dv(rng);
    pt.position = p.center + a * p.axis_u + b * p.axis_v;
    pt.plane = plane;
    pt.descriptor = random_descriptor(rng);
    s.points.push_back(pt);
  }
}

void add_line(PlanarScene& s, const Vec3& a, const Vec3& b, std::mt19937_64& rng) {
  SceneLine l;
  l.id = static_cast<LandmarkId>(1000000 + s.lines.size());
  l.segment = {a, b};
  l.descriptor = random_descriptor(rng);
  s.lines.push_back(l);
}

void add_box_edges(PlanarScene& s, const Vec3& lo, const Vec3& hi, std::mt19937_64& rng) {
  for (double y : {lo.y(), hi.y()}) {
    for (double x : {lo.x(), hi.x()}) add_line(s, {x, y, lo.z()}, {x, y, hi.z()}, rng);
    for (double z : {lo.z(), hi.z()}) add_line(s, {lo.x(), y, z}, {hi.x(), y, z}, rng);
  }
  for (double x : {lo.x(), hi.x()}) {
    for (double z : {lo.z(), hi.z()}) add_line(s, {x, lo.y(), z}, {x, hi.y(), z}, rng);
  }
}

/// Corridor scene; `spacing` controls the density of wall/floor/ceiling lines.
PlanarScene corridor_scene(std::mt19937_64& rng, double point_density, double spacing) {
  PlanarScene s;
  const Vec3 lo(-1.0, -1.2, -2.0), hi(1.0, 1.2, 12.0);
  add_box(s, lo, hi);
  if (point_density > 0.0) {
    for (int i = 0; i < 6; ++i) add_points(s, i, point_density, rng);
  }
  add_box_edges(s, lo, hi, rng);
  for (double z = -1.5; z < 11.6; z += spacing) {
    for (double x : {lo.x(), hi.x()}) add_line(s, {x, -0.8, z}, {x, 0.8, z}, rng);
    add_line(s, {-0.7, lo.y(), z + 0.25 * spacing}, {0.7, lo.y(), z + 0.25 * spacing}, rng);
    add_line(s, {-0.7, hi.y(), z + 0.5 * spacing}, {0.7, hi.y(), z + 0.5 * spacing}, rng);
    for (double x : {lo.x(), hi.x()}) {
      add_line(s, {x, 0.1, z + 0.1 * spacing}, {x, 0.1, z + 0.5 * spacing}, rng);
      add_line(s, {x, -0.5, z + 0.6 * spacing}, {x, -0.5, z + 0.9 * spacing}, rng);
    }
  }
  // Window on the far wall.
  const double zf = hi.z();
  add_line(s, {-0.5, -0.6, zf}, {0.5, -0.6, zf}, rng);
  add_line(s, {-0.5, 0.4, zf}, {0.5, 0.4, zf}, rng);
  add_line(s, {-0.5, -0.6, zf}, {-0.5, 0.4, zf}, rng);
  add_line(s, {0.5, -0.6, zf}, {0.5, 0.4, zf}, rng);
  return s;
}

PlanarScene room_scene(std::mt19937_64& rng) {
  PlanarScene s;
  const Vec3 lo(-3.0, -1.5, -3.0), hi(3.0, 1.5, 3.0);
  add_box(s, lo, hi);
  for (int i = 0; i < 6; ++i) add_points(s, i, 8.0, rng);
  add_box_edges(s, lo, hi, rng);
  // Door and window frames.
  for (double x : {-1.5, 0.0, 1.5}) {
    add_line(s, {x - 0.4, -0.5, hi.z()}, {x + 0.4, -0.5, hi.z()}, rng);
    add_line(s, {x - 0.4, 0.5, lo.z()}, {x + 0.4, 0.5, lo.z()}, rng);
    add_line(s, {hi.x(), -0.5, x - 0.4}, {hi.x(), -0.5, x + 0.4}, rng);
    add_line(s, {lo.x(), 0.5, x - 0.4}, {lo.x(), 0.5, x + 0.4}, rng);
    for (double z : {lo.z(), hi.z()}) add_line(s, {x, -1.0, z}, {x, 1.0, z}, rng);
    for (double xx : {lo.x(), hi.x()}) add_line(s, {xx, -1.0, x}, {xx, 1.0, x}, rng);
  }
  // Tilted non-planar-marked panel near a corner.
  const Vec3 n = Vec3(std::cos(30.0 * std::numbers::pi / 180.0), 0.0, -std::sin(30.0 * std::numbers::pi / 180.0)).normalized();
  add_plane(s, {-2.4, 0.5, 2.2}, n, Vec3::UnitY().cross(n), Vec3::UnitY(), 0.3, 0.5, false);
  return s;
}

TrajectorySpec corridor_trajectory(int frames) {
  TrajectorySpec t;
  t.frames = frames;
  const double d = std::numbers::pi / 180.0;
  t.waypoints = {
      {{0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}},         {{0.25, 0.05, 1.0}, {8 * d, 2 * d, 0.0}},
      {{0.3, -0.05, 2.0}, {-6 * d, -3 * d, 1 * d}}, {{-0.1, 0.05, 3.0}, {-10 * d, 2 * d, 0.0}},
      {{-0.3, 0.0, 4.0}, {4 * d, 0.0, -1 * d}},    {{0.0, -0.05, 5.0}, {10 * d, -2 * d, 0.0}},
      {{0.2, 0.0, 6.0}, {0.0, 0.0, 0.0}},
  };
  t.noise.pixel_sigma = 1.0;
  t.noise.normal_sigma = 5.0 * d;
  return t;
}

Eigen::Quaterniond to_quat(const Mat3& r) { return Eigen::Quaterniond(r).normalized(); }

}  // namespace

bool TrajectorySpec::normals_occluded(int frame) const {
  return std::any_of(normal_occlusions.begin(), normal_occlusions.end(),
                     [frame](const auto& w) { return frame >= w.first && frame <= w.second; });
}

std::mt19937_64 frame_rng(std::uint64_t seed, std::int64_t frame, std::uint64_t stream) {
  const std::uint64_t a = splitmix64(seed);
  const std::uint64_t b = splitmix64(a ^ static_cast<std::uint64_t>(frame));
  const std::uint64_t c = splitmix64(b ^ (stream * 0xd1b54a32d192ed03ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

Mat3 rotation_from_ypr(const Vec3& ypr) {
  return (Eigen::AngleAxisd(ypr.x(), Vec3::UnitY()) * Eigen::AngleAxisd(ypr.y(), Vec3::UnitX()) *
          Eigen::AngleAxisd(ypr.z(), Vec3::UnitZ()))
      .toRotationMatrix();
}

std::vector<Pose> interpolate_trajectory(const TrajectorySpec& spec) {
  if (spec.waypoints.empty() || spec.frames <= 0 || !(spec.fps > 0.0)) {
    fail(ErrorCode::CorruptInput, "trajectory needs waypoints, frames > 0 and fps > 0");
  }
  const auto& w = spec.waypoints;
  const int n = static_cast<int>(w.size());
  std::vector<Pose> out;
  out.reserve(static_cast<std::size_t>(spec.frames));
  for (int i = 0; i < spec.frames; ++i) {
    Vec3 pos = w[0].position;
    Eigen::Quaterniond q = to_quat(rotation_from_ypr(w[0].ypr));
    if (n > 1) {
      const double s = spec.frames > 1 ? static_cast<double>(i) * (n - 1) / (spec.frames - 1) : 0.0;
      const int j = std::min(static_cast<int>(std::floor(s)), n - 2);
      const double tau = s - j;
      const Vec3& p0 = w[static_cast<std::size_t>(std::max(j - 1, 0))].position;
      const Vec3& p1 = w[static_cast<std::size_t>(j)].position;
      const Vec3& p2 = w[static_cast<std::size_t>(j + 1)].position;
      const Vec3& p3 = w[static_cast<std::size_t>(std::min(j + 2, n - 1))].position;
      const double t2 = tau * tau, t3 = t2 * tau;
      pos = 0.5 * ((2.0 * p1) + (-p0 + p2) * tau + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 +
                   (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3);
      const Eigen::Quaterniond qa = to_quat(rotation_from_ypr(w[static_cast<std::size_t>(j)].ypr));
      const Eigen::Quaterniond qb = to_quat(rotation_from_ypr(w[static_cast<std::size_t>(j + 1)].ypr));
      q = qa.slerp(tau, qb);
    }
    out.emplace_back(nearest_rotation(q.toRotationMatrix(), FrameTag::camera(i), FrameTag::world()), pos,
                     static_cast<double>(i) / spec.fps);
  }
  return out;
}

RayHit cast_ray(const PlanarScene& scene, const Vec3& origin, const Vec3& dir, double min_distance) {
  RayHit best{-1, std::numeric_limits<double>::infinity()};
  for (const ScenePlane& p : scene.planes) {
    const double denom = p.normal.dot(dir);
    if (std::abs(denom) < 1e-12) continue;
    const double s = p.normal.dot(p.center - origin) / denom;
    if (!(s > min_distance) || s >= best.distance) continue;
    const Vec3 local = origin + s * dir - p.center;
    if (std::abs(local.dot(p.axis_u)) > p.half_u || std::abs(local.dot(p.axis_v)) > p.half_v) continue;
    best = {p.id, s};
  }
  if (best.plane < 0) best.distance = 0.0;
  return best;
}

NormalMap render_normals(const PlanarScene& scene, const Pose& world_from_camera, const CameraIntrinsics& k,
                         double normal_sigma, std::mt19937_64* rng, bool occluded) {
  NormalMap map(k.width, k.height);
  const Mat3& r = world_from_camera.R();
  const Vec3 origin = world_from_camera.t();
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      if (occluded) {
        map.set(u, v, blob_normal(u, v, k), false);
        continue;
      }
      const Vec3 ray_c = normalize_pixel(Pixel(u, v), k).normalized();
      const RayHit hit = cast_ray(scene, origin, r * ray_c);
      if (hit.plane < 0) {
        map.set_invalid(u, v);
        continue;
      }
      const ScenePlane& p = scene.planes[static_cast<std::size_t>(hit.plane)];
      Vec3 n = r.transpose() * p.normal;
      if (n.dot(ray_c) > 0.0) n = -n;
      if (normal_sigma > 0.0 && rng != nullptr) n = perturb_normal(n, normal_sigma, *rng);
      map.set_exact(u, v, n, p.planar);
    }
  }
  return map;
}

DepthMap render_depth(const PlanarScene& scene, const Pose& world_from_camera, const CameraIntrinsics& k) {
  DepthMap depth(k.width, k.height);
  const Mat3& r = world_from_camera.R();
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const Vec3 ray_c = normalize_pixel(Pixel(u, v), k);
      const double len = ray_c.norm();
      const RayHit hit = cast_ray(scene, world_from_camera.t(), r * (ray_c / len));
      if (hit.plane >= 0) depth.at(u, v) = hit.distance / len;
    }
  }
  return depth;
}

Observed observe_features(const PlanarScene& scene, const Pose& world_from_camera, const CameraIntrinsics& k,
                          const NoiseSpec& noise, std::mt19937_64& rng, FrameId id, double timestamp) {
  Observed out;
  out.frame.id = id;
  out.frame.timestamp = timestamp;
  const Pose cam_from_world = inverse(world_from_camera);
  const Vec3 origin = world_from_camera.t();
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  for (const ScenePoint& sp : scene.points) {
    const Vec3 pc = cam_from_world * sp.position;
    if (pc.z() < kNearPlane) continue;
    const Pixel px = project(pc, k);
    if (!k.in_bounds(px, 1.0) || !visible(scene, origin, sp.position)) continue;
    PointFeature f;
    CorrespondenceEntry e{'P', static_cast<int>(out.frame.points.size()), sp.id, false};
    if (noise.outlier_fraction > 0.0 && uni(rng) < noise.outlier_fraction) {
      f.pixel = Pixel(uni(rng) * (k.width - 1), uni(rng) * (k.height - 1));
      e.outlier = true;
    } else {
      f.pixel = px;
      if (noise.pixel_sigma > 0.0) {
        f.pixel += noise.pixel_sigma * Pixel(gauss(rng), gauss(rng));
        f.pixel.x() = std::clamp(f.pixel.x(), 0.0, k.width - 1.0);
        f.pixel.y() = std::clamp(f.pixel.y(), 0.0, k.height - 1.0);
      }
    }
    f.descriptor = corrupt(sp.descriptor, noise.descriptor_corruption, rng);
    out.frame.points.push_back(f);
    out.table.push_back(e);
  }

  for (const SceneLine& sl : scene.lines) {
    Vec3 a = cam_from_world * sl.segment.start;
    Vec3 b = cam_from_world * sl.segment.end;
    if (a.z() < kNearPlane && b.z() < kNearPlane) continue;
    if (a.z() < kNearPlane || b.z() < kNearPlane) {
      const double t = (kNearPlane - a.z()) / (b.z() - a.z());
      const Vec3 m = a + t * (b - a);
      (a.z() < kNearPlane ? a : b) = m;
    }
    bool occluded = false;
    for (int i = 0; i <= 8 && !occluded; ++i) {
      const Vec3 pw = world_from_camera * (a + (i / 8.0) * (b - a));
      occluded = !visible(scene, origin, pw);
    }
    if (occluded) continue;
    Pixel pa = project(a, k), pb = project(b, k);
    if (!clip_segment(pa, pb, k.width, k.height)) continue;
    if ((pb - pa).norm() < kMinLineLength) continue;
    LineFeature f;
    f.start = pa;
    f.end = pb;
    if (noise.pixel_sigma > 0.0) {
      f.start += noise.pixel_sigma * Pixel(gauss(rng), gauss(rng));
      f.end += noise.pixel_sigma * Pixel(gauss(rng), gauss(rng));
    }
    if (f.length() < kMinLineLength) continue;
    f.descriptor = corrupt(sl.descriptor, noise.descriptor_corruption, rng);
    out.table.push_back({'L', static_cast<int>(out.frame.lines.size()), sl.id, false});
    out.frame.lines.push_back(f);
  }
  return out;
}

Sequence simulate(const PlanarScene& scene, const TrajectorySpec& spec, const CameraIntrinsics& k,
                  const std::string& preset) {
  k.validate();
  Sequence seq{scene, spec, k, preset, interpolate_trajectory(spec), {}};
  seq.frames.resize(seq.ground_truth.size());
  for (std::size_t i = 0; i < seq.ground_truth.size(); ++i) {
    auto rng = frame_rng(spec.seed, static_cast<std::int64_t>(i), 1);
    const Pose& p = seq.ground_truth[i];
    seq.frames[i] = observe_features(scene, p, k, spec.noise, rng, static_cast<FrameId>(i), p.timestamp());
  }
  return seq;
}

SimulatorNormalProvider::SimulatorNormalProvider(PlanarScene scene, std::vector<Pose> world_from_camera,
                                                 CameraIntrinsics k, TrajectorySpec spec, int downsample)
    : scene_(std::move(scene)),
      poses_(std::move(world_from_camera)),
      k_map_(k.downsampled(downsample)),
      spec_(std::move(spec)) {}

SimulatorNormalProvider::SimulatorNormalProvider(const Sequence& seq, int downsample)
    : SimulatorNormalProvider(seq.scene, seq.ground_truth, seq.k, seq.spec, downsample) {}

NormalMap SimulatorNormalProvider::provide(std::int64_t frame_id) const {
  if (frame_id < 0 || frame_id >= static_cast<std::int64_t>(poses_.size())) {
    fail(ErrorCode::FrameNotFound, "no simulated frame " + std::to_string(frame_id));
  }
  auto rng = frame_rng(spec_.seed, frame_id, 2);
  return render_normals(scene_, poses_[static_cast<std::size_t>(frame_id)], k_map_, spec_.noise.normal_sigma, &rng,
                        spec_.normals_occluded(static_cast<int>(frame_id)));
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"room", "corridor", "pure_rotation", "occlusion_window", "no_texture"};
  return names;
}

Preset make_preset(const std::string& name, std::uint64_t seed, int frames) {
  auto rng = frame_rng(seed, -1, 0);
  Preset p;
  const double d = std::numbers::pi / 180.0;
  if (name == "room") {
    p.scene = room_scene(rng);
    p.spec.frames = 120;
    p.spec.waypoints = {
        // Aimed toward a corner and pitched so two walls and the floor stay in view.
        {{0.8, 0.0, 0.0}, {25 * d, -22 * d, 0.0}}, {{0.0, -0.1, 0.8}, {40 * d, -26 * d, 3 * d}},
        {{-0.8, 0.0, 0.0}, {60 * d, -20 * d, 0.0}}, {{0.0, 0.1, -0.8}, {45 * d, -16 * d, -3 * d}},
        {{0.8, 0.0, 0.0}, {30 * d, -22 * d, 0.0}},
    };
  } else if (name == "pure_rotation") {
    p.scene = room_scene(rng);
    p.spec.frames = 60;
    p.spec.waypoints = {{{0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}}, {{0.0, 0.0, 0.0}, {90 * d, 0.0, 0.0}}};
  } else if (name == "corridor" || name == "occlusion_window") {
    p.scene = corridor_scene(rng, 6.0, 1.0);
    p.spec = corridor_trajectory(300);
    if (name == "occlusion_window") p.spec.normal_occlusions = {{100, 120}};
  } else if (name == "no_texture") {
    p.scene = corridor_scene(rng, 0.0, 0.5);
    p.spec = corridor_trajectory(300);
  } else {
    fail(ErrorCode::BadPreset, "unknown preset '" + name + "'");
  }
  if (frames > 0) p.spec.frames = frames;
  p.spec.seed = seed;
  return p;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_correspondences(FrameId frame, const std::vector<CorrespondenceEntry>& table) {
  std::ostringstream os;
  os << "CORR1 " << frame << '\n';
  for (const auto& e : table) os << e.kind << ' ' << e.feature << ' ' << e.landmark << ' ' << (e.outlier ? 1 : 0) << '\n';
  return os.str();
}

std::vector<CorrespondenceEntry> parse_correspondences(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line.rfind("CORR1 ", 0) != 0) fail(ErrorCode::CorruptInput, "missing CORR1 header");
  std::vector<CorrespondenceEntry> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    CorrespondenceEntry e;
    int outlier = 0;
    if (!(ls >> e.kind >> e.feature >> e.landmark >> outlier) || (e.kind != 'P' && e.kind != 'L')) {
      fail(ErrorCode::CorruptInput, "bad correspondence record: " + line);
    }
    e.outlier = outlier != 0;
    out.push_back(e);
  }
  return out;
}

namespace {

using nlohmann::json;

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

std::string scene_to_json(const Sequence& seq, int normal_downsample) {
  json j;
  j["format"] = "structvo-scene-1";
  j["preset"] = seq.preset;
  j["camera"] = {{"fx", seq.k.fx}, {"fy", seq.k.fy}, {"cx", seq.k.cx}, {"cy", seq.k.cy},
                 {"width", seq.k.width}, {"height", seq.k.height}};
  j["normal_downsample"] = normal_downsample;
  json planes = json::array();
  for (const auto& p : seq.scene.planes) {
    planes.push_back({{"id", p.id}, {"center", vec_json(p.center)}, {"normal", vec_json(p.normal)},
                      {"axis_u", vec_json(p.axis_u)}, {"axis_v", vec_json(p.axis_v)}, {"half_u", p.half_u},
                      {"half_v", p.half_v}, {"planar", p.planar}});
  }
  j["planes"] = planes;
  json points = json::array();
  for (const auto& p : seq.scene.points) {
    points.push_back({{"id", p.id}, {"position", vec_json(p.position)}, {"plane", p.plane},
                      {"descriptor", to_hex(p.descriptor)}});
  }
  j["points"] = points;
  json lines = json::array();
  for (const auto& l : seq.scene.lines) {
    lines.push_back({{"id", l.id}, {"start", vec_json(l.segment.start)}, {"end", vec_json(l.segment.end)},
                     {"descriptor", to_hex(l.descriptor)}});
  }
  j["lines"] = lines;
  json wps = json::array();
  for (const auto& w : seq.spec.waypoints) wps.push_back({{"position", vec_json(w.position)}, {"ypr", vec_json(w.ypr)}});
  json occ = json::array();
  for (const auto& [a, b] : seq.spec.normal_occlusions) occ.push_back(json::array({a, b}));
  j["trajectory"] = {{"waypoints", wps},
                     {"frames", seq.spec.frames},
                     {"fps", seq.spec.fps},
                     {"seed", seq.spec.seed},
                     {"normal_occlusions", occ},
                     {"noise",
                      {{"pixel_sigma", seq.spec.noise.pixel_sigma},
                       {"normal_sigma_rad", seq.spec.noise.normal_sigma},
                       {"outlier_fraction", seq.spec.noise.outlier_fraction},
                       {"descriptor_corruption", seq.spec.noise.descriptor_corruption}}}};
  return j.dump(1) + "\n";
}

Sequence sequence_from_json(const std::string& text) {
  Sequence seq;
  try {
    const json j = json::parse(text);
    seq.preset = j.at("preset").get<std::string>();
    const json& c = j.at("camera");
    seq.k = {c.at("fx").get<double>(), c.at("fy").get<double>(), c.at("cx").get<double>(),
             c.at("cy").get<double>(), c.at("width").get<int>(),   c.at("height").get<int>()};
    for (const auto& p : j.at("planes")) {
      ScenePlane sp;
      sp.id = p.at("id").get<int>();
      sp.center = json_vec(p.at("center"));
      sp.normal = json_vec(p.at("normal"));
      sp.axis_u = json_vec(p.at("axis_u"));
      sp.axis_v = json_vec(p.at("axis_v"));
      sp.half_u = p.at("half_u").get<double>();
      sp.half_v = p.at("half_v").get<double>();
      sp.planar = p.at("planar").get<bool>();
      seq.scene.planes.push_back(sp);
    }
    for (const auto& p : j.at("points")) {
      seq.scene.points.push_back({p.at("id").get<LandmarkId>(), json_vec(p.at("position")), p.at("plane").get<int>(),
                                  descriptor_from_hex(p.at("descriptor").get<std::string>())});
    }
    for (const auto& l : j.at("lines")) {
      seq.scene.lines.push_back({l.at("id").get<LandmarkId>(), {json_vec(l.at("start")), json_vec(l.at("end"))},
                                 descriptor_from_hex(l.at("descriptor").get<std::string>())});
    }
    const json& t = j.at("trajectory");
    for (const auto& w : t.at("waypoints")) seq.spec.waypoints.push_back({json_vec(w.at("position")), json_vec(w.at("ypr"))});
    seq.spec.frames = t.at("frames").get<int>();
    seq.spec.fps = t.at("fps").get<double>();
    seq.spec.seed = t.at("seed").get<std::uint64_t>();
    for (const auto& o : t.at("normal_occlusions")) seq.spec.normal_occlusions.emplace_back(o.at(0).get<int>(), o.at(1).get<int>());
    const json& n = t.at("noise");
    seq.spec.noise.pixel_sigma = n.at("pixel_sigma").get<double>();
    seq.spec.noise.normal_sigma = n.at("normal_sigma_rad").get<double>();
    seq.spec.noise.outlier_fraction = n.at("outlier_fraction").get<double>();
    seq.spec.noise.descriptor_corruption = n.at("descriptor_corruption").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptInput, std::string("scene json: ") + e.what());
  }
  seq.k.validate();
  return seq;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot write " + path.string());
  os << text;
  if (!os) fail(ErrorCode::IoError, "write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

void generate_sequence(const Sequence& seq, const std::filesystem::path& out_dir, const DatasetOptions& opts) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "frames", ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + (out_dir / "frames").string() + ": " + ec.message());

  const std::string scene = scene_to_json(seq, opts.normal_downsample);
  write_text(out_dir / "scene.json", scene);
  write_tum(out_dir / "gt_trajectory.txt", Trajectory(seq.ground_truth));

  std::ostringstream meta;
  meta << "format=structvo-dataset-1\n"
       << "preset=" << seq.preset << '\n'
       << "seed=" << seq.spec.seed << '\n'
       << "frames=" << seq.frames.size() << '\n'
       << "normal_downsample=" << opts.normal_downsample << '\n'
       << "config_hash=" << fnv1a_hex(scene) << '\n';
  write_text(out_dir / "meta", meta.str());

  const SimulatorNormalProvider normals(seq, opts.normal_downsample);
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const std::string stem = frame_stem(static_cast<std::int64_t>(i));
    FrameObservations f = seq.frames[i].frame;
    for (auto& p : f.points) p.landmark.reset();
    for (auto& l : f.lines) l.landmark.reset();
    write_features(out_dir / "frames" / (stem + ".feat"), f);
    write_text(out_dir / "frames" / (stem + ".corr"), format_correspondences(f.id, seq.frames[i].table));
    if (opts.write_normals) {
      write_normal_map(out_dir / "frames" / (stem + ".nrm"), normals.provide(static_cast<std::int64_t>(i)));
    }
  }
}

Sequence load_scene(const std::filesystem::path& dir) {
  Sequence seq = sequence_from_json(read_text(dir / "scene.json"));
  seq.ground_truth = interpolate_trajectory(seq.spec);
  return seq;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.root = dir;
  const Sequence seq = sequence_from_json(read_text(dir / "scene.json"));
  ds.k = seq.k;
  ds.preset = seq.preset;
  ds.seed = seq.spec.seed;
  int frames = -1;
  std::istringstream meta(read_text(dir / "meta"));
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    try {
      if (key == "normal_downsample") ds.normal_downsample = std::stoi(value);
      else if (key == "frames") frames = std::stoi(value);
      else if (key == "seed") ds.seed = std::stoull(value);
    } catch (const std::exception&) {
      fail(ErrorCode::CorruptInput, "bad meta value: " + line);
    }
  }
  if (frames < 0 || ds.normal_downsample < 1) fail(ErrorCode::CorruptInput, "meta lacks frames or normal_downsample");
  for (int i = 0; i < frames; ++i) {
    ds.frames.push_back(read_features(dir / "frames" / (frame_stem(i) + ".feat")));
  }
  const auto gt = dir / "gt_trajectory.txt";
  if (std::filesystem::exists(gt)) ds.ground_truth = read_tum(gt).poses();
  return ds;
}

}  // namespace structvo::sim
