#include "doctest.h"

#include <algorithm>
#include <random>

#include "../oracles.hpp"
#include "structvo/epipolar_translation.hpp"
#include "structvo/error.hpp"

using namespace structvo;

namespace {

constexpr double kDeg = M_PI / 180.0;
const CameraIntrinsics kCam{};

struct TwoView {
  std::vector<Correspondence2D> cs;
  std::vector<Vec3> points;  // camera-1 coordinates
  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

TwoView two_view(std::mt19937_64& rng, int n, const Mat3& r, const Vec3& t, double noise_px = 0.0) {
  std::uniform_real_distribution<double> xy(-2.0, 2.0), z(2.0, 8.0);
  std::normal_distribution<double> g(0.0, noise_px > 0.0 ? noise_px : 1.0);
  TwoView tv;
  tv.r = r;
  tv.t = t;
  while (static_cast<int>(tv.cs.size()) < n) {
    const Vec3 p1(xy(rng), xy(rng), z(rng));
    const Vec3 p2 = r * p1 + t;
    if (p2.z() < 0.5) continue;
    Pixel a = project(p1, kCam), b = project(p2, kCam);
    if (!kCam.in_bounds(a) || !kCam.in_bounds(b)) continue;
    if (noise_px > 0.0) {
      a += Pixel(g(rng), g(rng));
      b += Pixel(g(rng), g(rng));
    }
    tv.cs.push_back({a, b, std::nullopt});
    tv.points.push_back(p1);
  }
  return tv;
}

RotationMatrix rel(const Mat3& r) { return RotationMatrix(r, FrameTag::camera(0), FrameTag::camera(1)); }

double angle_between(const Vec3& a, const Vec3& b) { return std::atan2(a.cross(b).norm(), a.dot(b)); }

Mat3 small_rotation(std::mt19937_64& rng, double max_angle = 0.2) {
  std::uniform_real_distribution<double> u(-max_angle, max_angle);
  return oracle::axis_angle(Vec3(u(rng), u(rng), u(rng)));
}

Vec3 random_direction(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  return Vec3(g(rng), g(rng), g(rng)).normalized();
}

// Mostly sideways; forward motion with a narrow field of view is poorly conditioned.
Vec3 lateral_direction(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> a(0.0, 2.0 * M_PI), z(-0.3, 0.3);
  const double phi = a(rng);
  return Vec3(std::cos(phi), std::sin(phi), z(rng)).normalized();
}

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an exception");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("constraint row annihilates the true translation") {
  const Vec3 p1(0.3, -0.2, 2.0);
  const Vec3 t(1.0, 0.0, 0.0);
  const Correspondence2D c{project(p1, kCam), project(p1 + t, kCam), std::nullopt};
  CHECK(std::abs(constraint_row(c, Mat3::Identity(), kCam).dot(t)) < 1e-12);
}

TEST_CASE("constraint row equals the expanded bracket") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const Mat3 r = oracle::random_rotation(rng);
    const Vec3 t(g(rng), g(rng), g(rng));
    const Pixel u1(std::uniform_real_distribution<double>(0, 640)(rng), std::uniform_real_distribution<double>(0, 480)(rng));
    const Pixel u2(std::uniform_real_distribution<double>(0, 640)(rng), std::uniform_real_distribution<double>(0, 480)(rng));
    const Vec3 x1((u1.x() - kCam.cx) / kCam.fx, (u1.y() - kCam.cy) / kCam.fy, 1.0);
    const Vec3 x2((u2.x() - kCam.cx) / kCam.fx, (u2.y() - kCam.cy) / kCam.fy, 1.0);
    // (t x x2) . (R x1), the coplanarity bracket with z1 eliminated.
    const Vec3 rx1 = r * x1;
    const double bracket = (t.y() * x2.z() - t.z() * x2.y()) * rx1.x() + (t.z() * x2.x() - t.x() * x2.z()) * rx1.y() +
                           (t.x() * x2.y() - t.y() * x2.x()) * rx1.z();
    CHECK(std::abs(constraint_row({u1, u2, std::nullopt}, r, kCam).dot(t) - bracket) < 1e-10);
  }
}

TEST_CASE("pure rotation rows vanish for every translation") {
  std::mt19937_64 rng(2);
  const TwoView tv = two_view(rng, 30, small_rotation(rng), Vec3::Zero());
  for (const auto& c : tv.cs) {
    const Vec3 a = constraint_row(c, tv.r, kCam);
    for (int i = 0; i < 5; ++i) CHECK(std::abs(a.dot(random_direction(rng))) < 1e-12);
  }
}

TEST_CASE("noiseless translation direction") {
  std::mt19937_64 rng(3);
  const TwoView tv = two_view(rng, 50, Mat3::Identity(), Vec3(1, 0, 0));
  const TranslationEstimate est = solve_translation(tv.cs, rel(tv.r), kCam);
  CHECK(angle_between(est.direction.vec(), Vec3(1, 0, 0)) < 1e-6);
  CHECK(est.condition_ratio >= 10.0);
  CHECK(std::count(est.inliers.begin(), est.inliers.end(), true) == 50);
  for (int trial = 0; trial < 50; ++trial) {
    const TwoView rv = two_view(rng, 50, small_rotation(rng), 0.5 * random_direction(rng));
    CHECK(angle_between(solve_translation(rv.cs, rel(rv.r), kCam).direction.vec(), rv.t.normalized()) < 1e-6);
  }
}

TEST_CASE("degenerate and underdetermined inputs") {
  std::mt19937_64 rng(4);
  const TwoView pure = two_view(rng, 50, small_rotation(rng), Vec3::Zero());
  CHECK(code_of([&] { solve_translation(pure.cs, rel(pure.r), kCam); }) == ErrorCode::DegenerateTranslation);
  const TwoView few = two_view(rng, 2, Mat3::Identity(), Vec3(1, 0, 0));
  CHECK(code_of([&] { solve_translation(few.cs, rel(few.r), kCam); }) == ErrorCode::TooFewCorrespondences);
}

TEST_CASE("one pixel noise, 100 points") {
  std::mt19937_64 rng(5);
  std::vector<double> errors;
  for (int trial = 0; trial < 100; ++trial) {
    const TwoView tv = two_view(rng, 100, small_rotation(rng), 1.0 * lateral_direction(rng), 1.0);
    errors.push_back(angle_between(solve_translation(tv.cs, rel(tv.r), kCam).direction.vec(), tv.t.normalized()));
  }
  CHECK(oracle::percentile(errors, 0.5) < 0.5 * kDeg);
}

TEST_CASE("direction is invariant to scene scale") {
  std::mt19937_64 rng(6);
  const Mat3 r = small_rotation(rng);
  const Vec3 t = 0.4 * random_direction(rng);
  std::mt19937_64 a(7), b(7);
  const TwoView near = two_view(a, 60, r, t);
  // Same pixels from a scene 3x larger with a 3x baseline.
  TwoView far = near;
  for (auto& p : far.points) p *= 3.0;
  far.t = 3.0 * t;
  for (std::size_t i = 0; i < far.cs.size(); ++i) {
    far.cs[i].p2 = project(r * far.points[i] + far.t, kCam);
  }
  const Vec3 da = solve_translation(near.cs, rel(r), kCam).direction.vec();
  const Vec3 db = solve_translation(far.cs, rel(r), kCam).direction.vec();
  CHECK((da - db).norm() < 1e-9);
}

TEST_CASE("a wrong rotation inflates the residual") {
  std::mt19937_64 rng(8);
  const TwoView tv = two_view(rng, 80, small_rotation(rng), 0.5 * random_direction(rng), 0.5);
  auto residual = [&](const Mat3& r) {
    const Vec3 t = solve_translation(tv.cs, rel(r), kCam, {.min_condition_ratio = 0.0}).direction.vec();
    double s = 0.0;
    for (const auto& c : tv.cs) s += std::pow(constraint_row(c, r, kCam).dot(t), 2);
    return std::sqrt(s);
  };
  const double truth = residual(tv.r);
  double previous = truth;
  for (double deg : {1.0, 3.0, 5.0}) {
    const double off = residual(oracle::axis_angle(Vec3(0, 1, 0) * deg * kDeg) * tv.r);
    CHECK(off > previous);
    previous = off;
  }
  CHECK(previous > 5.0 * truth);
}

TEST_CASE("mismatched correspondences are flagged") {
  std::mt19937_64 rng(9);
  TwoView tv = two_view(rng, 100, small_rotation(rng), 1.0 * lateral_direction(rng), 0.3);
  // Single rejection round: mismatches a few tens of pixels off, not arbitrary pairs.
  std::uniform_real_distribution<double> ang(0.0, 2.0 * M_PI);
  for (int i = 0; i < 5; ++i) {
    const double a = ang(rng);
    tv.cs[static_cast<std::size_t>(i)].p2 += 25.0 * Pixel(std::cos(a), std::sin(a));
  }
  const TranslationEstimate est = solve_translation(tv.cs, rel(tv.r), kCam);
  int flagged = 0;
  for (int i = 0; i < 5; ++i) flagged += est.inliers[static_cast<std::size_t>(i)] ? 0 : 1;
  CHECK(flagged >= 4);
  CHECK(std::count(est.inliers.begin(), est.inliers.end(), true) >= 75);
  CHECK(angle_between(est.direction.vec(), tv.t.normalized()) < 1.0 * kDeg);
}

TEST_CASE("correspondence depths") {
  std::mt19937_64 rng(10);
  const TwoView tv = two_view(rng, 20, small_rotation(rng), Vec3(0.5, 0.1, 0.0));
  for (std::size_t i = 0; i < tv.cs.size(); ++i) {
    const Eigen::Vector2d z = correspondence_depths(tv.cs[i], tv.r, tv.t, kCam);
    CHECK(std::abs(z.x() - tv.points[i].z()) < 1e-9);
    CHECK(std::abs(z.y() - (tv.r * tv.points[i] + tv.t).z()) < 1e-9);
  }
}

namespace {

struct InitScene {
  FrameObservations f1, f2;
  FrameMatches matches;
  std::vector<Vec3> points;
  std::vector<Segment3> lines;
  Mat3 r;
  Vec3 t;
};

InitScene init_scene(std::mt19937_64& rng, int n_points, int n_lines) {
  InitScene s;
  s.r = oracle::axis_angle(Vec3(0.02, -0.05, 0.01));
  s.t = Vec3(0.6, 0.05, 0.1);
  std::uniform_real_distribution<double> xy(-2.0, 2.0), z(3.0, 8.0);
  while (static_cast<int>(s.points.size()) < n_points) {
    const Vec3 p(xy(rng), xy(rng), z(rng));
    const Pixel a = project(p, kCam), b = project(s.r * p + s.t, kCam);
    if (!kCam.in_bounds(a) || !kCam.in_bounds(b)) continue;
    s.matches.points.push_back({static_cast<int>(s.f1.points.size()), static_cast<int>(s.f2.points.size()), 0});
    s.f1.points.push_back({a, {}, {}});
    s.f2.points.push_back({b, {}, {}});
    s.points.push_back(p);
  }
  while (static_cast<int>(s.lines.size()) < n_lines) {
    // Vertical and depth-running edges; none parallel to the x baseline.
    const Vec3 p(xy(rng), xy(rng), z(rng));
    const Vec3 d = s.lines.size() % 2 == 0 ? Vec3(0, 1, 0) : Vec3(0, 0, 1);
    const Segment3 seg{p, p + 1.0 * d};
    const Pixel a0 = project(seg.start, kCam), a1 = project(seg.end, kCam);
    const Pixel b0 = project(s.r * seg.start + s.t, kCam), b1 = project(s.r * seg.end + s.t, kCam);
    if (!kCam.in_bounds(a0) || !kCam.in_bounds(a1) || !kCam.in_bounds(b0) || !kCam.in_bounds(b1)) continue;
    if ((a1 - a0).norm() < 20.0 || (b1 - b0).norm() < 20.0) continue;
    s.matches.lines.push_back({static_cast<int>(s.f1.lines.size()), static_cast<int>(s.f2.lines.size()), 0});
    s.f1.lines.push_back({a0, a1, {}, {}});
    s.f2.lines.push_back({b0, b1, {}, {}});
    s.lines.push_back(seg);
  }
  return s;
}

}  // namespace

TEST_CASE("initial map matches the scene up to scale") {
  std::mt19937_64 rng(11);
  const InitScene s = init_scene(rng, 80, 12);
  const InitialMap map = initialize_map(s.f1, s.f2, s.matches, rel(s.r), s.t.normalized(), kCam);
  const double scale = 1.0 / s.t.norm();
  CHECK(map.points.size() == 80);
  CHECK(map.lines.size() == 12);
  CHECK((map.cam1_from_cam2.t() + s.r.transpose() * s.t.normalized()).norm() < 1e-12);
  for (const auto& p : map.points) {
    CHECK((p.position - scale * s.points[static_cast<std::size_t>(p.feature1)]).norm() < 1e-6 * 8.0);
  }
  for (const auto& l : map.lines) {
    const Segment3& gt = s.lines[static_cast<std::size_t>(l.feature1)];
    const Segment3 scaled{scale * gt.start, scale * gt.end};
    CHECK(point_to_line_distance(l.segment.start, scaled) < 1e-6 * 8.0);
    CHECK(point_to_line_distance(l.segment.end, scaled) < 1e-6 * 8.0);
  }
}

TEST_CASE("wrong matches are dropped by the reprojection gate") {
  std::mt19937_64 rng(12);
  InitScene s = init_scene(rng, 100, 0);
  // Rotate the second-frame indices of the first 20 matches.
  for (int i = 0; i < 20; ++i) s.matches.points[static_cast<std::size_t>(i)].b = (i + 1) % 20;
  const InitialMap map = initialize_map(s.f1, s.f2, s.matches, rel(s.r), s.t.normalized(), kCam);
  int wrong = 0;
  for (const auto& p : map.points) {
    if (p.feature1 < 20) {
      ++wrong;
      continue;
    }
    CHECK((p.position - s.points[static_cast<std::size_t>(p.feature1)] / s.t.norm()).norm() < 1e-5);
  }
  CHECK(wrong <= 1);
  CHECK(map.points.size() >= 80);
}

TEST_CASE("lines alone can initialize; too few landmarks fail") {
  std::mt19937_64 rng(13);
  const InitScene lines_only = init_scene(rng, 0, 10);
  InitOptions opts;
  opts.min_landmarks = 10;
  const InitialMap map = initialize_map(lines_only.f1, lines_only.f2, lines_only.matches, rel(lines_only.r),
                                        lines_only.t.normalized(), kCam, opts);
  CHECK(map.points.empty());
  CHECK(map.lines.size() == 10);
  CHECK(code_of([&] {
          initialize_map(lines_only.f1, lines_only.f2, lines_only.matches, rel(lines_only.r), lines_only.t.normalized(),
                         kCam);
        }) == ErrorCode::InitializationFailed);
}
