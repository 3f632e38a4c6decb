#include "doctest.h"

#include <random>

#include "../oracles.hpp"
#include "structvo/camera.hpp"
#include "structvo/error.hpp"
#include "structvo/geometry.hpp"

using namespace structvo;

namespace {

const CameraIntrinsics kCam{};

Pose random_pose(std::mt19937_64& rng, FrameTag source, FrameTag target) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  return {RotationMatrix(oracle::random_rotation(rng), source, target), Vec3(u(rng), u(rng), u(rng))};
}

double pose_gap(const Pose& a, const Pose& b) { return (a.R() - b.R()).norm() + (a.t() - b.t()).norm(); }

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

TEST_CASE("project on the optical axis and off it") {
  CHECK(project(Vec3(0, 0, 1), kCam).isApprox(Pixel(320, 240)));
  CHECK(project(Vec3(1, 0, 2), kCam).isApprox(Pixel(570, 240)));
  // Recomputed in long double.
  const long double x = 0.3L, y = -0.2L, z = 1.7L;
  const Pixel p = project(Vec3(0.3, -0.2, 1.7), kCam);
  CHECK(std::abs(p.x() - static_cast<double>(500.0L * x / z + 320.0L)) < 1e-12);
  CHECK(std::abs(p.y() - static_cast<double>(500.0L * y / z + 240.0L)) < 1e-12);
}

TEST_CASE("project rejects non-positive depth") {
  CHECK(code_of([] { project(Vec3(0, 0, 0), kCam); }) == ErrorCode::NonPositiveDepth);
  CHECK(code_of([] { project(Vec3(1, 1, -1), kCam); }) == ErrorCode::NonPositiveDepth);
  CHECK(code_of([] { project(Vec3(1, 1, 1e-13), kCam); }) == ErrorCode::NonPositiveDepth);
}

TEST_CASE("normalize_pixel inverts project") {
  CHECK(normalize_pixel(Pixel(320, 240), kCam).isApprox(Vec3(0, 0, 1)));
  CHECK(normalize_pixel(Pixel(570, 240), kCam).isApprox(Vec3(0.5, 0, 1)));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 640.0), v(0.0, 480.0), z(0.1, 50.0);
  for (int i = 0; i < 1000; ++i) {
    const Pixel p(u(rng), v(rng));
    CHECK((project(z(rng) * normalize_pixel(p, kCam), kCam) - p).norm() < 1e-9);
    const Vec3 pt(u(rng) - 320.0, v(rng) - 240.0, z(rng));
    CHECK((normalize_pixel(project(pt, kCam), kCam) - Vec3(pt.x() / pt.z(), pt.y() / pt.z(), 1.0)).norm() < 1e-9);
  }
}

TEST_CASE("intrinsics validation and downsampling") {
  CameraIntrinsics bad = kCam;
  bad.fx = 0.0;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::CorruptInput);
  const CameraIntrinsics q = kCam.downsampled(4);
  CHECK(q.width == 160);
  CHECK(q.height == 120);
  // A map pixel center covers the same ray as the full-resolution block center.
  const Vec3 ray = normalize_pixel(Pixel(1.5, 1.5), kCam);
  const Pixel small = project(ray, q);
  CHECK(small.norm() < 1e-12);
}

TEST_CASE("RotationMatrix checks its invariants") {
  CHECK_NOTHROW(RotationMatrix(Mat3::Identity(), FrameTag::world(), FrameTag::camera(1)));
  CHECK(code_of([] { RotationMatrix(2.0 * Mat3::Identity(), FrameTag::world(), FrameTag::world()); }) ==
        ErrorCode::InvalidRotation);
  Mat3 reflect = Mat3::Identity();
  reflect(2, 2) = -1.0;
  CHECK(code_of([&] { RotationMatrix(reflect, FrameTag::world(), FrameTag::world()); }) ==
        ErrorCode::InvalidRotation);
}

TEST_CASE("UnitVec3 normalizes and checks") {
  CHECK(UnitVec3::normalized(Vec3(0, 3, 4)).vec().isApprox(Vec3(0, 0.6, 0.8)));
  CHECK_NOTHROW(UnitVec3::from_unit(Vec3(1, 0, 0)));
  CHECK_THROWS_AS(UnitVec3::from_unit(Vec3(1, 1, 0)), Error);
  CHECK_THROWS_AS(UnitVec3::normalized(Vec3::Zero()), Error);
}

TEST_CASE("nearest_rotation trivial cases") {
  CHECK(nearest_rotation_matrix(Mat3::Identity()).isApprox(Mat3::Identity(), 1e-15));
  std::mt19937_64 rng(5);
  const Mat3 r = oracle::random_rotation(rng);
  CHECK((nearest_rotation_matrix(2.0 * r) - r).norm() < 1e-12);
  CHECK(code_of([] { nearest_rotation_matrix(Mat3::Zero()); }) == ErrorCode::SingularInput);
  Mat3 rank2 = Mat3::Identity();
  rank2(2, 2) = 0.0;
  CHECK(code_of([&] { nearest_rotation_matrix(rank2); }) == ErrorCode::SingularInput);
}

TEST_CASE("nearest_rotation matches a grid search over angle-axis") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat3 r = oracle::random_rotation(rng);
    Mat3 e;
    for (int i = 0; i < 9; ++i) e.data()[i] = 0.05 * n(rng);
    const Mat3 m = r + e;
    const Mat3 got = nearest_rotation(m, FrameTag::world(), FrameTag::world()).matrix();
    // Coarse-to-fine grid over left increments around R.
    Mat3 best = r;
    double best_cost = (r - m).norm();
    for (double step : {0.02, 0.004, 0.0008, 0.00016, 0.000032}) {
      const Mat3 center = best;
      for (int i = -5; i <= 5; ++i) {
        for (int j = -5; j <= 5; ++j) {
          for (int k = -5; k <= 5; ++k) {
            const Mat3 cand = oracle::axis_angle(step * Vec3(i, j, k)) * center;
            const double c = (cand - m).norm();
            if (c < best_cost) {
              best_cost = c;
              best = cand;
            }
          }
        }
      }
    }
    CHECK((got - m).norm() <= best_cost + 1e-12);
    CHECK(oracle::angle_of(got.transpose() * best) < 1e-4);
    CHECK((got.transpose() * got - Mat3::Identity()).norm() < 1e-12);
    CHECK(got.determinant() > 0.0);
  }
}

TEST_CASE("pose group laws") {
  std::mt19937_64 rng(17);
  const FrameTag w = FrameTag::world(), c1 = FrameTag::camera(1), c2 = FrameTag::camera(2), c3 = FrameTag::camera(3);
  for (int i = 0; i < 200; ++i) {
    const Pose a = random_pose(rng, c1, w);
    const Pose b = random_pose(rng, c2, c1);
    const Pose c = random_pose(rng, c3, c2);
    CHECK(pose_gap(compose(compose(a, b), c), compose(a, compose(b, c))) < 1e-9);
    CHECK(pose_gap(compose(a, inverse(a)), Pose::identity(w)) < 1e-9);
    CHECK(pose_gap(inverse(inverse(a)), a) < 1e-12);
    CHECK(pose_gap(compose(Pose::identity(w), a), a) < 1e-15);
    const Vec3 p(0.3, -1.0, 2.0);
    CHECK((compose(a, b) * p - a * (b * p)).norm() < 1e-12);
  }
}

TEST_CASE("compose checks frame tags") {
  const Pose a = Pose::identity(FrameTag::camera(1));
  const Pose b(RotationMatrix::identity(FrameTag::world()).retagged(FrameTag::camera(2), FrameTag::world()), Vec3::Zero());
  CHECK(code_of([&] { compose(a, b); }) == ErrorCode::FrameMismatch);
  CHECK(inverse(b).source() == FrameTag::world());
  CHECK(inverse(b).target() == FrameTag::camera(2));
}

TEST_CASE("so3 exp and log round trip") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    Vec3 w(n(rng), n(rng), n(rng));
    w = w.normalized() * std::uniform_real_distribution<double>(0.0, 3.1)(rng);
    CHECK((so3_exp(w) - oracle::axis_angle(w)).norm() < 1e-12);
    CHECK((so3_log(so3_exp(w)) - w).norm() < 1e-8);
  }
  const Vec3 near_pi = Vec3(0, 0, 1) * (M_PI - 1e-9);
  CHECK((so3_exp(so3_log(so3_exp(near_pi))) - so3_exp(near_pi)).norm() < 1e-8);
  CHECK(std::abs(rotation_angle(so3_exp(Vec3(0.3, 0, 0))) - 0.3) < 1e-12);
  CHECK(std::abs(rotation_distance(so3_exp(Vec3(0.1, 0, 0)), so3_exp(Vec3(0.4, 0, 0))) - 0.3) < 1e-12);
  CHECK((skew(Vec3(1, 2, 3)) * Vec3(4, 5, 6) - Vec3(1, 2, 3).cross(Vec3(4, 5, 6))).norm() < 1e-15);
}
