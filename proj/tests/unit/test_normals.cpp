#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>

#include "../oracles.hpp"
#include "structvo/error.hpp"
#include "structvo/normal_map.hpp"
#include "structvo/sim_world.hpp"

using namespace structvo;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("structvo_normals_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

sim::ScenePlane plane(const Vec3& center, const Vec3& normal, double half) {
  sim::ScenePlane p;
  p.center = center;
  p.normal = normal.normalized();
  p.axis_u = p.normal.unitOrthogonal();
  p.axis_v = p.normal.cross(p.axis_u);
  p.half_u = half;
  p.half_v = half;
  return p;
}

// volatile keeps GCC's SLP vectorizer from folding away the rounding.
double as_float(double x) {
  volatile float f = static_cast<float>(x);
  return f;
}

double deg(double rad) { return rad * 180.0 / M_PI; }

}  // namespace

TEST_CASE("fronto-parallel plane gives camera-facing normals") {
  const CameraIntrinsics k{};
  const DepthMap d(k.width, k.height, 2.0);
  const NormalMap n = normals_from_depth(d, k);
  CHECK(n.satisfies_invariants());
  int checked = 0;
  for (int v = 2; v < k.height - 2; ++v) {
    for (int u = 2; u < k.width - 2; ++u) {
      REQUIRE(n.valid(u, v));
      CHECK(n.planar(u, v));
      CHECK((n.normal(u, v) - Vec3(0, 0, -1)).norm() < 1e-6);
      ++checked;
    }
  }
  CHECK(checked > 290000);
}

TEST_CASE("slanted plane normals match the analytic normal") {
  const CameraIntrinsics k{};
  sim::PlanarScene scene;
  const Vec3 normal = Vec3(0.4, -0.3, -1.0).normalized();
  scene.planes.push_back(plane(Vec3(0, 0, 3), normal, 50.0));
  const Pose pose = Pose::identity(FrameTag::world());
  const DepthMap d = sim::render_depth(scene, pose, k);
  const NormalMap n = normals_from_depth(d, k);
  double worst = 0.0;
  for (int v = 2; v < k.height - 2; ++v) {
    for (int u = 2; u < k.width - 2; ++u) {
      REQUIRE(n.valid(u, v));
      worst = std::max(worst, std::acos(std::clamp(n.normal(u, v).dot(normal), -1.0, 1.0)));
    }
  }
  CHECK(deg(worst) < 0.1);
}

TEST_CASE("depth step is masked as non-planar") {
  const CameraIntrinsics k{};
  DepthMap d(k.width, k.height, 2.0);
  for (int v = 0; v < k.height; ++v) {
    for (int u = k.width / 2; u < k.width; ++u) d.at(u, v) = 3.0;
  }
  const NormalMap n = normals_from_depth(d, k);
  for (int v = 10; v < k.height - 10; ++v) {
    for (int u = k.width / 2 - 2; u <= k.width / 2 + 1; ++u) CHECK_FALSE(n.planar(u, v));
    CHECK(n.planar(k.width / 4, v));
  }
}

TEST_CASE("missing depth is invalid, dimensions are checked") {
  const CameraIntrinsics k{};
  DepthMap d(k.width, k.height, 2.0);
  d.at(100, 100) = 0.0;
  const NormalMap n = normals_from_depth(d, k);
  CHECK_FALSE(n.valid(100, 100));
  CHECK_FALSE(n.planar(100, 100));
  CHECK(n.normal(100, 100) == Vec3::Zero());
  CHECK(n.satisfies_invariants());
  try {
    normals_from_depth(DepthMap(10, 10, 1.0), k);
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
}

TEST_CASE("normals from depth follow an in-plane camera roll") {
  const CameraIntrinsics k{};
  sim::PlanarScene scene;
  scene.planes.push_back(plane(Vec3(0, 0, 4), Vec3(0.5, 0.2, -1.0), 60.0));
  for (double roll_deg : {17.0, 45.0, 90.0, 163.0}) {
    const Mat3 roll = Eigen::AngleAxisd(roll_deg * M_PI / 180.0, Vec3::UnitZ()).toRotationMatrix();
    const Pose upright = Pose::identity(FrameTag::world());
    const Pose rolled(RotationMatrix(roll, FrameTag::camera(0), FrameTag::world()), Vec3::Zero());
    const NormalMap a = normals_from_depth(sim::render_depth(scene, upright, k), k);
    const NormalMap b = normals_from_depth(sim::render_depth(scene, rolled, k), k);
    // Same surface, so camera-frame normals differ by the roll.
    const Vec3 na = a.normal(k.width / 2, k.height / 2);
    for (int v = 20; v < k.height - 20; v += 37) {
      for (int u = 20; u < k.width - 20; u += 41) {
        REQUIRE(b.valid(u, v));
        const Vec3 expected = roll.transpose() * na;
        CHECK(deg(std::acos(std::clamp(b.normal(u, v).dot(expected), -1.0, 1.0))) < 0.2);
      }
    }
  }
}

TEST_CASE("NRM1 files round trip bit-identically") {
  const fs::path dir = scratch_dir("nrm");
  NormalMap m(7, 5);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int v = 0; v < 5; ++v) {
    for (int u = 0; u < 7; ++u) {
      if ((u + v) % 4 == 0) continue;
      // Float-representable unit vectors so the stored float32 data is exact.
      const Vec3 d = Vec3(g(rng), g(rng), g(rng)).normalized();
      const Vec3 n(as_float(d.x()), as_float(d.y()), as_float(d.z()));
      m.set_exact(u, v, n, (u * v) % 3 == 0);
    }
  }
  write_normal_map(dir / "000003.nrm", m);
  const NormalMap back = read_normal_map(dir / "000003.nrm");
  CHECK(back == m);
  const FileNormalProvider provider(dir);
  CHECK(provider.provide(3) == m);
  CHECK(provider.provide(3) == provider.provide(3));
  try {
    provider.provide(4);
    FAIL("expected FrameNotFound");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FrameNotFound);
  }
}

TEST_CASE("corrupt NRM1 files are rejected") {
  const fs::path dir = scratch_dir("corrupt");
  {
    std::ofstream(dir / "bad_magic.nrm", std::ios::binary) << "NRM2xxxxxxxx";
  }
  NormalMap m(4, 4);
  m.set(1, 1, Vec3(0, 0, -1), true);
  write_normal_map(dir / "ok.nrm", m);
  fs::resize_file(dir / "ok.nrm", fs::file_size(dir / "ok.nrm") - 3);
  for (const char* name : {"bad_magic.nrm", "ok.nrm"}) {
    try {
      read_normal_map(dir / name);
      FAIL("expected CorruptInput");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::CorruptInput);
    }
  }
}

TEST_CASE("depth files round trip and the depth provider matches the direct path") {
  const CameraIntrinsics k{};
  const fs::path dir = scratch_dir("depth");
  sim::PlanarScene scene;
  scene.planes.push_back(plane(Vec3(0, 0, 3), Vec3(0.2, -0.1, -1.0), 40.0));
  const DepthMap d = sim::render_depth(scene, Pose::identity(FrameTag::world()), k);

  write_depth_float(dir / "000001.depth", d);
  const DepthMap f = read_depth_float(dir / "000001.depth");
  for (std::size_t i = 0; i < d.data().size(); ++i) CHECK(f.data()[i] == static_cast<double>(static_cast<float>(d.data()[i])));

  write_depth_png(dir / "000002.png", d);
  const DepthMap p = read_depth_png(dir / "000002.png");
  double worst = 0.0;
  for (std::size_t i = 0; i < d.data().size(); ++i) worst = std::max(worst, std::abs(p.data()[i] - d.data()[i]));
  CHECK(worst <= 0.5 / 5000.0 + 1e-12);

  const DepthNormalProvider provider(dir, k);
  CHECK(provider.provide(1) == normals_from_depth(read_depth(dir / "000001.depth"), k));
  CHECK(provider.provide(2) == normals_from_depth(read_depth(dir / "000002.png"), k));
  try {
    provider.provide(9);
    FAIL("expected FrameNotFound");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FrameNotFound);
  }
}

TEST_CASE("NormalMap set normalizes and keeps masks consistent") {
  NormalMap m(3, 3);
  CHECK_FALSE(m.valid(0, 0));
  m.set(0, 0, Vec3(0, 0, -5), true);
  CHECK(m.normal(0, 0).isApprox(Vec3(0, 0, -1)));
  CHECK(m.valid(0, 0));
  m.set_invalid(0, 0);
  CHECK_FALSE(m.planar(0, 0));
  CHECK(m.satisfies_invariants());
  CHECK(frame_stem(42) == "000042");
}
