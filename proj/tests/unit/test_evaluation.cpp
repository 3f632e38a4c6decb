#include "doctest.h"

#include <random>

#include "../oracles.hpp"
#include "structvo/error.hpp"
#include "structvo/evaluation.hpp"

using namespace structvo;

namespace {

Pose pose(const Mat3& r, const Vec3& t, double ts) {
  return Pose(RotationMatrix(r, FrameTag::camera(0), FrameTag::world()), t, ts);
}

std::vector<Pose> random_walk(std::mt19937_64& rng, std::size_t n, double dt = 1.0 / 30.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Pose> out;
  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(pose(r, t, static_cast<double>(i) * dt));
    r = oracle::axis_angle(0.02 * Vec3(g(rng), g(rng), g(rng))) * r;
    t += 0.05 * Vec3(g(rng), g(rng), g(rng));
  }
  return out;
}

std::vector<Vec3> positions(const std::vector<Pose>& poses) {
  std::vector<Vec3> out;
  for (const auto& p : poses) out.push_back(p.t());
  return out;
}

std::vector<Eigen::Matrix4d> matrices(const std::vector<Pose>& poses) {
  std::vector<Eigen::Matrix4d> out;
  for (const auto& p : poses) out.push_back(oracle::homogeneous(p.R(), p.t()));
  return out;
}

std::vector<Pose> transformed(const std::vector<Pose>& poses, const Mat3& r, const Vec3& t, double s = 1.0) {
  std::vector<Pose> out;
  for (const auto& p : poses) out.push_back(pose(r * p.R(), s * (r * p.t()) + t, p.timestamp()));
  return out;
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

TEST_CASE("association") {
  std::mt19937_64 rng(1);
  const auto gt = random_walk(rng, 50);
  const IndexPairs same = associate(Trajectory(gt), Trajectory(gt));
  REQUIRE(same.size() == 50);
  for (std::size_t i = 0; i < same.size(); ++i) CHECK(same[i] == std::make_pair(i, i));

  std::vector<Pose> shifted;
  for (const auto& p : gt) shifted.push_back(p.with_timestamp(p.timestamp() + 0.005));
  CHECK(associate(Trajectory(shifted), Trajectory(gt), 0.02).size() == 50);

  std::vector<Pose> later;
  for (const auto& p : gt) later.push_back(p.with_timestamp(p.timestamp() + 100.0));
  CHECK(code_of([&] { associate(Trajectory(later), Trajectory(gt)); }) == ErrorCode::NoOverlap);
}

TEST_CASE("similarity alignment, exact cases") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Vec3> gt;
  for (int i = 0; i < 20; ++i) gt.emplace_back(g(rng), g(rng), g(rng));
  const Sim3 id = align_sim3(gt, gt);
  CHECK(std::abs(id.scale - 1.0) < 1e-12);
  CHECK((id.rotation - Mat3::Identity()).norm() < 1e-12);
  CHECK(id.translation.norm() < 1e-12);

  const Mat3 r0 = oracle::random_rotation(rng);
  const Vec3 t0(1.0, -2.0, 0.5);
  std::vector<Vec3> est;
  for (const auto& p : gt) est.push_back(0.5 * r0.transpose() * (p - t0));
  const Sim3 s = align_sim3(est, gt);
  CHECK(std::abs(s.scale - 2.0) < 1e-9);
  CHECK((s.rotation - r0).norm() < 1e-9);
  CHECK((s.translation - t0).norm() < 1e-9);

  const std::vector<Vec3> line{Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(2, 2, 2), Vec3(3, 3, 3)};
  CHECK(code_of([&] { align_sim3(line, line); }) == ErrorCode::DegenerateConfiguration);
}

TEST_CASE("similarity alignment matches a brute-force minimizer") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec3> est, gt;
    const Mat3 r = oracle::random_rotation(rng);
    for (int i = 0; i < 10; ++i) {
      const Vec3 p(g(rng), g(rng), g(rng));
      est.push_back(p);
      gt.push_back(1.7 * r * p + Vec3(0.3, 0.1, -0.2) + 0.05 * Vec3(g(rng), g(rng), g(rng)));
    }
    const Sim3 s = align_sim3(est, gt);
    const oracle::Similarity brute = oracle::brute_force_similarity(est, gt);
    CHECK(std::abs(ate_rmse(est, gt, s) - oracle::ate_rmse(brute, est, gt)) < 1e-6);
    // Never worse than the identity alignment.
    CHECK(ate_rmse(est, gt, s) <= ate_rmse(est, gt, Sim3{}) + 1e-12);
  }
}

TEST_CASE("ATE hand case") {
  const std::vector<Vec3> gt{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  std::vector<Vec3> est = gt;
  est[0].x() += 0.1;
  CHECK(ate_rmse(est, gt, Sim3{}) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(ate_rmse(gt, gt, Sim3{}) == 0.0);
  const auto errors = ate_errors(est, gt, Sim3{});
  CHECK(errors[0] == doctest::Approx(0.1));
  CHECK(errors[1] == 0.0);
}

TEST_CASE("ATE is invariant to a similarity applied to the estimate") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 0.02);
  const auto gt = random_walk(rng, 80);
  std::vector<Vec3> est = positions(gt);
  for (auto& p : est) p += Vec3(g(rng), g(rng), g(rng));
  const double base = ate_rmse(est, positions(gt), align_sim3(est, positions(gt)));
  for (int i = 0; i < 10; ++i) {
    const Mat3 r = oracle::random_rotation(rng);
    const double s = 0.2 + 3.0 * std::abs(g(rng)) / 0.02;
    std::vector<Vec3> moved;
    for (const auto& p : est) moved.push_back(s * r * p + Vec3(3, -1, 2));
    CHECK(std::abs(ate_rmse(moved, positions(gt), align_sim3(moved, positions(gt))) - base) < 1e-9);
  }
}

TEST_CASE("RPE invariances and oracle agreement") {
  std::mt19937_64 rng(5);
  const auto gt = random_walk(rng, 60);
  const RpeResult zero = rpe(gt, gt, 1);
  CHECK(zero.trans_rmse < 1e-12);
  CHECK(zero.rot_rmse_deg < 1e-5);
  CHECK(zero.pairs == 59);

  const auto moved = transformed(gt, oracle::random_rotation(rng), Vec3(5, 1, -2));
  const RpeResult offset = rpe(moved, gt, 1);
  CHECK(offset.trans_rmse < 1e-12);
  CHECK(offset.rot_rmse_deg < 1e-5);

  std::normal_distribution<double> g(0.0, 0.01);
  std::vector<Pose> noisy;
  for (const auto& p : gt) {
    noisy.push_back(pose(oracle::axis_angle(Vec3(g(rng), g(rng), g(rng))) * p.R(), p.t() + Vec3(g(rng), g(rng), g(rng)),
                         p.timestamp()));
  }
  for (std::size_t delta : {1u, 5u}) {
    const RpeResult ours = rpe(noisy, gt, delta);
    const oracle::RpeValues ref = oracle::rpe(matrices(noisy), matrices(gt), delta);
    CHECK(std::abs(ours.trans_rmse - ref.trans_rmse) < 1e-9);
    CHECK(std::abs(ours.rot_rmse_deg - ref.rot_rmse_deg) < 1e-6);
  }
}

TEST_CASE("per-step rotation noise shows up as rotational RPE") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 1.0);
  const auto gt = random_walk(rng, 2001);
  // Each step's relative motion is perturbed by a 0.1 deg rotation about a random axis.
  std::vector<Pose> est{gt.front()};
  for (std::size_t i = 1; i < gt.size(); ++i) {
    const Pose rel = compose(inverse(gt[i - 1]), gt[i]);
    const Vec3 axis = Vec3(g(rng), g(rng), g(rng)).normalized();
    const Mat3 noisy_r = rel.R() * oracle::axis_angle(axis * 0.1 * M_PI / 180.0);
    const Pose step(RotationMatrix(noisy_r, rel.source(), rel.target()), rel.t());
    est.push_back(compose(est.back(), step).with_timestamp(gt[i].timestamp()));
  }
  CHECK(rpe(est, gt, 1).rot_rmse_deg == doctest::Approx(0.1).epsilon(1e-3));
}

TEST_CASE("TUM canonical text round trips bit-stably") {
  const std::string canonical =
      "0.000000 0.000000000 0.000000000 0.000000000 0.000000000 0.000000000 0.000000000 1.000000000\n"
      "0.033333 0.100000000 -0.200000000 0.300000000 0.000000000 0.382683432 0.000000000 0.923879533\n";
  CHECK(format_tum(parse_tum(canonical)) == canonical);
  CHECK(format_tum(parse_tum("# comment\n" + canonical)) == canonical);

  // Slightly off-unit quaternions are renormalized; far-off ones rejected.
  const Trajectory renorm = parse_tum("1.0 0 0 0 0 0 0 1.00001\n");
  CHECK((renorm[0].R() - Mat3::Identity()).norm() < 1e-12);
  CHECK(code_of([] { parse_tum("1.0 0 0 0 0 0 0 1.01\n"); }) == ErrorCode::CorruptInput);
  CHECK(code_of([] { parse_tum("1.0 0 0 0\n"); }) == ErrorCode::CorruptInput);
  CHECK(code_of([] { parse_tum("1.0 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n"); }) == ErrorCode::CorruptInput);

  std::mt19937_64 rng(7);
  const Trajectory walk(random_walk(rng, 30));
  const std::string once = format_tum(walk);
  CHECK(format_tum(parse_tum(once)) == once);
}

TEST_CASE("report outputs") {
  std::mt19937_64 rng(8);
  const auto gt = random_walk(rng, 40);
  const MetricReport self = evaluate(Trajectory(gt), Trajectory(gt));
  CHECK(self.ate_rmse < 1e-9);
  CHECK(self.matched == 40);
  CHECK(format_table_row("walk", self) == "| walk | 0.0000 | 0.0000 | 0.000 | 40 |");

  const std::string csv = format_error_csv(self);
  CHECK(csv.rfind("timestamp,ate_error\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 41);

  const std::string svg = format_svg({{"gt", positions(gt)}, {"est", positions(gt)}});
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  std::size_t polylines = 0;
  for (std::size_t pos = svg.find("<polyline"); pos != std::string::npos; pos = svg.find("<polyline", pos + 1)) ++polylines;
  CHECK(polylines == 2);
}
