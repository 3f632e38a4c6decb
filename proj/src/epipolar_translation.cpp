#include "structvo/epipolar_translation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/SVD>

#include "structvo/error.hpp"

namespace structvo {

Vec3 constraint_row(const Correspondence2D& c, const Mat3& cam2_from_cam1, const CameraIntrinsics& k) {
  const Vec3 x1 = normalize_pixel(c.p1, k);
  const Vec3 x2 = normalize_pixel(c.p2, k);
  return x2.cross(cam2_from_cam1 * x1);
}

Eigen::Vector2d correspondence_depths(const Correspondence2D& c, const Mat3& r, const Vec3& t,
                                      const CameraIntrinsics& k) {
  const Vec3 x1 = normalize_pixel(c.p1, k);
  const Vec3 x2 = normalize_pixel(c.p2, k);
  // z2 x2 = z1 R x1 + t
  Eigen::Matrix<double, 3, 2> a;
  a.col(0) = r * x1;
  a.col(1) = -x2;
  return a.colPivHouseholderQr().solve(-t);
}

namespace {

struct SvdSolution {
  Vec3 t;
  double ratio;
};

SvdSolution solve_rows(const std::vector<Vec3>& rows, const std::vector<bool>& use) {
  int n = 0;
  for (bool u : use) n += u ? 1 : 0;
  Eigen::MatrixXd a(n, 3);
  int r = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (use[i]) a.row(r++) = rows[i].transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Vec3 s = svd.singularValues();
  if (!(s(0) > 1e-10 * std::sqrt(static_cast<double>(n)))) fail(ErrorCode::DegenerateTranslation, "no parallax: constraint matrix is zero");
  const double ratio = s(2) > 0.0 ? s(1) / s(2) : std::numeric_limits<double>::infinity();
  return {svd.matrixV().col(2), ratio};
}

double median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

TranslationEstimate solve_translation(std::span<const Correspondence2D> cs, const RotationMatrix& cam2_from_cam1,
                                      const CameraIntrinsics& k, const TranslationSolveOptions& opts) {
  if (cs.size() < 3) fail(ErrorCode::TooFewCorrespondences, "need at least 3 correspondences");
  const Mat3& r = cam2_from_cam1.matrix();
  std::vector<Vec3> rows;
  rows.reserve(cs.size());
  for (const auto& c : cs) {
    // Unit-bearing normalization makes each residual an angle-like quantity.
    const Vec3 x1 = normalize_pixel(c.p1, k);
    const Vec3 x2 = normalize_pixel(c.p2, k);
    rows.push_back(constraint_row(c, r, k) / (x1.norm() * x2.norm()));
  }
  std::vector<bool> use(rows.size(), true);
  SvdSolution sol = solve_rows(rows, use);

  std::vector<double> res(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) res[i] = rows[i].dot(sol.t);
  const double med = median(res);
  std::vector<double> dev(res.size());
  for (std::size_t i = 0; i < res.size(); ++i) dev[i] = std::abs(res[i] - med);
  const double threshold = std::max(opts.mad_factor * median(dev), 1e-12);
  int kept = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    use[i] = std::abs(res[i]) <= threshold;
    kept += use[i] ? 1 : 0;
  }
  if (kept >= 3 && kept < static_cast<int>(rows.size())) sol = solve_rows(rows, use);
  else if (kept < 3) std::fill(use.begin(), use.end(), true);

  if (!(sol.ratio >= opts.min_condition_ratio)) {
    fail(ErrorCode::DegenerateTranslation,
         "condition ratio " + std::to_string(sol.ratio) + " below " + std::to_string(opts.min_condition_ratio));
  }

  int positive = 0, negative = 0;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    if (!use[i]) continue;
    const Eigen::Vector2d z = correspondence_depths(cs[i], r, sol.t, k);
    if (z(0) > 0.0 && z(1) > 0.0) ++positive;
    else if (z(0) < 0.0 && z(1) < 0.0) ++negative;
  }
  if (negative > positive) sol.t = -sol.t;

  TranslationEstimate est;
  est.direction = UnitVec3::normalized(sol.t);
  est.inliers = use;
  est.condition_ratio = sol.ratio;
  return est;
}

InitialMap initialize_map(const FrameObservations& f1, const FrameObservations& f2, const FrameMatches& matches,
                          const RotationMatrix& cam2_from_cam1, const Vec3& t_dir, const CameraIntrinsics& k,
                          const InitOptions& opts) {
  const FrameTag c1 = cam2_from_cam1.source();
  const Pose cam2_from_1(cam2_from_cam1, t_dir.normalized());
  const Pose pose1 = Pose::identity(c1);
  const Pose pose2 = inverse(cam2_from_1);

  InitialMap out{pose2, {}, {}};
  auto reproj_ok = [&](const Vec3& p_cam1, const Pixel& obs1, const Pixel& obs2) {
    const Vec3 p2 = cam2_from_1 * p_cam1;
    if (!(p_cam1.z() > kMinDepth) || !(p2.z() > kMinDepth)) return false;
    return (project(p_cam1, k) - obs1).norm() <= opts.max_reprojection_px &&
           (project(p2, k) - obs2).norm() <= opts.max_reprojection_px;
  };
  for (const Match& m : matches.points) {
    const Pixel& a = f1.points[m.a].pixel;
    const Pixel& b = f2.points[m.b].pixel;
    try {
      const Vec3 p = triangulate_point(a, b, pose1, pose2, k);
      if (reproj_ok(p, a, b)) out.points.push_back({p, m.a, m.b});
    } catch (const Error&) {
    }
  }

  auto line_distance = [&](const Vec3& p_cam, const LineFeature& l) {
    const Pixel q = project(p_cam, k);
    const Vec2 d = l.end - l.start;
    return std::abs(d.x() * (q.y() - l.start.y()) - d.y() * (q.x() - l.start.x())) / d.norm();
  };
  for (const Match& m : matches.lines) {
    const LineFeature& a = f1.lines[m.a];
    const LineFeature& b = f2.lines[m.b];
    try {
      const Segment3 s = triangulate_line(a, b, pose1, pose2, k);
      bool ok = true;
      for (const Vec3& e : {s.start, s.end}) {
        const Vec3 e2 = cam2_from_1 * e;
        if (!(e.z() > kMinDepth) || !(e2.z() > kMinDepth) || line_distance(e, a) > opts.max_reprojection_px ||
            line_distance(e2, b) > opts.max_reprojection_px) {
          ok = false;
        }
      }
      if (ok) out.lines.push_back({s, m.a, m.b});
    } catch (const Error&) {
    }
  }
  if (static_cast<int>(out.landmark_count()) < opts.min_landmarks) {
    fail(ErrorCode::InitializationFailed, std::to_string(out.landmark_count()) + " landmarks survived, need " +
                                              std::to_string(opts.min_landmarks));
  }
  return out;
}

}  // namespace structvo
