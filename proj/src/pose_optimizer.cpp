#include "structvo/pose_optimizer.hpp"

#include <cmath>
#include <optional>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "structvo/error.hpp"

namespace structvo {

namespace {

double huber_cost(double s, double k, bool plain) {
  if (plain || s <= k) return s * s;
  return 2.0 * k * s - k * k;
}

double huber_weight(double s, double k, bool plain) {
  if (plain || s <= k) return 1.0;
  return k / s;
}

template <int N>
class LmProblem {
 public:
  using VecN = Eigen::Matrix<double, N, 1>;
  using MatN = Eigen::Matrix<double, N, N>;

  LmProblem(const std::vector<PointTerm>& points, const std::vector<LineTerm>& lines, const RobustScales& scales,
            const CameraIntrinsics& k)
      : points_(points), lines_(lines), scales_(scales), k_(k) {}

  /// Drops terms behind the camera at the starting estimate.
  int activate(const Mat3& r, const Vec3& t) {
    int dropped = 0;
    active_points_.assign(points_.size(), true);
    active_lines_.assign(lines_.size(), true);
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (!((r * points_[i].world + t).z() > kMinDepth)) {
        active_points_[i] = false;
        ++dropped;
      }
    }
    for (std::size_t i = 0; i < lines_.size(); ++i) {
      if (!((r * lines_[i].world + t).z() > kMinDepth) || line_pixel_scale(lines_[i].line) < 1e-15) {
        active_lines_[i] = false;
        ++dropped;
      }
    }
    return dropped;
  }

  int residual_count() const {
    int n = 0;
    for (bool a : active_points_) n += a ? 2 : 0;
    for (bool a : active_lines_) n += a ? 1 : 0;
    return n;
  }

  /// False if an active term has non-positive depth.
  bool evaluate(const Mat3& r, const Vec3& t, double& cost, MatN* h, VecN* g) const {
    cost = 0.0;
    if (h) h->setZero();
    if (g) g->setZero();
    const bool plain = scales_.plain_least_squares;
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (!active_points_[i]) continue;
      const Vec3 pc = r * points_[i].world + t;
      if (!(pc.z() > kMinDepth)) return false;
      const Vec2 e = points_[i].observed - project(pc, k_);
      const double s = e.norm();
      cost += huber_cost(s, scales_.point_px, plain);
      if (h) {
        const double w = huber_weight(s, scales_.point_px, plain);
        Eigen::Matrix<double, 2, N> j;
        if constexpr (N == 3) j = point_jacobian_t(pc, k_);
        else j = point_jacobian_pose(pc, k_);
        h->noalias() += w * j.transpose() * j;
        g->noalias() += w * j.transpose() * e;
      }
    }
    for (std::size_t i = 0; i < lines_.size(); ++i) {
      if (!active_lines_[i]) continue;
      const Vec3 pc = r * lines_[i].world + t;
      if (!(pc.z() > kMinDepth)) return false;
      const Vec3& l = lines_[i].line;
      const double scale = line_pixel_scale(l);
      const Pixel q = project(pc, k_);
      const double e = l.dot(Vec3(q.x(), q.y(), 1.0)) / scale;
      const double s = std::abs(e);
      cost += huber_cost(s, scales_.line_px, plain);
      if (h) {
        const double w = huber_weight(s, scales_.line_px, plain);
        Eigen::Matrix<double, 1, N> j;
        if constexpr (N == 3) j = line_jacobian_t(pc, l, k_) / scale;
        else j = line_jacobian_pose(pc, l, k_) / scale;
        h->noalias() += w * j.transpose() * j;
        g->noalias() += w * j.transpose() * e;
      }
    }
    return true;
  }

 private:
  const std::vector<PointTerm>& points_;
  const std::vector<LineTerm>& lines_;
  const RobustScales& scales_;
  const CameraIntrinsics& k_;
  std::vector<bool> active_points_;
  std::vector<bool> active_lines_;
};

/// Generic LM loop. `apply` maps (state, step) to a new state; `rt` extracts (R, t).
template <int N, typename State, typename Apply, typename Extract>
State run_lm(LmProblem<N>& problem, State state, Apply apply, Extract rt, const LmOptions& opts, LmSummary& summary) {
  using VecN = typename LmProblem<N>::VecN;
  using MatN = typename LmProblem<N>::MatN;

  {
    const auto [r0, t0] = rt(state);
    summary.dropped_terms = problem.activate(r0, t0);
  }
  if (problem.residual_count() < N) fail(ErrorCode::IllPosed, "fewer scalar residuals than unknowns");

  MatN h;
  VecN g;
  double cost = 0.0;
  {
    const auto [r0, t0] = rt(state);
    problem.evaluate(r0, t0, cost, &h, &g);
  }
  const Eigen::SelfAdjointEigenSolver<MatN> es(h, Eigen::EigenvaluesOnly);
  const double max_ev = es.eigenvalues().maxCoeff();
  if (!(max_ev > 0.0) || !(es.eigenvalues().minCoeff() > 1e-12 * max_ev)) {
    fail(ErrorCode::IllPosed, "normal equations are rank deficient");
  }
  summary.initial_cost = cost;
  summary.accepted_costs.push_back(cost);

  double lambda = opts.lambda_init;
  int rejections = 0;
  for (int it = 0; it < opts.max_iterations; ++it) {
    summary.iterations = it + 1;
    if (cost <= 0.0) {
      summary.converged = true;
      break;
    }
    MatN a = h;
    const double floor = 1e-12 * h.diagonal().maxCoeff();
    for (int i = 0; i < N; ++i) a(i, i) += lambda * std::max(h(i, i), floor);
    const VecN step = a.ldlt().solve(-g);
    if (!step.allFinite()) fail(ErrorCode::Diverged, "non-finite LM step");
    if (step.norm() < opts.step_tolerance) {
      summary.converged = true;
      break;
    }
    const State candidate = apply(state, step);
    double new_cost = 0.0;
    const auto [rc, tc] = rt(candidate);
    const bool valid = problem.evaluate(rc, tc, new_cost, nullptr, nullptr);
    if (valid && new_cost < cost) {
      if (new_cost > summary.accepted_costs.back()) ++summary.monotonic_violations;
      const double relative = (cost - new_cost) / cost;
      state = candidate;
      cost = new_cost;
      summary.accepted_costs.push_back(cost);
      ++summary.accepted_steps;
      lambda *= opts.lambda_down;
      rejections = 0;
      problem.evaluate(rc, tc, cost, &h, &g);
      if (relative < opts.relative_cost_tolerance) {
        summary.converged = true;
        break;
      }
    } else {
      ++summary.rejected_steps;
      lambda *= opts.lambda_up;
      if (++rejections >= opts.max_consecutive_rejections) {
        fail(ErrorCode::Diverged, "cost failed to decrease for " + std::to_string(rejections) + " steps");
      }
    }
  }
  summary.final_cost = cost;
  return state;
}

}  // namespace

InlierSet classify_inliers(const Pose& cam_from_world, const std::vector<PointTerm>& points,
                           const std::vector<LineTerm>& lines, const RobustScales& scales,
                           const CameraIntrinsics& k) {
  InlierSet out;
  out.points.assign(points.size(), false);
  out.lines.assign(lines.size(), false);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 pc = cam_from_world * points[i].world;
    if (!(pc.z() > kMinDepth)) continue;
    if ((points[i].observed - project(pc, k)).norm() < scales.inlier_factor * scales.point_px) {
      out.points[i] = true;
      ++out.point_inliers;
    }
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const Vec3 pc = cam_from_world * lines[i].world;
    const double scale = line_pixel_scale(lines[i].line);
    if (!(pc.z() > kMinDepth) || scale < 1e-15) continue;
    const Pixel q = project(pc, k);
    if (std::abs(lines[i].line.dot(Vec3(q.x(), q.y(), 1.0))) / scale < scales.inlier_factor * scales.line_px) {
      out.lines[i] = true;
      ++out.line_inliers;
    }
  }
  return out;
}

namespace {

struct InlierTerms {
  std::vector<PointTerm> points;
  std::vector<LineTerm> lines;
};

/// Terms flagged inlier, or nullopt when nothing was rejected.
std::optional<InlierTerms> inlier_terms(const std::vector<PointTerm>& points, const std::vector<LineTerm>& lines,
                                        const InlierSet& in) {
  if (in.point_inliers == static_cast<int>(points.size()) && in.line_inliers == static_cast<int>(lines.size())) {
    return std::nullopt;
  }
  InlierTerms out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (in.points[i]) out.points.push_back(points[i]);
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (in.lines[i]) out.lines.push_back(lines[i]);
  }
  return out;
}

/// Second LM pass on the inliers of the first; the Huber tails still bias the
/// first solution when gross outliers are present. Keeps the first solution
/// if the inlier problem is ill-posed or diverges.
template <int N, typename State, typename Apply, typename Extract>
State refine_on_inliers(const std::vector<PointTerm>& points, const std::vector<LineTerm>& lines,
                        const RobustScales& scales, const CameraIntrinsics& k, State state, const InlierSet& first,
                        Apply apply, Extract rt, const LmOptions& opts, LmSummary& refinement) {
  if (scales.plain_least_squares) return state;
  const auto kept = inlier_terms(points, lines, first);
  if (!kept) return state;
  LmProblem<N> lm(kept->points, kept->lines, scales, k);
  LmSummary summary;
  try {
    State refined = run_lm<N>(lm, state, apply, rt, opts, summary);
    refinement = summary;
    return refined;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::IllPosed && e.code() != ErrorCode::Diverged) throw;
    return state;
  }
}

}  // namespace

TranslationSolution solve_translation_lm(const TranslationProblem& problem, const LmOptions& opts) {
  LmProblem<3> lm(problem.points, problem.lines, problem.scales, problem.k);
  TranslationSolution out;
  const Mat3 r = nearest_rotation_matrix(problem.rotation);
  const auto apply = [](const Vec3& t, const Vec3& step) -> Vec3 { return t + step; };
  const auto rt = [&r](const Vec3& t) { return std::pair<Mat3, Vec3>(r, t); };
  const auto pose_of = [&r](const Vec3& t) {
    return Pose(RotationMatrix(r, FrameTag::world(), FrameTag::camera(0)), t);
  };
  out.t = run_lm<3>(lm, problem.initial_t, apply, rt, opts, out.summary);
  out.inliers = classify_inliers(pose_of(out.t), problem.points, problem.lines, problem.scales, problem.k);
  out.t = refine_on_inliers<3>(problem.points, problem.lines, problem.scales, problem.k, out.t, out.inliers, apply, rt,
                               opts, out.refinement);
  out.inliers = classify_inliers(pose_of(out.t), problem.points, problem.lines, problem.scales, problem.k);
  return out;
}

PoseSolution solve_pose_lm(const PoseProblem& problem, const LmOptions& opts) {
  LmProblem<6> lm(problem.points, problem.lines, problem.scales, problem.k);
  PoseSolution out{problem.initial, {}, {}, {}};
  const auto apply = [](const Pose& p, const Vector6d& step) { return perturb_left(p, step); };
  const auto rt = [](const Pose& p) { return std::pair<Mat3, Vec3>(p.R(), p.t()); };
  out.pose = run_lm<6>(lm, problem.initial, apply, rt, opts, out.summary);
  out.inliers = classify_inliers(out.pose, problem.points, problem.lines, problem.scales, problem.k);
  out.pose = refine_on_inliers<6>(problem.points, problem.lines, problem.scales, problem.k, out.pose, out.inliers,
                                  apply, rt, opts, out.refinement);
  out.inliers = classify_inliers(out.pose, problem.points, problem.lines, problem.scales, problem.k);
  return out;
}

}  // namespace structvo
