#include "structvo/manhattan_rotation.hpp"

#include <cmath>
#include <limits>

#include "structvo/error.hpp"

namespace structvo {

Mat3 tangent_basis(const Mat3& axes, int n) {
  Mat3 q;
  q.col(0) = axes.col((n + 1) % 3);
  q.col(1) = axes.col((n + 2) % 3);
  q.col(2) = axes.col(n % 3);
  return q;
}

Vec2 tangent_project(const UnitVec3& v, int n, const Mat3& axes, double half_angle) {
  const Mat3 q_n = tangent_basis(axes, n);
  const double d = v.vec().dot(q_n.col(2));
  if (!(std::abs(d) > std::cos(half_angle))) fail(ErrorCode::OutsideCone, "direction outside axis cone");
  const Vec3 w = q_n.transpose() * (d < 0.0 ? Vec3(-v.vec()) : v.vec());
  return {w.x() / w.z(), w.y() / w.z()};
}

Vec2 cluster_mean(std::span<const Vec2> points, double c) {
  if (points.empty()) fail(ErrorCode::EmptyCluster, "no points in cluster");
  Vec2 num = Vec2::Zero();
  double den = 0.0;
  for (const Vec2& m : points) {
    const double w = std::exp(-c * m.squaredNorm());
    num += w * m;
    den += w;
  }
  return num / den;
}

std::vector<Vec3> sample_normals(const NormalMap& map, int stride) {
  stride = std::max(1, stride);
  std::vector<Vec3> out;
  out.reserve(map.size() / (stride * stride) + 1);
  for (int v = stride / 2; v < map.height(); v += stride) {
    for (int u = stride / 2; u < map.width(); u += stride) {
      if (map.valid(u, v) && map.planar(u, v)) out.push_back(map.normal(u, v));
    }
  }
  return out;
}

namespace {

ManhattanFrame run_mean_shift(std::span<const Vec3> samples, const Mat3& init, const MeanShiftConfig& cfg,
                              double half_angle, int max_iterations) {
  const double cos_half = std::cos(half_angle);
  Mat3 axes = init;
  ManhattanFrame result;
  std::array<std::vector<Vec2>, 3> tangent;
  for (auto& t : tangent) t.reserve(samples.size());

  for (int it = 0; it < max_iterations; ++it) {
    std::array<Mat3, 3> q{tangent_basis(axes, 0), tangent_basis(axes, 1), tangent_basis(axes, 2)};
    for (auto& t : tangent) t.clear();
    for (const Vec3& s : samples) {
      for (int n = 0; n < 3; ++n) {
        const double d = s.dot(axes.col(n));
        if (std::abs(d) > cos_half) {
          // Cones are disjoint for half-angles below 45 degrees, so at most one axis claims s.
          const Vec3 w = q[n].transpose() * (d < 0.0 ? Vec3(-s) : s);
          tangent[n].emplace_back(w.x() / w.z(), w.y() / w.z());
          break;
        }
      }
    }
    std::array<bool, 3> supported{};
    int n_supported = 0;
    for (int n = 0; n < 3; ++n) {
      result.support[n] = static_cast<int>(tangent[n].size());
      supported[n] = result.support[n] >= cfg.min_support_per_axis && result.support[n] > 0;
      n_supported += supported[n] ? 1 : 0;
    }
    if (n_supported < 2) {
      fail(ErrorCode::InsufficientSupport, "Manhattan frame not visible: " + std::to_string(n_supported) +
                                               " axes with support");
    }

    Mat3 updated = axes;
    for (int n = 0; n < 3; ++n) {
      if (!supported[n]) continue;
      const Vec2 mean = cluster_mean(tangent[n], cfg.kernel_width);
      updated.col(n) = (q[n] * Vec3(mean.x(), mean.y(), 1.0)).normalized();
    }
    for (int n = 0; n < 3; ++n) {
      if (!supported[n]) updated.col(n) = updated.col((n + 1) % 3).cross(updated.col((n + 2) % 3)).normalized();
    }
    const Mat3 next = nearest_rotation_matrix(updated);

    double max_delta = 0.0;
    for (int n = 0; n < 3; ++n) {
      const double c = std::clamp(next.col(n).dot(axes.col(n)), -1.0, 1.0);
      max_delta = std::max(max_delta, std::atan2(next.col(n).cross(axes.col(n)).norm(), c));
    }
    axes = next;
    result.iterations_used = it + 1;
    if (max_delta < cfg.convergence_angle) {
      result.converged = true;
      break;
    }
  }
  result.rotation = RotationMatrix(axes, FrameTag::manhattan(), FrameTag::camera(0));
  return result;
}

}  // namespace

ManhattanFrame estimate_manhattan_rotation(std::span<const Vec3> samples, const RotationMatrix& init,
                                           const MeanShiftConfig& cfg) {
  ManhattanFrame f = run_mean_shift(samples, init.matrix(), cfg, cfg.conic_half_angle, cfg.max_iterations);
  f.rotation = f.rotation.retagged(init.source(), init.target());
  return f;
}

ManhattanFrame estimate_manhattan_rotation(const NormalMap& map, std::span<const UnitVec3> line_dirs,
                                           const RotationMatrix& init, const MeanShiftConfig& cfg) {
  std::vector<Vec3> samples = sample_normals(map, cfg.stride);
  for (const UnitVec3& d : line_dirs) samples.push_back(d.vec());
  return estimate_manhattan_rotation(samples, init, cfg);
}

ManhattanFrame initialize_from_identity(std::span<const Vec3> samples, const MeanShiftConfig& cfg) {
  const ManhattanFrame coarse =
      run_mean_shift(samples, Mat3::Identity(), cfg, std::max(cfg.capture_half_angle, cfg.conic_half_angle),
                     cfg.max_iterations);
  ManhattanFrame fine = run_mean_shift(samples, coarse.rotation.matrix(), cfg, cfg.conic_half_angle,
                                       cfg.max_iterations);
  fine.iterations_used += coarse.iterations_used;
  return fine;
}

ManhattanFrame initialize_from_identity(const NormalMap& map, const MeanShiftConfig& cfg) {
  const std::vector<Vec3> samples = sample_normals(map, cfg.stride);
  return initialize_from_identity(samples, cfg);
}

const std::array<Mat3, 24>& signed_permutations() {
  static const std::array<Mat3, 24> group = [] {
    std::array<Mat3, 24> g;
    std::size_t k = 0;
    const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    for (const auto& p : perms) {
      for (int signs = 0; signs < 8; ++signs) {
        Mat3 m = Mat3::Zero();
        for (int i = 0; i < 3; ++i) m(p[i], i) = (signs >> i) & 1 ? -1.0 : 1.0;
        if (m.determinant() > 0.0) g[k++] = m;
      }
    }
    return g;
  }();
  return group;
}

Mat3 align_axes_to(const Mat3& est, const Mat3& reference) {
  double best = std::numeric_limits<double>::infinity();
  Mat3 out = est;
  for (const Mat3& p : signed_permutations()) {
    const Mat3 cand = est * p;
    const double d = rotation_distance(cand, reference);
    if (d < best) {
      best = d;
      out = cand;
    }
  }
  return out;
}

double manhattan_rotation_error(const Mat3& est, const Mat3& gt) {
  return rotation_distance(align_axes_to(est, gt), gt);
}

}  // namespace structvo
