#include "structvo/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <spdlog/spdlog.h>

#include "structvo/error.hpp"

namespace structvo {

namespace {

Eigen::Quaterniond canonical_quat(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return q;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Eigen::Isometry3d iso(const Pose& p) { return p.isometry(); }

}  // namespace

Trajectory::Trajectory(std::vector<Pose> poses) {
  poses_.reserve(poses.size());
  for (const Pose& p : poses) push_back(p);
}

void Trajectory::push_back(const Pose& pose) {
  if (!poses_.empty() && !(pose.timestamp() > poses_.back().timestamp())) {
    fail(ErrorCode::CorruptInput, "trajectory timestamps must strictly increase");
  }
  poses_.push_back(pose);
  quats_.push_back(canonical_quat(pose.R()).coeffs());
}

void Trajectory::push_back(const Pose& pose, const Eigen::Vector4d& source_xyzw) {
  push_back(pose);
  quats_.back() = source_xyzw;
}

std::vector<Vec3> Trajectory::positions() const {
  std::vector<Vec3> out;
  out.reserve(poses_.size());
  for (const Pose& p : poses_) out.push_back(p.t());
  return out;
}

double Trajectory::path_length() const {
  double len = 0.0;
  for (std::size_t i = 1; i < poses_.size(); ++i) len += (poses_[i].t() - poses_[i - 1].t()).norm();
  return len;
}

std::string format_tum(const Trajectory& traj) {
  std::string out;
  char buf[256];
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const Pose& p = traj[i];
    Eigen::Vector4d q = traj.quaternion(i);
    if (q.w() < 0.0) q = -q;
    std::snprintf(buf, sizeof(buf), "%.6f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", p.timestamp(), p.t().x(), p.t().y(),
                  p.t().z(), q.x(), q.y(), q.z(), q.w());
    out += buf;
  }
  return out;
}

Trajectory parse_tum(const std::string& text) {
  Trajectory traj;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double v[8];
    for (double& x : v) {
      if (!(ls >> x)) fail(ErrorCode::CorruptInput, "TUM line " + std::to_string(lineno) + ": expected 8 numbers");
      if (!std::isfinite(x)) fail(ErrorCode::CorruptInput, "TUM line " + std::to_string(lineno) + ": non-finite value");
    }
    std::string extra;
    if (ls >> extra) fail(ErrorCode::CorruptInput, "TUM line " + std::to_string(lineno) + ": trailing fields");
    Eigen::Vector4d q(v[4], v[5], v[6], v[7]);
    const double norm = q.norm();
    if (std::abs(norm - 1.0) > 1e-3) {
      fail(ErrorCode::CorruptInput, "TUM line " + std::to_string(lineno) + ": quaternion norm " + std::to_string(norm));
    }
    if (std::abs(norm - 1.0) > 1e-6) {
      spdlog::warn("TUM line {}: renormalizing quaternion with norm {:.9f}", lineno, norm);
      q /= norm;
    }
    const Eigen::Quaterniond qq(q.w(), q.x(), q.y(), q.z());
    const auto idx = static_cast<std::int64_t>(traj.size());
    const Pose pose(nearest_rotation(qq.normalized().toRotationMatrix(), FrameTag::camera(idx), FrameTag::world()),
                    Vec3(v[1], v[2], v[3]), v[0]);
    traj.push_back(pose, q);
  }
  return traj;
}

void write_tum(const std::filesystem::path& path, const Trajectory& traj) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot write " + path.string());
  os << format_tum(traj);
  if (!os) fail(ErrorCode::IoError, "write failed: " + path.string());
}

Trajectory read_tum(const std::filesystem::path& path) { return parse_tum(read_file(path)); }

IndexPairs associate(const Trajectory& est, const Trajectory& gt, double max_dt) {
  if (est.empty() || gt.empty()) fail(ErrorCode::NoOverlap, "empty trajectory");
  struct Candidate {
    double dt;
    std::size_t i, j;
  };
  std::vector<Candidate> cands;
  std::size_t lo = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = est[i].timestamp();
    while (lo < gt.size() && gt[lo].timestamp() < t - max_dt) ++lo;
    for (std::size_t j = lo; j < gt.size() && gt[j].timestamp() <= t + max_dt; ++j) {
      cands.push_back({std::abs(gt[j].timestamp() - t), i, j});
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.dt < b.dt; });
  std::vector<bool> used_e(est.size(), false), used_g(gt.size(), false);
  IndexPairs out;
  for (const auto& c : cands) {
    if (used_e[c.i] || used_g[c.j]) continue;
    used_e[c.i] = used_g[c.j] = true;
    out.emplace_back(c.i, c.j);
  }
  if (out.empty()) fail(ErrorCode::NoOverlap, "no timestamps within max_dt");
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

Eigen::Matrix3Xd to_matrix(std::span<const Vec3> pts) {
  Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = pts[i];
  return m;
}

/// True if the cloud spans at least two dimensions.
bool spans_plane(const Eigen::Matrix3Xd& m) {
  const Eigen::Matrix3Xd c = m.colwise() - m.rowwise().mean();
  const Eigen::JacobiSVD<Eigen::Matrix3Xd> svd(c);
  const auto s = svd.singularValues();
  return s(0) > 1e-12 && s(1) > 1e-9 * s(0);
}

}  // namespace

Sim3 align_sim3(std::span<const Vec3> est, std::span<const Vec3> gt, bool fix_scale) {
  if (est.size() != gt.size()) fail(ErrorCode::DimensionMismatch, "alignment needs paired positions");
  if (est.size() < 3) fail(ErrorCode::DegenerateConfiguration, "alignment needs at least 3 pairs");
  const Eigen::Matrix3Xd src = to_matrix(est);
  const Eigen::Matrix3Xd dst = to_matrix(gt);
  if (!spans_plane(src) || !spans_plane(dst)) {
    fail(ErrorCode::DegenerateConfiguration, "positions are collinear or coincident");
  }
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, !fix_scale);
  Sim3 out;
  const Mat3 sr = t.topLeftCorner<3, 3>();
  out.scale = fix_scale ? 1.0 : std::cbrt(sr.determinant());
  out.rotation = nearest_rotation_matrix(sr / out.scale);
  out.translation = t.topRightCorner<3, 1>();
  return out;
}

std::vector<double> ate_errors(std::span<const Vec3> est, std::span<const Vec3> gt, const Sim3& alignment) {
  if (est.size() != gt.size()) fail(ErrorCode::DimensionMismatch, "ATE needs paired positions");
  std::vector<double> out(est.size());
  for (std::size_t i = 0; i < est.size(); ++i) out[i] = (gt[i] - alignment.apply(est[i])).norm();
  return out;
}

double ate_rmse(std::span<const Vec3> est, std::span<const Vec3> gt, const Sim3& alignment) {
  const auto errs = ate_errors(est, gt, alignment);
  if (errs.empty()) return 0.0;
  double sum = 0.0;
  for (double e : errs) sum += e * e;
  return std::sqrt(sum / static_cast<double>(errs.size()));
}

namespace {

void accumulate_rpe(const Pose& ei, const Pose& ej, const Pose& gi, const Pose& gj, double& t2, double& r2) {
  const Eigen::Isometry3d rel_gt = iso(gi).inverse() * iso(gj);
  const Eigen::Isometry3d rel_est = iso(ei).inverse() * iso(ej);
  const Eigen::Isometry3d e = rel_gt.inverse() * rel_est;
  t2 += e.translation().squaredNorm();
  const double a = rotation_angle(e.linear()) * 180.0 / std::numbers::pi;
  r2 += a * a;
}

RpeResult finish(double t2, double r2, std::size_t n) {
  RpeResult r;
  r.pairs = n;
  if (n > 0) {
    r.trans_rmse = std::sqrt(t2 / static_cast<double>(n));
    r.rot_rmse_deg = std::sqrt(r2 / static_cast<double>(n));
  }
  return r;
}

}  // namespace

RpeResult rpe(std::span<const Pose> est, std::span<const Pose> gt, std::size_t delta) {
  if (est.size() != gt.size()) fail(ErrorCode::DimensionMismatch, "RPE needs paired poses");
  if (delta == 0 || est.size() <= delta) fail(ErrorCode::DimensionMismatch, "RPE needs more poses than delta");
  double t2 = 0.0, r2 = 0.0;
  for (std::size_t i = 0; i + delta < est.size(); ++i) accumulate_rpe(est[i], est[i + delta], gt[i], gt[i + delta], t2, r2);
  return finish(t2, r2, est.size() - delta);
}

RpeResult rpe_seconds(std::span<const Pose> est, std::span<const Pose> gt, double seconds) {
  if (est.size() != gt.size()) fail(ErrorCode::DimensionMismatch, "RPE needs paired poses");
  double t2 = 0.0, r2 = 0.0;
  std::size_t n = 0, j = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    j = std::max(j, i + 1);
    while (j < gt.size() && gt[j].timestamp() < gt[i].timestamp() + seconds) ++j;
    if (j >= gt.size()) break;
    accumulate_rpe(est[i], est[j], gt[i], gt[j], t2, r2);
    ++n;
  }
  return finish(t2, r2, n);
}

MetricReport evaluate(const Trajectory& est, const Trajectory& gt, const EvalOptions& opts) {
  const IndexPairs pairs = associate(est, gt, opts.max_dt);
  std::vector<Vec3> pe, pg;
  std::vector<Pose> qe, qg;
  MetricReport r;
  for (const auto& [i, j] : pairs) {
    pe.push_back(est[i].t());
    pg.push_back(gt[j].t());
    qe.push_back(est[i]);
    qg.push_back(gt[j]);
    r.timestamps.push_back(gt[j].timestamp());
  }
  r.matched = pairs.size();
  r.alignment = align_sim3(pe, pg, opts.fix_scale);
  r.errors = ate_errors(pe, pg, r.alignment);
  r.ate_rmse = ate_rmse(pe, pg, r.alignment);
  if (qe.size() > opts.rpe_delta) r.rpe_frame = rpe(qe, qg, opts.rpe_delta);
  r.rpe_second = rpe_seconds(qe, qg, 1.0);
  r.gt_length = gt.path_length();
  return r;
}

std::string format_table_row(const std::string& name, const MetricReport& report) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "| %s | %.4f | %.4f | %.3f | %zu |", name.c_str(), report.ate_rmse,
                report.rpe_frame.trans_rmse, report.rpe_frame.rot_rmse_deg, report.matched);
  return buf;
}

std::string format_error_csv(const MetricReport& report) {
  std::string out = "timestamp,ate_error\n";
  char buf[64];
  for (std::size_t i = 0; i < report.errors.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.9f\n", report.timestamps[i], report.errors[i]);
    out += buf;
  }
  return out;
}

std::string format_svg(const std::vector<std::pair<std::string, std::vector<Vec3>>>& trajectories) {
  double minx = 1e300, maxx = -1e300, minz = 1e300, maxz = -1e300;
  for (const auto& [name, pts] : trajectories) {
    for (const Vec3& p : pts) {
      minx = std::min(minx, p.x());
      maxx = std::max(maxx, p.x());
      minz = std::min(minz, p.z());
      maxz = std::max(maxz, p.z());
    }
  }
  if (minx > maxx) minx = maxx = minz = maxz = 0.0;
  const double span = std::max({maxx - minx, maxz - minz, 1e-6});
  const double size = 600.0, margin = 20.0, scale = (size - 2 * margin) / span;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"600\" viewBox=\"0 0 600 600\">\n";
  char buf[64];
  for (std::size_t t = 0; t < trajectories.size(); ++t) {
    std::string name;
    for (char c : trajectories[t].first) {
      if (c == '<') name += "&lt;";
      else if (c == '>') name += "&gt;";
      else if (c == '&') name += "&amp;";
      else if (c == '"') name += "&quot;";
      else name += c;
    }
    os << "  <polyline data-name=\"" << name << "\" fill=\"none\" stroke=\"" << colors[t % 5]
       << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < trajectories[t].second.size(); ++i) {
      const Vec3& p = trajectories[t].second[i];
      std::snprintf(buf, sizeof(buf), "%s%.2f,%.2f", i ? " " : "", margin + (p.x() - minx) * scale,
                    size - margin - (p.z() - minz) * scale);
      os << buf;
    }
    os << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace structvo
