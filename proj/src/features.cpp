#include "structvo/features.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "structvo/error.hpp"

namespace structvo {

std::string to_hex(const Descriptor& d) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(64, '0');
  for (int nibble = 0; nibble < 64; ++nibble) {
    const int base = 255 - 4 * nibble;
    int v = 0;
    for (int b = 0; b < 4; ++b) v = (v << 1) | (d[base - b] ? 1 : 0);
    out[nibble] = kDigits[v];
  }
  return out;
}

Descriptor descriptor_from_hex(const std::string& hex) {
  if (hex.size() != 64) fail(ErrorCode::CorruptInput, "descriptor must have 64 hex digits");
  Descriptor d;
  for (int nibble = 0; nibble < 64; ++nibble) {
    const char c = hex[nibble];
    int v = 0;
    if (c >= '0' && c <= '9') v = c - '0';
    else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
    else fail(ErrorCode::CorruptInput, "bad hex digit in descriptor");
    const int base = 255 - 4 * nibble;
    for (int b = 0; b < 4; ++b) d[base - b] = (v >> (3 - b)) & 1;
  }
  return d;
}

namespace {

std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_num(std::istringstream& is, int line_no) {
  std::string tok;
  if (!(is >> tok)) fail(ErrorCode::CorruptInput, "missing number on line " + std::to_string(line_no));
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != tok.size() || !std::isfinite(v)) {
    fail(ErrorCode::CorruptInput, "bad number '" + tok + "' on line " + std::to_string(line_no));
  }
  return v;
}

std::optional<LandmarkId> parse_optional_id(std::istringstream& is, int line_no) {
  std::string tok;
  if (!(is >> tok)) return std::nullopt;
  std::size_t pos = 0;
  long long id = 0;
  try {
    id = std::stoll(tok, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != tok.size()) fail(ErrorCode::CorruptInput, "bad landmark id on line " + std::to_string(line_no));
  std::string extra;
  if (is >> extra) fail(ErrorCode::CorruptInput, "trailing tokens on line " + std::to_string(line_no));
  return id;
}

}  // namespace

std::string format_features(const FrameObservations& frame) {
  std::ostringstream os;
  os << "FEAT1 " << frame.id << ' ' << fmt_num(frame.timestamp) << '\n';
  for (const PointFeature& p : frame.points) {
    os << "P " << fmt_num(p.pixel.x()) << ' ' << fmt_num(p.pixel.y()) << ' ' << to_hex(p.descriptor);
    if (p.landmark) os << ' ' << *p.landmark;
    os << '\n';
  }
  for (const LineFeature& l : frame.lines) {
    os << "L " << fmt_num(l.start.x()) << ' ' << fmt_num(l.start.y()) << ' ' << fmt_num(l.end.x()) << ' '
       << fmt_num(l.end.y()) << ' ' << to_hex(l.descriptor);
    if (l.landmark) os << ' ' << *l.landmark;
    os << '\n';
  }
  return os.str();
}

FrameObservations parse_features(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  FrameObservations frame;
  bool header = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    if (!header) {
      if (tag != "FEAT1") fail(ErrorCode::CorruptInput, "missing FEAT1 header");
      long long id = 0;
      if (!(is >> id)) fail(ErrorCode::CorruptInput, "bad frame id in header");
      frame.id = id;
      frame.timestamp = parse_num(is, line_no);
      header = true;
      continue;
    }
    std::string hex;
    if (tag == "P") {
      PointFeature p;
      p.pixel.x() = parse_num(is, line_no);
      p.pixel.y() = parse_num(is, line_no);
      if (!(is >> hex)) fail(ErrorCode::CorruptInput, "missing descriptor on line " + std::to_string(line_no));
      p.descriptor = descriptor_from_hex(hex);
      p.landmark = parse_optional_id(is, line_no);
      frame.points.push_back(p);
    } else if (tag == "L") {
      LineFeature l;
      l.start.x() = parse_num(is, line_no);
      l.start.y() = parse_num(is, line_no);
      l.end.x() = parse_num(is, line_no);
      l.end.y() = parse_num(is, line_no);
      if (!(is >> hex)) fail(ErrorCode::CorruptInput, "missing descriptor on line " + std::to_string(line_no));
      l.descriptor = descriptor_from_hex(hex);
      l.landmark = parse_optional_id(is, line_no);
      frame.lines.push_back(l);
    } else {
      fail(ErrorCode::CorruptInput, "unknown record '" + tag + "' on line " + std::to_string(line_no));
    }
  }
  if (!header) fail(ErrorCode::CorruptInput, "empty feature file");
  return frame;
}

void write_features(const std::filesystem::path& path, const FrameObservations& frame) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot write " + path.string());
  os << format_features(frame);
}

FrameObservations read_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::FrameNotFound, "cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_features(ss.str());
}

std::vector<Match> match_descriptors(std::span<const Descriptor> a, std::span<const Descriptor> b,
                                     const std::function<bool(int, int)>& compatible, const MatchOptions& opts) {
  constexpr int kNone = std::numeric_limits<int>::max();
  struct Best {
    int index = -1;
    int best = kNone;
    int second = kNone;
    void offer(int idx, int d) {
      if (d < best) {
        second = best;
        best = d;
        index = idx;
      } else if (d < second) {
        second = d;
      }
    }
  };
  std::vector<Best> best_a(a.size()), best_b(b.size());
  for (int i = 0; i < static_cast<int>(a.size()); ++i) {
    for (int j = 0; j < static_cast<int>(b.size()); ++j) {
      if (!compatible(i, j)) continue;
      const int d = hamming(a[i], b[j]);
      best_a[i].offer(j, d);
      best_b[j].offer(i, d);
    }
  }
  auto ratio_ok = [&](const Best& x) { return x.second == kNone || x.best <= opts.ratio * x.second; };
  std::vector<Match> out;
  for (int i = 0; i < static_cast<int>(a.size()); ++i) {
    const Best& ba = best_a[i];
    if (ba.index < 0 || ba.best > opts.max_hamming) continue;
    const Best& bb = best_b[ba.index];
    if (bb.index != i || !ratio_ok(ba) || !ratio_ok(bb)) continue;
    out.push_back({i, ba.index, ba.best});
  }
  return out;
}

std::vector<Match> match_points(std::span<const PointFeature> a, std::span<const PointFeature> b,
                                const MatchOptions& opts, std::span<const Pixel> predicted) {
  std::vector<Descriptor> da, db;
  da.reserve(a.size());
  db.reserve(b.size());
  for (const auto& p : a) da.push_back(p.descriptor);
  for (const auto& p : b) db.push_back(p.descriptor);
  const double r2 = opts.radius * opts.radius;
  auto gate = [&](int i, int j) {
    const Pixel& pa = predicted.empty() ? a[i].pixel : predicted[i];
    return (pa - b[j].pixel).squaredNorm() <= r2;
  };
  return match_descriptors(da, db, gate, opts);
}

namespace {

double distance_to_line(const Pixel& p, const Pixel& l0, const Pixel& l1) {
  const Vec2 d = l1 - l0;
  const double n = d.norm();
  if (n < 1e-12) return (p - l0).norm();
  return std::abs(d.x() * (p.y() - l0.y()) - d.y() * (p.x() - l0.x())) / n;
}

}  // namespace

double line_proximity(const Pixel& a0, const Pixel& a1, const Pixel& b0, const Pixel& b1) {
  return std::max({distance_to_line(a0, b0, b1), distance_to_line(a1, b0, b1), distance_to_line(b0, a0, a1),
                   distance_to_line(b1, a0, a1)});
}

std::vector<Match> match_lines(std::span<const LineFeature> a, std::span<const LineFeature> b,
                               const MatchOptions& opts) {
  std::vector<Descriptor> da, db;
  for (const auto& l : a) da.push_back(l.descriptor);
  for (const auto& l : b) db.push_back(l.descriptor);
  auto gate = [&](int i, int j) { return line_proximity(a[i].start, a[i].end, b[j].start, b[j].end) <= opts.radius; };
  return match_descriptors(da, db, gate, opts);
}

bool clip_segment(Pixel& a, Pixel& b, double width, double height) {
  // Liang-Barsky against [0, w-1] x [0, h-1].
  const Pixel d = b - a;
  double t0 = 0.0, t1 = 1.0;
  const double p[4] = {-d.x(), d.x(), -d.y(), d.y()};
  const double q[4] = {a.x(), width - 1.0 - a.x(), a.y(), height - 1.0 - a.y()};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) t0 = std::max(t0, r);
    else t1 = std::min(t1, r);
    if (t0 > t1) return false;
  }
  const Pixel a0 = a;
  a = a0 + t0 * d;
  b = a0 + t1 * d;
  return true;
}

FrameMatches match_features(const FrameObservations& a, const FrameObservations& b, const MatchOptions& opts) {
  return {match_points(a.points, b.points, opts), match_lines(a.lines, b.lines, opts)};
}

Vec3 triangulate_point(const Pixel& p1, const Pixel& p2, const Pose& world_from_cam1, const Pose& world_from_cam2,
                       const CameraIntrinsics& k) {
  const Vec3 c1 = world_from_cam1.t();
  const Vec3 c2 = world_from_cam2.t();
  const Vec3 baseline = c2 - c1;
  if (baseline.norm() <= 1e-6) fail(ErrorCode::LowParallax, "baseline too short");
  const Vec3 d1 = (world_from_cam1.R() * normalize_pixel(p1, k)).normalized();
  const Vec3 d2 = (world_from_cam2.R() * normalize_pixel(p2, k)).normalized();
  const double angle = std::atan2(d1.cross(d2).norm(), d1.dot(d2));
  if (angle < kMinParallax) fail(ErrorCode::LowParallax, "rays nearly parallel");
  // Minimize |c1 + s d1 - (c2 + u d2)|.
  const double b = d1.dot(d2);
  const double e1 = d1.dot(baseline);
  const double e2 = d2.dot(baseline);
  const double den = 1.0 - b * b;
  const double s = (e1 - b * e2) / den;
  const double u = (b * e1 - e2) / den;
  if (!(s > 0.0) || !(u > 0.0)) fail(ErrorCode::NegativeDepth, "point behind a camera");
  return 0.5 * ((c1 + s * d1) + (c2 + u * d2));
}

Segment3 triangulate_line(const LineFeature& l1, const LineFeature& l2, const Pose& world_from_cam1,
                          const Pose& world_from_cam2, const CameraIntrinsics& k) {
  const Vec3 c1 = world_from_cam1.t();
  const Vec3 c2 = world_from_cam2.t();
  if ((c2 - c1).norm() <= 1e-6) fail(ErrorCode::LowParallax, "baseline too short");
  const Vec3 a1 = (world_from_cam1.R() * normalize_pixel(l1.start, k)).normalized();
  const Vec3 b1 = (world_from_cam1.R() * normalize_pixel(l1.end, k)).normalized();
  const Vec3 a2 = (world_from_cam2.R() * normalize_pixel(l2.start, k)).normalized();
  const Vec3 b2 = (world_from_cam2.R() * normalize_pixel(l2.end, k)).normalized();
  const Vec3 n1 = a1.cross(b1).normalized();
  const Vec3 n2 = a2.cross(b2).normalized();
  const double plane_angle = std::atan2(n1.cross(n2).norm(), std::abs(n1.dot(n2)));
  if (plane_angle < 2.0 * kMinParallax) fail(ErrorCode::DegeneratePlane, "back-projected planes nearly parallel");

  const Mat3 r2t = world_from_cam2.R().transpose();
  auto intersect = [&](const Vec3& d) {
    const double den = n2.dot(d);
    if (std::abs(den) < 1e-9) fail(ErrorCode::DegeneratePlane, "endpoint ray parallel to plane");
    const double s = n2.dot(c2 - c1) / den;
    const Vec3 p = c1 + s * d;
    if (!(s > 0.0) || !((r2t * (p - c2)).z() > 0.0)) fail(ErrorCode::NegativeDepth, "line behind a camera");
    return p;
  };
  Segment3 seg{intersect(a1), intersect(b1)};
  if ((seg.end - seg.start).norm() <= 0.0) fail(ErrorCode::DegeneratePlane, "zero-length line");
  return seg;
}

double point_to_line_distance(const Vec3& p, const Segment3& s) {
  const Vec3 d = s.direction();
  return (p - s.start).cross(d).norm();
}

}  // namespace structvo
