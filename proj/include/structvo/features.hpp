#pragma once

#include <bitset>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "structvo/camera.hpp"
#include "structvo/geometry.hpp"

namespace structvo {

using FrameId = std::int64_t;
using LandmarkId = std::int64_t;

/// Opaque 256-bit binary descriptor compared by Hamming distance.
using Descriptor = std::bitset<256>;

inline int hamming(const Descriptor& a, const Descriptor& b) { return static_cast<int>((a ^ b).count()); }
/// 64 lowercase hex digits, most significant bit first.
std::string to_hex(const Descriptor& d);
/// Throws CorruptInput on malformed input.
Descriptor descriptor_from_hex(const std::string& hex);

struct PointFeature {
  Pixel pixel = Pixel::Zero();
  Descriptor descriptor;
  std::optional<LandmarkId> landmark;
};

inline constexpr double kMinLineLength = 10.0;

struct LineFeature {
  Pixel start = Pixel::Zero();
  Pixel end = Pixel::Zero();
  Descriptor descriptor;
  std::optional<LandmarkId> landmark;

  double length() const { return (end - start).norm(); }
  Pixel midpoint() const { return 0.5 * (start + end); }
};

struct FrameObservations {
  FrameId id = 0;
  double timestamp = 0.0;
  std::vector<PointFeature> points;
  std::vector<LineFeature> lines;
};

// Feature file grammar (text, one record per line):
//   FEAT1 <frame_id> <timestamp>
//   P <u> <v> <hex-descriptor> [landmark]
//   L <u1> <v1> <u2> <v2> <hex-descriptor> [landmark]
// Lines starting with '#' are comments. Numbers are written with 17
// significant digits so that a write/read cycle is lossless.
void write_features(const std::filesystem::path& path, const FrameObservations& frame);
FrameObservations read_features(const std::filesystem::path& path);
std::string format_features(const FrameObservations& frame);
FrameObservations parse_features(const std::string& text);

struct Match {
  int a = 0;
  int b = 0;
  int distance = 0;
  friend bool operator==(const Match&, const Match&) = default;
};

struct MatchOptions {
  double radius = 20.0;
  int max_hamming = 64;
  double ratio = 0.8;
};

/// Symmetric descriptor matcher. A pair (i, j) is accepted when it passes
/// `compatible`, each is the other's best candidate, the distance is at most
/// max_hamming and the best/second-best ratio holds from both sides.
std::vector<Match> match_descriptors(std::span<const Descriptor> a, std::span<const Descriptor> b,
                                     const std::function<bool(int, int)>& compatible, const MatchOptions& opts);

/// Radius-gated point matching. `predicted`, when non-empty, replaces a's
/// pixels for the radius test (motion-predicted positions).
std::vector<Match> match_points(std::span<const PointFeature> a, std::span<const PointFeature> b,
                                const MatchOptions& opts, std::span<const Pixel> predicted = {});

/// Symmetric segment proximity: max distance of either segment's endpoints to
/// the other's infinite line. Endpoints are soft, so overlap is not required.
double line_proximity(const Pixel& a0, const Pixel& a1, const Pixel& b0, const Pixel& b1);
std::vector<Match> match_lines(std::span<const LineFeature> a, std::span<const LineFeature> b,
                               const MatchOptions& opts);

/// Liang-Barsky clip of segment a-b to [0, w-1] x [0, h-1]; false if nothing remains.
bool clip_segment(Pixel& a, Pixel& b, double width, double height);

struct FrameMatches {
  std::vector<Match> points;
  std::vector<Match> lines;
};

FrameMatches match_features(const FrameObservations& a, const FrameObservations& b, const MatchOptions& opts);

inline constexpr double kMinParallax = 0.5 * 3.14159265358979323846 / 180.0;

/// Two-view midpoint triangulation. Poses map camera to world.
/// Throws LowParallax or NegativeDepth.
Vec3 triangulate_point(const Pixel& p1, const Pixel& p2, const Pose& world_from_cam1, const Pose& world_from_cam2,
                       const CameraIntrinsics& k);

struct Segment3 {
  Vec3 start = Vec3::Zero();
  Vec3 end = Vec3::Zero();
  Vec3 direction() const { return (end - start).normalized(); }
};

/// Intersects the endpoint rays of l1 with the back-projected plane of l2.
/// Throws LowParallax, DegeneratePlane or NegativeDepth.
Segment3 triangulate_line(const LineFeature& l1, const LineFeature& l2, const Pose& world_from_cam1,
                          const Pose& world_from_cam2, const CameraIntrinsics& k);

/// Distance from p to the infinite line through s.
double point_to_line_distance(const Vec3& p, const Segment3& s);

}  // namespace structvo
