#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "structvo/camera.hpp"
#include "structvo/features.hpp"
#include "structvo/geometry.hpp"
#include "structvo/normal_map.hpp"

namespace structvo::sim {

/// Rectangle: center + half extents along two in-plane unit axes.
struct ScenePlane {
  int id = 0;
  Vec3 center = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Vec3 axis_u = Vec3::UnitX();
  Vec3 axis_v = Vec3::UnitY();
  double half_u = 1.0;
  double half_v = 1.0;
  /// Counts as a planar region in rendered masks. Distractors set this false.
  bool planar = true;
};

struct ScenePoint {
  LandmarkId id = 0;
  Vec3 position = Vec3::Zero();
  int plane = -1;
  Descriptor descriptor;
};

struct SceneLine {
  LandmarkId id = 0;
  Segment3 segment;
  Descriptor descriptor;
};

struct PlanarScene {
  std::vector<ScenePlane> planes;
  std::vector<ScenePoint> points;
  std::vector<SceneLine> lines;
};

struct NoiseSpec {
  double pixel_sigma = 0.0;
  /// Angular normal noise, radians.
  double normal_sigma = 0.0;
  /// Fraction of point features replaced by uniformly random pixels.
  double outlier_fraction = 0.0;
  /// Per-bit flip probability applied to descriptors.
  double descriptor_corruption = 0.03;
};

struct Waypoint {
  Vec3 position = Vec3::Zero();
  /// Yaw (about world y), pitch (about x), roll (about z), radians.
  Vec3 ypr = Vec3::Zero();
};

struct TrajectorySpec {
  std::vector<Waypoint> waypoints;
  int frames = 100;
  double fps = 30.0;
  NoiseSpec noise;
  std::uint64_t seed = 0;
  /// Inclusive frame ranges in which the normal channel sees only an
  /// unstructured blob (no planar pixels).
  std::vector<std::pair<int, int>> normal_occlusions;

  bool normals_occluded(int frame) const;
};

/// Per-(seed, frame, stream) generator so frames can be produced in any order.
std::mt19937_64 frame_rng(std::uint64_t seed, std::int64_t frame, std::uint64_t stream);

Mat3 rotation_from_ypr(const Vec3& ypr);
/// Camera-to-world poses, Catmull-Rom positions and slerped rotations.
std::vector<Pose> interpolate_trajectory(const TrajectorySpec& spec);

struct RayHit {
  int plane = -1;
  double distance = 0.0;
};
/// Nearest plane hit along origin + s * dir (dir unit), s > min_distance.
RayHit cast_ray(const PlanarScene& scene, const Vec3& origin, const Vec3& dir, double min_distance = 1e-9);

/// Camera-facing plane normals per pixel. Planar mask follows plane.planar.
NormalMap render_normals(const PlanarScene& scene, const Pose& world_from_camera, const CameraIntrinsics& k,
                         double normal_sigma = 0.0, std::mt19937_64* rng = nullptr, bool occluded = false);
/// z-depth per pixel, 0 where nothing is hit.
DepthMap render_depth(const PlanarScene& scene, const Pose& world_from_camera, const CameraIntrinsics& k);

struct CorrespondenceEntry {
  char kind = 'P';
  int feature = 0;
  LandmarkId landmark = 0;
  bool outlier = false;
  friend bool operator==(const CorrespondenceEntry&, const CorrespondenceEntry&) = default;
};

struct Observed {
  FrameObservations frame;
  std::vector<CorrespondenceEntry> table;
};

/// Projects visible points and image-clipped lines, then applies noise.
/// Pre-noise pixels are reproducible by projecting the landmark.
Observed observe_features(const PlanarScene& scene, const Pose& world_from_camera, const CameraIntrinsics& k,
                          const NoiseSpec& noise, std::mt19937_64& rng, FrameId id = 0, double timestamp = 0.0);

struct Sequence {
  PlanarScene scene;
  TrajectorySpec spec;
  CameraIntrinsics k;
  std::string preset;
  std::vector<Pose> ground_truth;  // world_from_camera, timestamped
  std::vector<Observed> frames;
};

/// Generates every frame's observations in memory.
Sequence simulate(const PlanarScene& scene, const TrajectorySpec& spec, const CameraIntrinsics& k,
                  const std::string& preset = "custom");

/// Renders the normal channel of a sequence on demand.
class SimulatorNormalProvider final : public NormalProvider {
 public:
  SimulatorNormalProvider(PlanarScene scene, std::vector<Pose> world_from_camera, CameraIntrinsics k,
                          TrajectorySpec spec, int downsample = 1);
  explicit SimulatorNormalProvider(const Sequence& seq, int downsample = 1);
  NormalMap provide(std::int64_t frame_id) const override;
  const CameraIntrinsics& map_intrinsics() const { return k_map_; }

 private:
  PlanarScene scene_;
  std::vector<Pose> poses_;
  CameraIntrinsics k_map_;
  TrajectorySpec spec_;
};

// Presets: room, corridor, pure_rotation, occlusion_window, no_texture.
struct Preset {
  PlanarScene scene;
  TrajectorySpec spec;
  CameraIntrinsics k;
};
const std::vector<std::string>& preset_names();
/// frames <= 0 keeps the preset default. Throws BadPreset.
Preset make_preset(const std::string& name, std::uint64_t seed, int frames = 0);

// Dataset layout written by generate_sequence:
//   gt_trajectory.txt     TUM format, world_from_camera
//   scene.json            camera, planes, points, lines, trajectory spec
//   meta                  key=value: preset, seed, frames, normal_downsample, config_hash
//   frames/<id>.feat      feature grammar (no landmark hints)
//   frames/<id>.nrm       NRM1 normal map at 1/normal_downsample resolution
//   frames/<id>.corr      ground-truth correspondence table
struct DatasetOptions {
  int normal_downsample = 4;
  bool write_normals = true;
};
void generate_sequence(const Sequence& seq, const std::filesystem::path& out_dir, const DatasetOptions& opts = {});

std::string format_correspondences(FrameId frame, const std::vector<CorrespondenceEntry>& table);
std::vector<CorrespondenceEntry> parse_correspondences(const std::string& text);

std::string scene_to_json(const Sequence& seq, int normal_downsample);
/// Reconstructs scene, spec, intrinsics and preset name from scene.json.
Sequence sequence_from_json(const std::string& text);
/// Reads <dir>/scene.json and regenerates the ground-truth poses (no frames).
Sequence load_scene(const std::filesystem::path& dir);

struct Dataset {
  std::filesystem::path root;
  CameraIntrinsics k;
  int normal_downsample = 1;
  std::uint64_t seed = 0;
  std::string preset;
  std::vector<FrameObservations> frames;
  std::vector<Pose> ground_truth;
};
/// Loads features, intrinsics and meta. Throws IoError or CorruptInput.
Dataset load_dataset(const std::filesystem::path& dir);

/// FNV-1a 64-bit, hex-encoded.
std::string fnv1a_hex(const std::string& text);

}  // namespace structvo::sim
