#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "structvo/camera.hpp"
#include "structvo/geometry.hpp"

namespace structvo {

/// Per-pixel camera-frame normals with planar and validity masks. Normals
/// face the camera (n · viewing ray < 0). Invalid pixels hold a zero vector.
class NormalMap {
 public:
  NormalMap() = default;
  NormalMap(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return normals_.size(); }
  bool empty() const { return normals_.empty(); }

  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width_ + u; }
  const Vec3& normal(int u, int v) const { return normals_[index(u, v)]; }
  bool valid(int u, int v) const { return valid_[index(u, v)] != 0; }
  bool planar(int u, int v) const { return planar_[index(u, v)] != 0; }

  /// Sets a valid pixel; the normal is normalized here.
  void set(int u, int v, const Vec3& n, bool planar);
  /// Stores n as given; caller guarantees unit norm (used by file readers).
  void set_exact(int u, int v, const Vec3& n, bool planar);
  void set_invalid(int u, int v);

  const std::vector<Vec3>& normals() const { return normals_; }
  const std::vector<std::uint8_t>& planar_mask() const { return planar_; }
  const std::vector<std::uint8_t>& valid_mask() const { return valid_; }

  /// Unit norm (1e-6) where valid, planar implies valid.
  bool satisfies_invariants() const;

  friend bool operator==(const NormalMap&, const NormalMap&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Vec3> normals_;
  std::vector<std::uint8_t> planar_;
  std::vector<std::uint8_t> valid_;
};

/// Depth in meters; a pixel is valid where depth > 0.
class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(int width, int height, double fill = 0.0);

  int width() const { return width_; }
  int height() const { return height_; }
  double at(int u, int v) const { return depth_[static_cast<std::size_t>(v) * width_ + u]; }
  double& at(int u, int v) { return depth_[static_cast<std::size_t>(v) * width_ + u]; }
  const std::vector<double>& data() const { return depth_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> depth_;
};

struct DepthNormalOptions {
  int window = 2;
  /// RMS plane-fit residual (meters) below which the patch is planar.
  double planar_rms_threshold = 0.01;
};

/// Central-difference cross-product normals with plane-fit residual masking.
NormalMap normals_from_depth(const DepthMap& depth, const CameraIntrinsics& k, const DepthNormalOptions& opts = {});

// File formats. All multi-byte values little-endian.
//
// NRM1: "NRM1" | u32 width | u32 height | f32 normals[3*W*H] (row-major xyz)
//       | u8 planar[W*H] | u8 valid[W*H]
// Float depth: u32 width | u32 height | f32 depth[W*H] (meters)
void write_normal_map(const std::filesystem::path& path, const NormalMap& map);
NormalMap read_normal_map(const std::filesystem::path& path);

void write_depth_float(const std::filesystem::path& path, const DepthMap& depth);
DepthMap read_depth_float(const std::filesystem::path& path);
/// 16-bit grayscale PNG; depth = value / divisor (TUM and ICL use 5000).
void write_depth_png(const std::filesystem::path& path, const DepthMap& depth, double divisor = 5000.0);
DepthMap read_depth_png(const std::filesystem::path& path, double divisor = 5000.0);
/// Dispatches on extension: ".png" or ".depth".
DepthMap read_depth(const std::filesystem::path& path, double divisor = 5000.0);

/// Source of per-frame normal maps. Implementations are read-only after
/// construction, so provide() may run concurrently for different frames.
class NormalProvider {
 public:
  virtual ~NormalProvider() = default;
  /// Throws FrameNotFound or CorruptInput.
  virtual NormalMap provide(std::int64_t frame_id) const = 0;
};

/// Zero-padded frame file stem, e.g. 42 -> "000042".
std::string frame_stem(std::int64_t frame_id);

/// Reads `<dir>/<stem>.nrm`.
class FileNormalProvider final : public NormalProvider {
 public:
  explicit FileNormalProvider(std::filesystem::path dir);
  NormalMap provide(std::int64_t frame_id) const override;

 private:
  std::filesystem::path dir_;
};

/// Reads `<dir>/<stem>.png` or `<dir>/<stem>.depth` and derives normals.
class DepthNormalProvider final : public NormalProvider {
 public:
  DepthNormalProvider(std::filesystem::path dir, CameraIntrinsics k, DepthNormalOptions opts = {},
                      double divisor = 5000.0);
  NormalMap provide(std::int64_t frame_id) const override;

 private:
  std::filesystem::path dir_;
  CameraIntrinsics k_;
  DepthNormalOptions opts_;
  double divisor_;
};

}  // namespace structvo
