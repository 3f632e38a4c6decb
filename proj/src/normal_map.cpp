#include "structvo/normal_map.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include <png.h>

#include "structvo/error.hpp"

namespace structvo {

NormalMap::NormalMap(int width, int height)
    : width_(width),
      height_(height),
      normals_(static_cast<std::size_t>(width) * height, Vec3::Zero()),
      planar_(normals_.size(), 0),
      valid_(normals_.size(), 0) {
  if (width < 0 || height < 0) fail(ErrorCode::DimensionMismatch, "negative normal map size");
}

void NormalMap::set(int u, int v, const Vec3& n, bool planar) {
  const std::size_t i = index(u, v);
  normals_[i] = n.normalized();
  valid_[i] = 1;
  planar_[i] = planar ? 1 : 0;
}

void NormalMap::set_exact(int u, int v, const Vec3& n, bool planar) {
  const std::size_t i = index(u, v);
  normals_[i] = n;
  valid_[i] = 1;
  planar_[i] = planar ? 1 : 0;
}

void NormalMap::set_invalid(int u, int v) {
  const std::size_t i = index(u, v);
  normals_[i].setZero();
  valid_[i] = 0;
  planar_[i] = 0;
}

bool NormalMap::satisfies_invariants() const {
  for (std::size_t i = 0; i < normals_.size(); ++i) {
    if (planar_[i] && !valid_[i]) return false;
    if (valid_[i] && std::abs(normals_[i].norm() - 1.0) > 1e-6) return false;
  }
  return true;
}

DepthMap::DepthMap(int width, int height, double fill)
    : width_(width), height_(height), depth_(static_cast<std::size_t>(width) * height, fill) {}

NormalMap normals_from_depth(const DepthMap& depth, const CameraIntrinsics& k, const DepthNormalOptions& opts) {
  if (depth.width() != k.width || depth.height() != k.height) {
    fail(ErrorCode::DimensionMismatch, "depth map size does not match intrinsics");
  }
  if (opts.window < 1) fail(ErrorCode::DimensionMismatch, "window must be >= 1");
  const int w = opts.window;
  const int width = depth.width();
  const int height = depth.height();

  std::vector<Vec3> points(static_cast<std::size_t>(width) * height);
  std::vector<std::uint8_t> has(points.size(), 0);
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      const double d = depth.at(u, v);
      const std::size_t i = static_cast<std::size_t>(v) * width + u;
      if (d > 0.0 && std::isfinite(d)) {
        points[i] = d * normalize_pixel(Pixel(u, v), k);
        has[i] = 1;
      }
    }
  }
  auto idx = [width](int u, int v) { return static_cast<std::size_t>(v) * width + u; };

  NormalMap out(width, height);
  const double max_ss = opts.planar_rms_threshold * opts.planar_rms_threshold;
  for (int v = w; v < height - w; ++v) {
    for (int u = w; u < width - w; ++u) {
      const std::size_t c = idx(u, v);
      if (!has[c] || !has[idx(u - w, v)] || !has[idx(u + w, v)] || !has[idx(u, v - w)] || !has[idx(u, v + w)]) {
        continue;
      }
      const Vec3 du = points[idx(u + w, v)] - points[idx(u - w, v)];
      const Vec3 dv = points[idx(u, v + w)] - points[idx(u, v - w)];
      Vec3 n = du.cross(dv);
      const double nn = n.norm();
      if (!(nn > 1e-15)) continue;
      n /= nn;
      if (n.dot(points[c]) > 0.0) n = -n;

      // Plane-fit residual over the full patch. Inverse depth of a plane is
      // affine in pixel coordinates; the residual is the depth error of that
      // fit along each ray.
      bool complete = true;
      double sq = 0.0, sqx = 0.0, sqy = 0.0, sxx = 0.0;
      int count = 0;
      for (int dy = -w; dy <= w && complete; ++dy) {
        for (int dx = -w; dx <= w; ++dx) {
          const double d = depth.at(u + dx, v + dy);
          if (!has[idx(u + dx, v + dy)]) {
            complete = false;
            break;
          }
          sq += 1.0 / d;
          sqx += dx / d;
          sqy += dy / d;
          sxx += dx * dx;
          ++count;
        }
      }
      bool planar = false;
      if (complete) {
        // Symmetric grid: the normal equations decouple.
        const double c0 = sq / count, a = sqx / sxx, b = sqy / sxx;
        double ss = 0.0;
        for (int dy = -w; dy <= w; ++dy) {
          for (int dx = -w; dx <= w; ++dx) {
            const double fit = c0 + a * dx + b * dy;
            const double e = fit > 0.0 ? depth.at(u + dx, v + dy) - 1.0 / fit : std::numeric_limits<double>::infinity();
            ss += e * e;
          }
        }
        planar = ss / count < max_ss;
      }
      out.set(u, v, n, planar);
    }
  }
  return out;
}

namespace {

static_assert(std::endian::native == std::endian::little, "file I/O assumes a little-endian host");

void write_u32(std::ofstream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_f32(std::ofstream& os, float v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::ifstream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::FrameNotFound, "cannot open " + path.string());
  return is;
}

constexpr std::uint32_t kMaxSide = 1u << 15;

}  // namespace

void write_normal_map(const std::filesystem::path& path, const NormalMap& map) {
  auto os = open_out(path);
  os.write("NRM1", 4);
  write_u32(os, static_cast<std::uint32_t>(map.width()));
  write_u32(os, static_cast<std::uint32_t>(map.height()));
  for (const Vec3& n : map.normals()) {
    write_f32(os, static_cast<float>(n.x()));
    write_f32(os, static_cast<float>(n.y()));
    write_f32(os, static_cast<float>(n.z()));
  }
  os.write(reinterpret_cast<const char*>(map.planar_mask().data()), static_cast<std::streamsize>(map.size()));
  os.write(reinterpret_cast<const char*>(map.valid_mask().data()), static_cast<std::streamsize>(map.size()));
  if (!os) fail(ErrorCode::IoError, "write failed: " + path.string());
}

NormalMap read_normal_map(const std::filesystem::path& path) {
  auto is = open_in(path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "NRM1", 4) != 0) fail(ErrorCode::CorruptInput, "bad NRM1 magic in " + path.string());
  const std::uint32_t w = read_u32(is);
  const std::uint32_t h = read_u32(is);
  if (!is || w > kMaxSide || h > kMaxSide) fail(ErrorCode::CorruptInput, "bad NRM1 header in " + path.string());
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<float> raw(3 * n);
  std::vector<std::uint8_t> planar(n), valid(n);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  is.read(reinterpret_cast<char*>(planar.data()), static_cast<std::streamsize>(n));
  is.read(reinterpret_cast<char*>(valid.data()), static_cast<std::streamsize>(n));
  if (!is) fail(ErrorCode::CorruptInput, "truncated NRM1 file " + path.string());
  is.peek();
  if (!is.eof()) fail(ErrorCode::CorruptInput, "trailing bytes in " + path.string());

  NormalMap map(static_cast<int>(w), static_cast<int>(h));
  for (std::uint32_t v = 0; v < h; ++v) {
    for (std::uint32_t u = 0; u < w; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * w + u;
      if (!valid[i]) {
        if (planar[i]) fail(ErrorCode::CorruptInput, "planar pixel outside valid mask");
        continue;
      }
      const Vec3 nrm(raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]);
      if (!nrm.allFinite() || std::abs(nrm.norm() - 1.0) > 1e-5) {
        fail(ErrorCode::CorruptInput, "non-unit normal in " + path.string());
      }
      // Stored floats are kept bit-exact (no renormalization) so a re-write is identical.
      map.set_exact(static_cast<int>(u), static_cast<int>(v), nrm, planar[i] != 0);
    }
  }
  return map;
}

void write_depth_float(const std::filesystem::path& path, const DepthMap& depth) {
  auto os = open_out(path);
  write_u32(os, static_cast<std::uint32_t>(depth.width()));
  write_u32(os, static_cast<std::uint32_t>(depth.height()));
  for (double d : depth.data()) write_f32(os, static_cast<float>(d));
  if (!os) fail(ErrorCode::IoError, "write failed: " + path.string());
}

DepthMap read_depth_float(const std::filesystem::path& path) {
  auto is = open_in(path);
  const std::uint32_t w = read_u32(is);
  const std::uint32_t h = read_u32(is);
  if (!is || w > kMaxSide || h > kMaxSide) fail(ErrorCode::CorruptInput, "bad depth header in " + path.string());
  std::vector<float> raw(static_cast<std::size_t>(w) * h);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  if (!is) fail(ErrorCode::CorruptInput, "truncated depth file " + path.string());
  DepthMap depth(static_cast<int>(w), static_cast<int>(h));
  for (std::uint32_t v = 0; v < h; ++v) {
    for (std::uint32_t u = 0; u < w; ++u) {
      const float d = raw[static_cast<std::size_t>(v) * w + u];
      if (!std::isfinite(d) || d < 0.0f) fail(ErrorCode::CorruptInput, "negative or non-finite depth");
      depth.at(static_cast<int>(u), static_cast<int>(v)) = d;
    }
  }
  return depth;
}

namespace {

struct PngFile {
  std::FILE* fp = nullptr;
  ~PngFile() {
    if (fp) std::fclose(fp);
  }
};

}  // namespace

void write_depth_png(const std::filesystem::path& path, const DepthMap& depth, double divisor) {
  PngFile f;
  f.fp = std::fopen(path.c_str(), "wb");
  if (!f.fp) fail(ErrorCode::IoError, "cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::IoError, "libpng error writing " + path.string());
  }
  png_init_io(png, f.fp);
  png_set_IHDR(png, info, depth.width(), depth.height(), 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(depth.width()) * 2);
  for (int v = 0; v < depth.height(); ++v) {
    for (int u = 0; u < depth.width(); ++u) {
      const double raw = std::round(depth.at(u, v) * divisor);
      const auto value = static_cast<std::uint16_t>(std::clamp(raw, 0.0, 65535.0));
      row[2 * u] = static_cast<png_byte>(value >> 8);  // PNG is big-endian
      row[2 * u + 1] = static_cast<png_byte>(value & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

DepthMap read_depth_png(const std::filesystem::path& path, double divisor) {
  PngFile f;
  f.fp = std::fopen(path.c_str(), "rb");
  if (!f.fp) fail(ErrorCode::FrameNotFound, "cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::CorruptInput, "libpng error reading " + path.string());
  }
  png_init_io(png, f.fp);
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  if (png_get_bit_depth(png, info) != 16 || png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::CorruptInput, "depth PNG must be 16-bit grayscale: " + path.string());
  }
  DepthMap depth(w, h);
  std::vector<png_byte> row(static_cast<std::size_t>(w) * 2);
  for (int v = 0; v < h; ++v) {
    png_read_row(png, row.data(), nullptr);
    for (int u = 0; u < w; ++u) {
      const unsigned value = (static_cast<unsigned>(row[2 * u]) << 8) | row[2 * u + 1];
      depth.at(u, v) = value / divisor;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return depth;
}

DepthMap read_depth(const std::filesystem::path& path, double divisor) {
  if (path.extension() == ".png") return read_depth_png(path, divisor);
  return read_depth_float(path);
}

std::string frame_stem(std::int64_t frame_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06lld", static_cast<long long>(frame_id));
  return buf;
}

FileNormalProvider::FileNormalProvider(std::filesystem::path dir) : dir_(std::move(dir)) {}

NormalMap FileNormalProvider::provide(std::int64_t frame_id) const {
  const auto path = dir_ / (frame_stem(frame_id) + ".nrm");
  if (!std::filesystem::exists(path)) fail(ErrorCode::FrameNotFound, path.string());
  return read_normal_map(path);
}

DepthNormalProvider::DepthNormalProvider(std::filesystem::path dir, CameraIntrinsics k, DepthNormalOptions opts,
                                         double divisor)
    : dir_(std::move(dir)), k_(k), opts_(opts), divisor_(divisor) {}

NormalMap DepthNormalProvider::provide(std::int64_t frame_id) const {
  const std::string stem = frame_stem(frame_id);
  for (const char* ext : {".png", ".depth"}) {
    const auto path = dir_ / (stem + ext);
    if (std::filesystem::exists(path)) return normals_from_depth(read_depth(path, divisor_), k_, opts_);
  }
  fail(ErrorCode::FrameNotFound, "no depth file for frame " + stem + " in " + dir_.string());
}

}  // namespace structvo
