#pragma once

#include <filesystem>
#include <string>

#include "structvo/normal_map.hpp"
#include "structvo/tracker.hpp"

namespace structvo {

/// Where normal maps come from during a run.
struct NormalsConfig {
  /// sim: render from the dataset's scene.json; file: <dir>/<id>.nrm; depth: <dir>/<id>.png|.depth
  std::string source = "file";
  /// Empty means <dataset>/frames.
  std::string directory;
  double depth_divisor = 5000.0;
  DepthNormalOptions depth;
};

struct IoConfig {
  /// Empty means <trajectory>.log.jsonl.
  std::string run_log;
  double eval_max_dt = 0.02;
};

/// INI sections [manhattan], [tracker], [init], [normals], [io].
struct PipelineConfig {
  TrackerConfig tracker;
  NormalsConfig normals;
  IoConfig io;
};

/// Canonical INI text covering every key.
std::string format_config(const PipelineConfig& cfg);
/// Missing keys keep defaults; unknown sections or keys and malformed
/// values throw ConfigError.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);
/// FNV-1a of the canonical text.
std::string config_hash(const PipelineConfig& cfg);

}  // namespace structvo
