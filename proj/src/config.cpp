#include "structvo/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <vector>

#include "structvo/error.hpp"
#include "structvo/sim_world.hpp"

namespace structvo {
namespace {

namespace pt = boost::property_tree;

struct Binding {
  const char* section;
  const char* key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) fail(ErrorCode::ConfigError, "bad number for " + key + ": " + s);
  return v;
}

int parse_int(const std::string& key, const std::string& s) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) fail(ErrorCode::ConfigError, "bad integer for " + key + ": " + s);
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  fail(ErrorCode::ConfigError, "bad boolean for " + key + ": " + s);
}

Binding bind(const char* sec, const char* key, double& v, double unit = 1.0) {
  return {sec, key, [&v, unit] { return fmt_double(v / unit); },
          [&v, unit, key](const std::string& s) { v = parse_double(key, s) * unit; }};
}
Binding bind(const char* sec, const char* key, int& v) {
  return {sec, key, [&v] { return std::to_string(v); }, [&v, key](const std::string& s) { v = parse_int(key, s); }};
}
Binding bind(const char* sec, const char* key, bool& v) {
  return {sec, key, [&v] { return std::string(v ? "true" : "false"); },
          [&v, key](const std::string& s) { v = parse_bool(key, s); }};
}
Binding bind(const char* sec, const char* key, std::string& v) {
  return {sec, key, [&v] { return v; }, [&v](const std::string& s) { v = s; }};
}

std::vector<Binding> bindings(PipelineConfig& c) {
  TrackerConfig& t = c.tracker;
  MeanShiftConfig& m = t.manhattan;
  return {
      bind("manhattan", "kernel_width", m.kernel_width),
      bind("manhattan", "conic_half_angle_deg", m.conic_half_angle, kDegToRad),
      bind("manhattan", "capture_half_angle_deg", m.capture_half_angle, kDegToRad),
      bind("manhattan", "max_iterations", m.max_iterations),
      bind("manhattan", "convergence_angle", m.convergence_angle),
      bind("manhattan", "min_support", m.min_support_per_axis),
      bind("manhattan", "stride", m.stride),
      bind("manhattan", "parallel", t.parallel_rotation),

      bind("tracker", "min_inliers", t.min_inliers),
      bind("tracker", "huber_scale_px", t.scales.point_px),
      bind("tracker", "huber_line_scale_px", t.scales.line_px),
      bind("tracker", "inlier_factor", t.scales.inlier_factor),
      bind("tracker", "plain_least_squares", t.scales.plain_least_squares),
      bind("tracker", "lm_max_iters", t.lm.max_iterations),
      bind("tracker", "lm_lambda_init", t.lm.lambda_init),
      bind("tracker", "lm_max_rejections", t.lm.max_consecutive_rejections),
      bind("tracker", "local_map_keyframes", t.local_map_keyframes),
      bind("tracker", "window", t.window),
      bind("tracker", "match_radius_px", t.matching.radius),
      bind("tracker", "max_hamming", t.matching.max_hamming),
      bind("tracker", "ratio", t.matching.ratio),
      bind("tracker", "validation_radius_px", t.validation_radius_px),
      bind("tracker", "keyframe_inlier_fraction", t.keyframes.inlier_fraction),
      bind("tracker", "keyframe_max_gap", t.keyframes.max_frame_gap),
      bind("tracker", "cull_window", t.keyframes.cull_window),
      bind("tracker", "max_triangulation_error_px", t.max_triangulation_error_px),
      bind("tracker", "use_lines", t.use_lines),

      bind("init", "min_landmarks", t.init.min_landmarks),
      bind("init", "max_reprojection_px", t.init.max_reprojection_px),
      bind("init", "min_parallax_px", t.init_min_parallax_px),
      bind("init", "match_radius_px", t.init_match_radius_px),
      bind("init", "border_margin_px", t.border_margin_px),

      bind("normals", "source", c.normals.source),
      bind("normals", "directory", c.normals.directory),
      bind("normals", "depth_divisor", c.normals.depth_divisor),
      bind("normals", "depth_window", c.normals.depth.window),
      bind("normals", "planar_rms_threshold", c.normals.depth.planar_rms_threshold),

      bind("io", "run_log", c.io.run_log),
      bind("io", "eval_max_dt", c.io.eval_max_dt),
  };
}

void validate(const PipelineConfig& c) {
  const auto& t = c.tracker;
  auto require = [](bool ok, const char* what) {
    if (!ok) fail(ErrorCode::ConfigError, what);
  };
  require(t.manhattan.kernel_width > 0, "manhattan.kernel_width must be positive");
  require(t.manhattan.conic_half_angle > 0 && t.manhattan.conic_half_angle < std::numbers::pi / 4,
          "manhattan.conic_half_angle_deg must be in (0, 45)");
  require(t.manhattan.max_iterations > 0, "manhattan.max_iterations must be positive");
  require(t.manhattan.min_support_per_axis >= 0, "manhattan.min_support must be non-negative");
  require(t.manhattan.stride > 0, "manhattan.stride must be positive");
  require(t.min_inliers > 0, "tracker.min_inliers must be positive");
  require(t.scales.point_px > 0 && t.scales.line_px > 0, "tracker huber scales must be positive");
  require(t.lm.max_iterations > 0, "tracker.lm_max_iters must be positive");
  require(t.local_map_keyframes > 0, "tracker.local_map_keyframes must be positive");
  require(t.window >= 1, "tracker.window must be at least 1");
  require(t.init.min_landmarks >= 8, "init.min_landmarks must be at least 8");
  require(c.normals.source == "sim" || c.normals.source == "file" || c.normals.source == "depth",
          "normals.source must be sim, file or depth");
  require(c.normals.depth_divisor > 0, "normals.depth_divisor must be positive");
}

}  // namespace

std::string format_config(const PipelineConfig& cfg) {
  PipelineConfig copy = cfg;
  std::ostringstream out;
  std::string section;
  for (const auto& b : bindings(copy)) {
    if (section != b.section) {
      if (!section.empty()) out << '\n';
      section = b.section;
      out << '[' << section << "]\n";
    }
    out << b.key << " = " << b.get() << '\n';
  }
  return out.str();
}

PipelineConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorCode::ConfigError, e.what());
  }
  PipelineConfig cfg;
  auto table = bindings(cfg);
  std::map<std::string, std::map<std::string, Binding*>> index;
  for (auto& b : table) index[b.section][b.key] = &b;

  for (const auto& [section, body] : tree) {
    auto sec = index.find(section);
    if (sec == index.end()) {
      if (body.empty()) fail(ErrorCode::ConfigError, "key outside a section: " + section);
      fail(ErrorCode::ConfigError, "unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      auto it = sec->second.find(key);
      if (it == sec->second.end()) fail(ErrorCode::ConfigError, "unknown key " + section + "." + key);
      it->second->set(value.get_value<std::string>());
    }
  }
  validate(cfg);
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_hash(const PipelineConfig& cfg) { return sim::fnv1a_hex(format_config(cfg)); }

}  // namespace structvo
