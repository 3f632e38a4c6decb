#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "json.hpp"
#include "structvo/config.hpp"
#include "structvo/error.hpp"
#include "structvo/evaluation.hpp"
#include "structvo/normal_map.hpp"
#include "structvo/sim_world.hpp"
#include "structvo/tracker.hpp"

namespace fs = std::filesystem;
using namespace structvo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitLost = 4;
/// Runs tracking fewer frames than this are reported as lost.
constexpr double kMinTrackedFraction = 0.9;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("structvo");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("STRUCTVO_LOG")) {
    auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only honor "off" when asked for.
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::BadPreset:
    case ErrorCode::ConfigError:
      return kExitUsage;
    case ErrorCode::TrackingLost:
      return kExitLost;
    default:
      return kExitData;
  }
}

struct SimulateArgs {
  std::string preset = "corridor";
  std::uint64_t seed = 0;
  std::string out;
  int frames = 0;
  std::optional<double> pixel_sigma;
  std::optional<double> normal_sigma_deg;
  std::optional<double> outliers;
  int normal_downsample = 4;
  bool no_normals = false;
};

int cmd_simulate(const SimulateArgs& a) {
  auto preset = sim::make_preset(a.preset, a.seed, a.frames);
  if (a.pixel_sigma) preset.spec.noise.pixel_sigma = *a.pixel_sigma;
  if (a.normal_sigma_deg) preset.spec.noise.normal_sigma = *a.normal_sigma_deg * kDegToRad;
  if (a.outliers) preset.spec.noise.outlier_fraction = *a.outliers;
  auto seq = sim::simulate(preset.scene, preset.spec, preset.k, a.preset);
  sim::DatasetOptions opts;
  opts.normal_downsample = a.normal_downsample;
  opts.write_normals = !a.no_normals;
  sim::generate_sequence(seq, a.out, opts);
  std::printf("wrote %zu frames of '%s' (seed %llu) to %s\n", seq.frames.size(), a.preset.c_str(),
              static_cast<unsigned long long>(a.seed), a.out.c_str());
  return kExitOk;
}

struct RunArgs {
  std::string dataset;
  std::string config;
  std::string out = "trajectory.txt";
  std::string log;
  std::string ablate;
  std::string normals;
};

struct NormalSource {
  std::unique_ptr<NormalProvider> provider;
  CameraIntrinsics k;
  std::string label;
};

NormalSource make_normals(const std::string& spec, const PipelineConfig& cfg, const sim::Dataset& data) {
  std::string kind = spec.empty() ? cfg.normals.source : spec;
  std::string dir = cfg.normals.directory;
  if (auto colon = kind.find(':'); colon != std::string::npos) {
    dir = kind.substr(colon + 1);
    kind = kind.substr(0, colon);
  }
  NormalSource src;
  src.label = kind;
  if (kind == "sim") {
    auto provider = std::make_unique<sim::SimulatorNormalProvider>(sim::load_scene(data.root), data.normal_downsample);
    src.k = provider->map_intrinsics();
    src.provider = std::move(provider);
  } else if (kind == "file") {
    fs::path d = dir.empty() ? data.root / "frames" : fs::path(dir);
    src.provider = std::make_unique<FileNormalProvider>(d);
    src.k = data.k.downsampled(data.normal_downsample);
  } else if (kind == "depth") {
    if (dir.empty()) fail(ErrorCode::ConfigError, "depth normals need a directory (depth:<dir>)");
    src.provider = std::make_unique<DepthNormalProvider>(dir, data.k, cfg.normals.depth, cfg.normals.depth_divisor);
    src.k = data.k;
    src.label += ":" + dir;
  } else {
    fail(ErrorCode::ConfigError, "unknown normal source '" + kind + "'");
  }
  return src;
}

nlohmann::json result_json(const TrackResult& r) {
  return {{"type", "frame"},
          {"frame", r.frame},
          {"mode", to_string(r.mode)},
          {"accepted", r.accepted},
          {"backfilled", r.backfilled},
          {"point_inliers", r.point_inliers},
          {"line_inliers", r.line_inliers},
          {"timing_ms",
           {{"rotation", r.timing.rotation_ms},
            {"translation", r.timing.translation_ms},
            {"validation", r.timing.validation_ms},
            {"refinement", r.timing.refinement_ms},
            {"total", r.timing.total_ms}}}};
}

int cmd_run(const RunArgs& a) {
  PipelineConfig cfg = a.config.empty() ? PipelineConfig{} : load_config(a.config);
  if (!a.ablate.empty()) {
    if (a.ablate != "no-lines") fail(ErrorCode::ConfigError, "unknown ablation '" + a.ablate + "'");
    cfg.tracker.use_lines = false;
  }
  if (!a.normals.empty()) cfg.normals.source = a.normals.substr(0, a.normals.find(':'));
  const std::string hash = config_hash(cfg);

  auto data = sim::load_dataset(a.dataset);
  auto normals = make_normals(a.normals, cfg, data);

  fs::path log_path = !a.log.empty() ? fs::path(a.log)
                      : !cfg.io.run_log.empty() ? fs::path(cfg.io.run_log)
                                                : fs::path(a.out + ".log.jsonl");
  std::ofstream log(log_path);
  if (!log) fail(ErrorCode::IoError, "cannot write run log " + log_path.string());
  log << nlohmann::json{{"type", "run"},
                        {"dataset", a.dataset},
                        {"preset", data.preset},
                        {"seed", data.seed},
                        {"config_hash", hash},
                        {"ablation", a.ablate.empty() ? "none" : a.ablate},
                        {"normals", normals.label},
                        {"frames", data.frames.size()}}
             .dump()
      << '\n';

  Tracker tracker(cfg.tracker, data.k, *normals.provider, normals.k);
  auto t0 = std::chrono::steady_clock::now();
  auto summary = run_tracker(tracker, data.frames,
                             [&](const FrameObservations& f, const std::vector<TrackResult>& results, bool lost) {
                               for (const auto& r : results) log << result_json(r).dump() << '\n';
                               if (lost) log << nlohmann::json{{"type", "lost"}, {"frame", f.id}}.dump() << '\n';
                             });
  double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  Trajectory traj(summary.accepted_poses());
  write_tum(a.out, traj);
  const double fraction = summary.tracked_fraction();
  log << nlohmann::json{{"type", "summary"},
                        {"frames", summary.frames},
                        {"accepted", traj.size()},
                        {"lost", summary.lost.size()},
                        {"tracked_fraction", fraction},
                        {"seconds", seconds}}
             .dump()
      << '\n';
  std::printf("tracked %zu/%zu frames (%.1f%%) in %.2f s, config %s\n", traj.size(), summary.frames, 100.0 * fraction,
              seconds, hash.c_str());
  if (fraction < kMinTrackedFraction) {
    spdlog::error("tracked fraction {:.3f} below {:.2f}", fraction, kMinTrackedFraction);
    return kExitLost;
  }
  return kExitOk;
}

struct EvalArgs {
  std::string est;
  std::string gt;
  std::string name;
  std::string csv;
  std::string svg;
  bool fix_scale = false;
  double max_dt = 0.02;
  std::size_t rpe_delta = 1;
};

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << text;
}

int cmd_eval(const EvalArgs& a) {
  auto est = read_tum(a.est);
  auto gt = read_tum(a.gt);
  EvalOptions opts;
  opts.fix_scale = a.fix_scale;
  opts.max_dt = a.max_dt;
  opts.rpe_delta = a.rpe_delta;
  auto report = evaluate(est, gt, opts);
  std::string name = a.name.empty() ? fs::path(a.est).stem().string() : a.name;
  std::printf("%s\n", format_table_row(name, report).c_str());
  if (!a.csv.empty()) write_file(a.csv, format_error_csv(report));
  if (!a.svg.empty()) {
    std::vector<Vec3> aligned;
    for (const auto& p : est.positions()) aligned.push_back(report.alignment.apply(p));
    write_file(a.svg, format_svg({{"ground truth", gt.positions()}, {name, aligned}}));
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Structure-aided monocular visual odometry"};
  app.require_subcommand(1);

  SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset");
  simulate->add_option("--preset", sa.preset, "room, corridor, pure_rotation, occlusion_window, no_texture");
  simulate->add_option("--seed", sa.seed, "Random seed");
  simulate->add_option("-o,--out", sa.out, "Output directory")->required();
  simulate->add_option("--frames", sa.frames, "Frame count (0 keeps the preset default)");
  simulate->add_option("--pixel-noise", sa.pixel_sigma, "Feature noise sigma, pixels");
  simulate->add_option("--normal-noise-deg", sa.normal_sigma_deg, "Normal noise sigma, degrees");
  simulate->add_option("--outliers", sa.outliers, "Fraction of point outliers")->check(CLI::Range(0.0, 1.0));
  simulate->add_option("--normal-downsample", sa.normal_downsample, "Normal map downsampling factor")
      ->check(CLI::PositiveNumber);
  simulate->add_flag("--no-normals", sa.no_normals, "Skip writing normal maps");

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Track a dataset");
  run->add_option("dataset", ra.dataset, "Dataset directory")->required();
  run->add_option("-c,--config", ra.config, "INI configuration");
  run->add_option("-o,--out", ra.out, "Output TUM trajectory");
  run->add_option("--log", ra.log, "JSONL run log (default <out>.log.jsonl)");
  run->add_option("--ablate", ra.ablate, "no-lines");
  run->add_option("--normals", ra.normals, "sim | file[:<dir>] | depth:<dir>");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Compare a trajectory against ground truth");
  eval->add_option("est", ea.est, "Estimated TUM trajectory")->required();
  eval->add_option("gt", ea.gt, "Ground-truth TUM trajectory")->required();
  eval->add_option("--name", ea.name, "Row label");
  eval->add_option("--csv", ea.csv, "Per-frame ATE error CSV");
  eval->add_option("--svg", ea.svg, "Top-down trajectory plot");
  eval->add_flag("--fix-scale", ea.fix_scale, "SE(3) instead of Sim(3) alignment");
  eval->add_option("--max-dt", ea.max_dt, "Timestamp association tolerance, seconds");
  eval->add_option("--rpe-delta", ea.rpe_delta, "RPE frame offset")->check(CLI::PositiveNumber);

  auto* config = app.add_subcommand("config", "Print the default configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*simulate) return cmd_simulate(sa);
    if (*run) return cmd_run(ra);
    if (*eval) return cmd_eval(ea);
    if (*config) {
      std::fputs(format_config(PipelineConfig{}).c_str(), stdout);
      return kExitOk;
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitData;
  }
  return kExitUsage;
}
