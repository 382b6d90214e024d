#pragma once

// End-to-end building blocks shared by the command-line tool and the
// acceptance suite: model evaluation, the fusion-strategy comparison and the
// run manifest.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sfcn/dataset.hpp"
#include "sfcn/error.hpp"
#include "sfcn/evaluation.hpp"
#include "sfcn/network.hpp"
#include "sfcn/training.hpp"

namespace sfcn {

inline constexpr const char* kToolVersion = "sfcn 1.0.0";

// Fraction of valid pixels whose argmax class matches the ground truth.
inline double pixel_accuracy(std::span<const float> prob, std::span<const std::uint8_t> gt_road,
                             std::span<const std::uint8_t> gt_valid) {
  const auto c = confusion_at_threshold(prob, gt_road, gt_valid, 0.5);
  if (c.total() == 0) throw Error("pixel accuracy needs at least one valid pixel");
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

template <typename T>
double pixel_accuracy(const ModelParams<T>& m, const std::vector<RoadFrame>& frames) {
  ConfusionCounts total;
  for (const auto& f : frames) {
    const auto prob = predict_road_probability(m, f);
    total += confusion_at_threshold(prob, f.gt_road, f.gt_valid, 0.5);
  }
  if (total.total() == 0) throw Error("pixel accuracy needs at least one valid pixel");
  return static_cast<double>(total.tp + total.tn) / static_cast<double>(total.total());
}

struct EvalOptions {
  FnrMode fnr_mode = FnrMode::Paper;
  bool bev = false;
  BevGrid grid;
  double camera_height = 1.65;
  double bev_z_near = 6.0;  // metres ahead of the camera covered by the last grid row
};

// Adds one frame to a sweep, optionally after warping its probability and
// masks into the ground-plane BEV grid defined by the frame's intrinsics.
inline void accumulate_frame(SweepAccumulator& acc, const RoadFrame& f, std::span<const float> prob,
                             const EvalOptions& opt) {
  if (!opt.bev) {
    acc.add(prob, f.gt_road, f.gt_valid);
    return;
  }
  const double half_width = 0.5 * opt.grid.cols * opt.grid.meters_per_cell;
  const double z_far = opt.bev_z_near + opt.grid.rows * opt.grid.meters_per_cell;
  const auto H = ground_plane_homography(f.calib.K, opt.camera_height, -half_width, z_far);
  const auto bev = bev_warp_masks(prob, f.gt_road, f.gt_valid, f.height, f.width, H, opt.grid);
  acc.add(bev.prob, bev.gt_road, bev.gt_valid);
}

template <typename T>
MetricsReport evaluate_model(const ModelParams<T>& m, const std::vector<RoadFrame>& frames,
                             const EvalOptions& opt = {}) {
  SweepAccumulator acc;
  for (const auto& f : frames) accumulate_frame(acc, f, predict_road_probability(m, f), opt);
  return acc.report(opt.fnr_mode);
}

// ---------------------------------------------------------------------------
// Fusion-strategy comparison (Table-2 layout).

struct CompareFusionConfig {
  Preset preset = Preset::Tiny;
  TrainConfig train = TrainConfig::tiny();
  std::uint64_t seed = 0;
  EvalOptions eval;
  std::vector<FusionStrategy> strategies{FusionStrategy::Early, FusionStrategy::Late, FusionStrategy::Siamese};
};

struct StrategyResult {
  FusionStrategy strategy = FusionStrategy::Siamese;
  MetricsReport report;
  std::vector<LossRecord> log;
  double seconds = 0;
};

inline std::string fusion_row_label(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::Early: return "Early Fusion";
    case FusionStrategy::Late: return "Late Fusion";
    case FusionStrategy::Siamese: return "Siamese structure";
  }
  return "?";
}

// Trains each strategy from the same seed on `train` and evaluates on `val`.
inline std::vector<StrategyResult> compare_fusion(
    const std::vector<RoadFrame>& train_frames, const std::vector<RoadFrame>& val_frames,
    const CompareFusionConfig& cfg,
    const std::function<void(FusionStrategy, const LossRecord&)>& on_iteration = {}) {
  if (val_frames.empty()) throw ConfigError("compare-fusion needs validation frames");
  std::vector<StrategyResult> out;
  for (auto s : cfg.strategies) {
    const auto start = std::chrono::steady_clock::now();
    NetConfig net = net_config_for(cfg.preset, s);
    net.seed = cfg.seed;
    auto model = build_model<float>(net);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    std::function<void(const LossRecord&)> cb;
    if (on_iteration) cb = [&](const LossRecord& r) { on_iteration(s, r); };
    auto result = train(model, train_frames, tc, cb);
    StrategyResult r;
    r.strategy = s;
    r.log = std::move(result.log);
    r.report = evaluate_model(model, val_frames, cfg.eval);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<ReportRow> fusion_rows(const std::vector<StrategyResult>& results) {
  std::vector<ReportRow> rows;
  for (const auto& r : results) rows.push_back({fusion_row_label(r.strategy), r.report});
  return rows;
}

inline std::string fusion_table(const std::vector<StrategyResult>& results) {
  return format_table("Fusion Strategy", fusion_table_columns(), fusion_rows(results));
}

// ---------------------------------------------------------------------------
// Run manifest: written before any other artifact so a run can be replayed.

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::string output_dir;
  std::string tool_version = kToolVersion;

  std::string to_text() const {
    std::ostringstream os;
    os << "command=" << command << '\n';
    os << "tool_version=" << tool_version << '\n';
    os << "seed=" << seed << '\n';
    os << "output_dir=" << output_dir << '\n';
    for (std::size_t i = 0; i < inputs.size(); ++i) os << "input." << i << '=' << inputs[i] << '\n';
    for (const auto& [k, v] : config) os << "config." << k << '=' << v << '\n';
    return os.str();
  }

  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream os(dir / "manifest.txt", std::ios::trunc);
    if (!os) throw Error("cannot write run manifest in " + dir.string());
    os << to_text();
  }
};

// key=value text, '#' comments; later keys override earlier ones.
inline std::map<std::string, std::string> parse_key_values(std::istream& is, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

inline std::map<std::string, std::string> read_key_value_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  return parse_key_values(is, path);
}

}  // namespace sfcn
