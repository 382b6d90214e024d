#pragma once

// Implementations of the command-line subcommands. Each command writes its
// RunManifest before any other artifact; `run_guarded` turns a failure into a
// nonzero status and moves the run's partial outputs into <out>/quarantine.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sfcn/checkpoint.hpp"
#include "sfcn/dataset.hpp"
#include "sfcn/evaluation.hpp"
#include "sfcn/image_io.hpp"
#include "sfcn/lidar.hpp"
#include "sfcn/network.hpp"
#include "sfcn/pipeline.hpp"
#include "sfcn/reference.hpp"
#include "sfcn/training.hpp"

namespace sfcn::cli {

namespace fs = std::filesystem;

struct CommonOptions {
  std::string data_root;
  std::string out;
  std::uint64_t seed = 0;
  Preset preset = Preset::Tiny;
  FusionStrategy strategy = FusionStrategy::Siamese;
  FnrMode fnr_mode = FnrMode::Paper;
  bool bev = false;
};

struct SynthCommand {
  CommonOptions common;
  int frames = 2;
  int height = 96;
  int width = 312;
};

struct ProjectCommand {
  CommonOptions common;
};

struct TrainCommand {
  CommonOptions common;
  std::optional<int> iterations;
  std::optional<double> lr;
  int checkpoint_every = 0;
};

struct EvalCommand {
  CommonOptions common;
  std::string checkpoint;  // model to run, or
  std::string pred_dir;    // directory of gray probability PNGs named <frame_id>.png
};

struct InferCommand {
  CommonOptions common;
  std::string checkpoint;
  double tau = 0.5;
};

struct CompareFusionCommand {
  CommonOptions common;
  std::optional<int> iterations;
  std::optional<double> lr;
  int n_train = 40;
  int synth_frames = 50;  // used when no --data-root is given
};

// ---------------------------------------------------------------------------
// Helpers

namespace detail {

template <typename V>
std::string str(const V& v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::map<std::string, std::string> common_config(const CommonOptions& c) {
  return {{"data-root", c.data_root},
          {"out", c.out},
          {"seed", std::to_string(c.seed)},
          {"preset", preset_name(c.preset)},
          {"strategy", strategy_name(c.strategy)},
          {"fnr-mode", fnr_mode_name(c.fnr_mode)},
          {"bev", c.bev ? "true" : "false"}};
}

inline void require_out(const CommonOptions& c) {
  if (c.out.empty()) throw ConfigError("--out is required");
}

inline void require_data_root(const CommonOptions& c) {
  if (c.data_root.empty()) throw ConfigError("--data-root is required");
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

inline RunManifest start_run(const std::string& command, const CommonOptions& c,
                             std::map<std::string, std::string> extra) {
  require_out(c);
  RunManifest m;
  m.command = command;
  m.config = common_config(c);
  for (auto& [k, v] : extra) m.config[k] = std::move(v);
  m.seed = c.seed;
  if (!c.data_root.empty()) m.inputs.push_back(c.data_root);
  m.output_dir = c.out;
  m.write(c.out);
  return m;
}

// Tiny runs work on 96x312 frames; paper runs keep the native resolution.
inline LoadOptions load_options(Preset p) {
  LoadOptions o;
  if (p == Preset::Tiny) o.resize_to = NetConfig::tiny(FusionStrategy::Siamese).input_size;
  return o;
}

inline std::vector<RoadFrame> load_frames(const CommonOptions& c) {
  require_data_root(c);
  auto frames = load_kitti_road(c.data_root, load_options(c.preset));
  if (frames.empty()) throw FormatError("no frames under " + c.data_root);
  return frames;
}

inline Image8 probability_png(std::span<const float> prob, int height, int width) {
  Image8 img(height, width, 1);
  for (std::size_t i = 0; i < prob.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(prob[i], 0.f, 1.f) * 255.f));
  }
  return img;
}

}  // namespace detail

// Model description stored next to each checkpoint as <name>.cfg.
inline std::map<std::string, std::string> net_config_values(const NetConfig& n, Preset preset) {
  using detail::str;
  return {{"preset", preset_name(preset)},
          {"strategy", strategy_name(n.strategy)},
          {"seed", str(n.seed)},
          {"groups", str(n.groups)},
          {"width_scale", str(n.width_scale)},
          {"head_width", str(n.head_width)},
          {"input_height", str(n.input_size.height)},
          {"input_width", str(n.input_size.width)},
          {"rgb_mean", str(n.rgb_mean)},
          {"rgb_scale", str(n.rgb_scale)},
          {"lidar_scale", str(n.lidar_scale)}};
}

inline fs::path sidecar_path(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  return p.replace_extension(".cfg");
}

inline void write_model_sidecar(const fs::path& checkpoint, const NetConfig& n, Preset preset) {
  std::ostringstream os;
  for (const auto& [k, v] : net_config_values(n, preset)) os << k << '=' << v << '\n';
  detail::write_text(sidecar_path(checkpoint), os.str());
}

inline std::pair<NetConfig, Preset> read_model_sidecar(const fs::path& checkpoint) {
  const auto kv = read_key_value_file(sidecar_path(checkpoint).string());
  auto get = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError(sidecar_path(checkpoint).string() + ": missing key " + k);
    return it->second;
  };
  try {
    const Preset preset = parse_preset(get("preset"));
    NetConfig n = net_config_for(preset, parse_strategy(get("strategy")));
    n.seed = std::stoull(get("seed"));
    n.groups = std::stoi(get("groups"));
    n.width_scale = std::stod(get("width_scale"));
    n.head_width = std::stoi(get("head_width"));
    n.input_size = {std::stoi(get("input_height")), std::stoi(get("input_width"))};
    n.rgb_mean = std::stof(get("rgb_mean"));
    n.rgb_scale = std::stof(get("rgb_scale"));
    n.lidar_scale = std::stof(get("lidar_scale"));
    n.validate();
    return {n, preset};
  } catch (const std::logic_error& e) {  // stoi and friends
    throw FormatError(sidecar_path(checkpoint).string() + ": bad value (" + e.what() + ")");
  }
}

inline ModelParams<float> load_model(const fs::path& checkpoint) {
  auto [net, preset] = read_model_sidecar(checkpoint);
  (void)preset;
  auto m = build_model<float>(net);
  load_checkpoint_into(checkpoint.string(), m.tensors());
  return m;
}

// Runs `body`; on failure prints the error, moves everything the run created
// under `out` into <out>/quarantine (with error.txt) and returns 1.
inline int run_guarded(const std::string& out, const std::function<void()>& body, std::ostream& err = std::cerr) {
  std::set<std::string> before;
  if (!out.empty() && fs::is_directory(out)) {
    for (const auto& e : fs::directory_iterator(out)) before.insert(e.path().filename().string());
  }
  try {
    body();
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    if (out.empty() || !fs::is_directory(out)) return 1;
    try {
      const fs::path q = fs::path(out) / "quarantine";
      fs::create_directories(q);
      for (const auto& entry : fs::directory_iterator(out)) {
        const std::string name = entry.path().filename().string();
        if (name == "quarantine" || before.count(name)) continue;
        fs::rename(entry.path(), q / name);
      }
      detail::write_text(q / "error.txt", std::string(e.what()) + '\n');
      err << "partial outputs moved to " << q.string() << '\n';
    } catch (const std::exception& q) {
      err << "error: quarantine failed: " << q.what() << '\n';
    }
    return 1;
  }
}

// ---------------------------------------------------------------------------
// Commands

inline void cmd_synth(const SynthCommand& c, std::ostream& log = std::cout) {
  detail::start_run("synth", c.common,
                    {{"frames", std::to_string(c.frames)},
                     {"height", std::to_string(c.height)},
                     {"width", std::to_string(c.width)}});
  SynthConfig s;
  s.n_frames = c.frames;
  s.image_size = {c.height, c.width};
  s.seed = c.common.seed;
  export_kitti_layout(c.common.out, synth_generate_full(s));
  log << "wrote " << c.frames << " synthetic frames to " << c.common.out << '\n';
}

// One LIMG per velodyne scan plus occupancy statistics.
inline void cmd_project(const ProjectCommand& c, std::ostream& log = std::cout) {
  detail::require_data_root(c.common);
  detail::start_run("project", c.common, {});
  const fs::path base = fs::path(c.common.data_root) / "training";
  const fs::path velo_dir = base / "velodyne";
  if (!fs::is_directory(velo_dir)) throw FormatError("missing directory " + velo_dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(velo_dir)) {
    if (e.path().extension() == ".bin") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw FormatError("no velodyne scans under " + velo_dir.string());
  std::ostringstream csv;
  csv << "frame,points,occupied,pixels,occupancy\n";
  for (const auto& id : ids) {
    const Image8 rgb = read_png((base / "image_2" / (id + ".png")).string(), 1);
    const auto calib = parse_calib((base / "calib" / (id + ".txt")).string(), {rgb.height, rgb.width});
    const auto cloud = load_velodyne_bin((velo_dir / (id + ".bin")).string());
    const auto img = make_lidar_image(cloud, calib);
    save_limg((fs::path(c.common.out) / (id + ".limg")).string(), img);
    csv << id << ',' << cloud.size() << ',' << img.occupied() << ',' << img.plane() << ','
        << std::setprecision(6) << img.occupancy() << '\n';
    log << id << ": " << cloud.size() << " points, " << img.occupied() << '/' << img.plane()
        << " pixels occupied (" << std::fixed << std::setprecision(2) << 100.0 * img.occupancy() << "%)\n"
        << std::defaultfloat;
  }
  detail::write_text(fs::path(c.common.out) / "occupancy.csv", csv.str());
}

inline TrainConfig train_config_for(Preset p, std::optional<int> iterations, std::optional<double> lr,
                                    std::uint64_t seed) {
  TrainConfig t = p == Preset::Paper ? TrainConfig::paper() : TrainConfig::tiny();
  if (iterations) t.iterations = *iterations;
  if (lr) t.initial_lr = *lr;
  t.seed = seed;
  t.validate();
  return t;
}

struct TrainSummary {
  std::vector<LossRecord> log;
  std::string model_path;
  double train_accuracy = 0;
};

inline TrainSummary cmd_train(const TrainCommand& c, std::ostream& log = std::cout) {
  const auto& cc = c.common;
  TrainConfig tc = train_config_for(cc.preset, c.iterations, c.lr, cc.seed);
  detail::start_run("train", cc,
                    {{"iterations", std::to_string(tc.iterations)},
                     {"lr", detail::str(tc.initial_lr)},
                     {"checkpoint-every", std::to_string(c.checkpoint_every)}});
  const auto frames = detail::load_frames(cc);
  NetConfig net = net_config_for(cc.preset, cc.strategy);
  net.seed = cc.seed;
  auto model = build_model<float>(net);
  tc.checkpoint_every = c.checkpoint_every;
  tc.checkpoint_dir = (fs::path(cc.out) / "checkpoints").string();
  const int report_every = std::max(1, tc.iterations / 20);
  auto result = train(model, frames, tc, [&](const LossRecord& r) {
    if ((r.iteration + 1) % report_every == 0) {
      log << "iter " << r.iteration + 1 << " lr " << r.lr << " loss " << r.loss << '\n';
    }
  });
  write_loss_csv((fs::path(cc.out) / "loss.csv").string(), result.log);
  for (const auto& ck : result.checkpoints) write_model_sidecar(ck, net, cc.preset);
  TrainSummary s;
  s.log = std::move(result.log);
  s.model_path = (fs::path(cc.out) / "model.sfcn").string();
  save_checkpoint(s.model_path, model.tensors());
  write_model_sidecar(s.model_path, net, cc.preset);
  s.train_accuracy = pixel_accuracy(model, frames);
  std::ostringstream summary;
  summary << std::setprecision(9) << "frames=" << frames.size() << "\niterations=" << tc.iterations
          << "\nfinal_loss=" << s.log.back().loss << "\ntrain_pixel_accuracy=" << s.train_accuracy << '\n';
  detail::write_text(fs::path(cc.out) / "summary.txt", summary.str());
  log << "training pixel accuracy " << s.train_accuracy << '\n';
  return s;
}

// Per-category rows plus the combined URBAN row, Table-4 layout.
struct EvalResult {
  std::vector<ReportRow> rows;
  std::string table;
};

inline EvalResult cmd_eval(const EvalCommand& c, std::ostream& log = std::cout) {
  const auto& cc = c.common;
  if (c.checkpoint.empty() == c.pred_dir.empty()) {
    throw ConfigError("eval needs exactly one of --checkpoint or --pred-dir");
  }
  detail::start_run("eval", cc, {{"checkpoint", c.checkpoint}, {"pred-dir", c.pred_dir}});
  std::optional<ModelParams<float>> model;
  LoadOptions lo = detail::load_options(cc.preset);
  if (!c.checkpoint.empty()) {
    model = load_model(c.checkpoint);
    lo.resize_to = model->config().input_size;
    if (read_model_sidecar(c.checkpoint).second == Preset::Paper) lo.resize_to.reset();
  } else {
    lo.resize_to.reset();  // predictions are compared at their native resolution
  }
  detail::require_data_root(cc);
  const auto frames = load_kitti_road(cc.data_root, lo);
  if (frames.empty()) throw FormatError("no frames under " + cc.data_root);

  EvalOptions opt;
  opt.fnr_mode = cc.fnr_mode;
  opt.bev = cc.bev;
  std::map<Category, SweepAccumulator> per_cat;
  SweepAccumulator all;
  for (const auto& f : frames) {
    std::vector<float> prob;
    if (model) {
      prob = predict_road_probability(*model, f);
    } else {
      const std::string number = f.frame_id.substr(f.frame_id.find('_') + 1);
      fs::path p = fs::path(c.pred_dir) / (f.frame_id + ".png");
      if (!fs::exists(p)) p = fs::path(c.pred_dir) / (std::string(category_prefix(f.category)) + "_road_" + number + ".png");
      if (!fs::exists(p)) throw FormatError("no prediction for frame " + f.frame_id + " in " + c.pred_dir);
      const Image8 img = read_png(p.string(), 1);
      if (img.height != f.height || img.width != f.width) {
        throw FormatError("prediction " + p.string() + " does not match frame size");
      }
      prob.resize(img.pixels.size());
      for (std::size_t i = 0; i < prob.size(); ++i) prob[i] = static_cast<float>(img.pixels[i] / 255.0);
    }
    SweepAccumulator one;
    accumulate_frame(one, f, prob, opt);
    per_cat[f.category].merge(one);
    all.merge(one);
  }
  EvalResult r;
  for (const auto& [cat, acc] : per_cat) {
    std::string label = category_prefix(cat);
    for (auto& ch : label) ch = static_cast<char>(std::toupper(ch));
    r.rows.push_back({label + " ROAD", acc.report(cc.fnr_mode)});
  }
  r.rows.push_back({"URBAN ROAD", all.report(cc.fnr_mode)});
  r.table = format_table("Benchmark", benchmark_table_columns(), r.rows);
  auto csv_cols = benchmark_table_columns();
  csv_cols.push_back(MetricColumn::Accuracy);
  detail::write_text(fs::path(cc.out) / "metrics.txt", r.table);
  detail::write_text(fs::path(cc.out) / "metrics.csv", format_csv("Benchmark", csv_cols, r.rows));
  log << r.table;
  return r;
}

inline void cmd_infer(const InferCommand& c, std::ostream& log = std::cout) {
  const auto& cc = c.common;
  if (c.checkpoint.empty()) throw ConfigError("infer needs --checkpoint");
  detail::start_run("infer", cc, {{"checkpoint", c.checkpoint}, {"tau", detail::str(c.tau)}});
  const auto model = load_model(c.checkpoint);
  LoadOptions lo;
  if (read_model_sidecar(c.checkpoint).second == Preset::Tiny) lo.resize_to = model.config().input_size;
  detail::require_data_root(cc);
  const auto frames = load_kitti_road(cc.data_root, lo);
  for (const auto& f : frames) {
    const auto prob = predict_road_probability(model, f);
    const fs::path base = fs::path(cc.out) / f.frame_id;
    write_png(base.string() + "_prob.png", detail::probability_png(prob, f.height, f.width));
    write_png(base.string() + "_overlay.png",
              render_overlay(f.rgb, f.height, f.width, prob, f.gt_road, f.gt_valid, c.tau));
  }
  log << "wrote " << frames.size() << " probability maps and overlays to " << cc.out << '\n';
}

struct CompareFusionResult {
  std::vector<StrategyResult> results;
  std::string table;  // Table-2 layout
  std::string ordering;
};

// "Siamese structure > Late Fusion > Early Fusion" by MaxF (stable for ties).
inline std::string strategy_ordering(const std::vector<StrategyResult>& results) {
  std::vector<const StrategyResult*> order;
  for (const auto& r : results) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](const StrategyResult* a, const StrategyResult* b) {
    return a->report.max_f.value_or(-1) > b->report.max_f.value_or(-1);
  });
  std::string s;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i) s += order[i - 1]->report.max_f == order[i]->report.max_f ? " = " : " > ";
    s += fusion_row_label(order[i]->strategy);
  }
  return s;
}

inline CompareFusionResult cmd_compare_fusion(const CompareFusionCommand& c, std::ostream& log = std::cout) {
  const auto& cc = c.common;
  CompareFusionConfig cfg;
  cfg.preset = cc.preset;
  cfg.train = train_config_for(cc.preset, c.iterations, c.lr, cc.seed);
  cfg.seed = cc.seed;
  cfg.eval.fnr_mode = cc.fnr_mode;
  cfg.eval.bev = cc.bev;
  detail::start_run("compare-fusion", cc,
                    {{"iterations", std::to_string(cfg.train.iterations)},
                     {"lr", detail::str(cfg.train.initial_lr)},
                     {"n-train", std::to_string(c.n_train)},
                     {"synth-frames", cc.data_root.empty() ? std::to_string(c.synth_frames) : "-"}});
  std::vector<RoadFrame> frames;
  if (cc.data_root.empty()) {
    SynthConfig s;
    s.n_frames = c.synth_frames;
    s.seed = cc.seed;
    s.image_size = NetConfig::tiny(FusionStrategy::Siamese).input_size;
    frames = synth_generate(s);
  } else {
    frames = detail::load_frames(cc);
  }
  if (c.n_train < 1 || c.n_train >= static_cast<int>(frames.size())) {
    throw ConfigError("--n-train must leave at least one validation frame");
  }
  const auto split = make_split(frames, static_cast<std::size_t>(c.n_train), cc.seed);
  const auto [train_frames, val_frames] = split_train_val(frames, split);
  log << "compare-fusion: " << train_frames.size() << " train / " << val_frames.size() << " validation frames, "
      << cfg.train.iterations << " iterations per strategy\n";
  CompareFusionResult r;
  const int report_every = std::max(1, cfg.train.iterations / 10);
  r.results = compare_fusion(train_frames, val_frames, cfg, [&](FusionStrategy s, const LossRecord& rec) {
    if ((rec.iteration + 1) % report_every == 0) {
      log << strategy_name(s) << " iter " << rec.iteration + 1 << " loss " << rec.loss << '\n';
    }
  });
  r.table = fusion_table(r.results);
  r.ordering = strategy_ordering(r.results);
  for (const auto& s : r.results) {
    write_loss_csv((fs::path(cc.out) / (std::string("loss_") + strategy_name(s.strategy) + ".csv")).string(), s.log);
  }
  auto csv_cols = fusion_table_columns();
  detail::write_text(fs::path(cc.out) / "fusion_table.txt", r.table);
  detail::write_text(fs::path(cc.out) / "fusion_table.csv", format_csv("Fusion Strategy", csv_cols, fusion_rows(r.results)));
  std::ostringstream report;
  report << r.table << "\nOrdering by MaxF: " << r.ordering << "\n\nPublished full-scale reference (not expected at desk scale):\n"
         << format_table("Fusion Strategy", fusion_table_columns(),
                         reference::report_rows(reference::fusion_strategies()));
  detail::write_text(fs::path(cc.out) / "report.txt", report.str());
  log << report.str();
  return r;
}

}  // namespace sfcn::cli
