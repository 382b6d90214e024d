#pragma once

// Road-segmentation metrics: confusion counts, the 256-threshold MaxF/AP
// sweep, optional bird's-eye-view warping and TP/FP/FN overlays.

#include <Eigen/Core>
#include <Eigen/LU>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sfcn/error.hpp"
#include "sfcn/image_io.hpp"

namespace sfcn {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

namespace detail {

inline void check_raster_sizes(std::size_t prob, std::size_t road, std::size_t valid) {
  if (prob != road || prob != valid) {
    throw ShapeError("metric rasters differ in size: prob " + std::to_string(prob) + ", gt_road " +
                     std::to_string(road) + ", gt_valid " + std::to_string(valid));
  }
}

}  // namespace detail

// prediction = prob >= tau, counted over valid pixels only.
inline ConfusionCounts confusion_at_threshold(std::span<const float> prob, std::span<const std::uint8_t> gt_road,
                                              std::span<const std::uint8_t> gt_valid, double tau) {
  detail::check_raster_sizes(prob.size(), gt_road.size(), gt_valid.size());
  ConfusionCounts c;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    if (!gt_valid[i]) continue;
    const bool pred = static_cast<double>(prob[i]) >= tau;
    if (gt_road[i]) {
      pred ? ++c.tp : ++c.fn;
    } else {
      pred ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

enum class FnrMode { Paper, Standard };

inline const char* fnr_mode_name(FnrMode m) { return m == FnrMode::Paper ? "paper" : "standard"; }

inline FnrMode parse_fnr_mode(const std::string& s) {
  if (s == "paper") return FnrMode::Paper;
  if (s == "standard") return FnrMode::Standard;
  throw ConfigError("unknown fnr mode '" + s + "' (expected paper or standard)");
}

// Ratios with a zero denominator are absent rather than 0/0.
struct ThresholdMetrics {
  std::optional<double> pre, rec, f, fpr, fnr, accuracy;
};

namespace detail {

inline std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace detail

// F is evaluated as 2TP/(2TP+FP+FN), which equals 2·PRE·REC/(PRE+REC)
// wherever the latter is defined and is 0 (not 0/0) when TP = 0.
inline ThresholdMetrics compute_metrics(const ConfusionCounts& c, FnrMode mode = FnrMode::Paper) {
  ThresholdMetrics m;
  m.pre = detail::ratio(c.tp, c.tp + c.fp);
  m.rec = detail::ratio(c.tp, c.tp + c.fn);
  m.f = detail::ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  m.fpr = detail::ratio(c.fp, c.tn + c.fp);
  m.fnr = mode == FnrMode::Paper ? detail::ratio(c.fn, c.fn + c.fp) : detail::ratio(c.fn, c.fn + c.tp);
  m.accuracy = detail::ratio(c.tp + c.tn, c.total());
  return m;
}

struct MetricsReport {
  ConfusionCounts counts;  // at the MaxF threshold
  std::optional<double> max_f, ap, pre, rec, fpr, fnr, accuracy;
  std::optional<double> threshold_at_maxf;
};

inline constexpr int kSweepSize = 256;

inline double sweep_threshold(int i) { return static_cast<double>(i) / 255.0; }

// Number of sweep thresholds i/255 that `p` reaches (p >= i/255), in [0, 256].
inline int thresholds_reached(float p) {
  const double v = static_cast<double>(p);
  if (!(v >= 0.0)) return 0;
  int i = static_cast<int>(std::min(255.0, std::floor(v * 255.0)));
  while (i < kSweepSize - 1 && v >= sweep_threshold(i + 1)) ++i;
  while (i >= 0 && v < sweep_threshold(i)) --i;
  return i + 1;
}

// Accumulates the 256 per-threshold confusion matrices over any number of
// frames. Counts add, so frame order and partitioning do not matter.
class SweepAccumulator {
 public:
  void add(std::span<const float> prob, std::span<const std::uint8_t> gt_road,
           std::span<const std::uint8_t> gt_valid) {
    detail::check_raster_sizes(prob.size(), gt_road.size(), gt_valid.size());
    // hist[k]: pixels reaching exactly k thresholds.
    std::array<std::uint64_t, kSweepSize + 1> road{}, other{};
    for (std::size_t i = 0; i < prob.size(); ++i) {
      if (!gt_valid[i]) continue;
      (gt_road[i] ? road : other)[static_cast<std::size_t>(thresholds_reached(prob[i]))]++;
    }
    // Pixels with k > i are predicted road at threshold i.
    std::uint64_t road_above = 0, other_above = 0;
    std::uint64_t road_total = 0, other_total = 0;
    for (std::size_t k = 0; k <= kSweepSize; ++k) {
      road_total += road[k];
      other_total += other[k];
    }
    for (int i = kSweepSize - 1; i >= 0; --i) {
      road_above += road[static_cast<std::size_t>(i) + 1];
      other_above += other[static_cast<std::size_t>(i) + 1];
      auto& c = counts_[static_cast<std::size_t>(i)];
      c.tp += road_above;
      c.fn += road_total - road_above;
      c.fp += other_above;
      c.tn += other_total - other_above;
    }
  }

  void merge(const SweepAccumulator& o) {
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
  }

  const std::array<ConfusionCounts, kSweepSize>& counts() const { return counts_; }

  MetricsReport report(FnrMode mode = FnrMode::Paper) const {
    MetricsReport r;
    const auto& c0 = counts_[0];
    if (c0.tp + c0.fn == 0) return r;  // no valid road pixels: everything absent

    int best = -1;
    double best_f = -1;
    for (int i = 0; i < kSweepSize; ++i) {
      const auto f = compute_metrics(counts_[static_cast<std::size_t>(i)], mode).f;
      if (f && *f > best_f) {
        best_f = *f;
        best = i;
      }
    }
    const auto& c = counts_[static_cast<std::size_t>(best)];
    const auto m = compute_metrics(c, mode);
    r.counts = c;
    r.max_f = best_f;
    r.threshold_at_maxf = sweep_threshold(best);
    r.pre = m.pre;
    r.rec = m.rec;
    r.fpr = m.fpr;
    r.fnr = m.fnr;
    r.accuracy = m.accuracy;
    r.ap = average_precision();
    return r;
  }

  // Trapezoidal area under the recall-sorted PR curve, using the monotone
  // precision envelope (p(r) = max precision at recall >= r) and extending the
  // first point flat to recall 0.
  std::optional<double> average_precision() const {
    std::vector<std::pair<double, double>> pts;  // (recall, precision)
    for (const auto& c : counts_) {
      const auto m = compute_metrics(c);
      if (m.pre && m.rec) pts.emplace_back(*m.rec, *m.pre);
    }
    if (pts.empty()) return std::nullopt;
    std::sort(pts.begin(), pts.end());
    for (std::size_t i = pts.size() - 1; i-- > 0;) pts[i].second = std::max(pts[i].second, pts[i + 1].second);
    double area = pts.front().first * pts.front().second;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      area += (pts[i].first - pts[i - 1].first) * 0.5 * (pts[i].second + pts[i - 1].second);
    }
    return std::clamp(area, 0.0, 1.0);
  }

 private:
  std::array<ConfusionCounts, kSweepSize> counts_{};
};

inline MetricsReport max_f_and_ap_sweep(std::span<const float> prob, std::span<const std::uint8_t> gt_road,
                                        std::span<const std::uint8_t> gt_valid, FnrMode mode = FnrMode::Paper) {
  SweepAccumulator acc;
  acc.add(prob, gt_road, gt_valid);
  return acc.report(mode);
}

// ---------------------------------------------------------------------------
// Bird's-eye view. Cell (r, c) has metric centre (x, y) = ((c+0.5)·mpc,
// (r+0.5)·mpc); the homography maps (x, y, 1) to homogeneous image pixels and
// the cell copies pixel (floor v, floor u).

struct BevGrid {
  int rows = 800;
  int cols = 400;
  double meters_per_cell = 0.05;
};

template <typename V>
struct BevRaster {
  int rows = 0, cols = 0, channels = 1;
  std::vector<V> values;  // channel planes
  std::vector<std::uint8_t> valid;
};

template <typename V>
BevRaster<V> bev_warp(std::span<const V> raster, int height, int width, int channels, const Eigen::Matrix3d& H,
                      const BevGrid& grid) {
  if (height < 1 || width < 1 || channels < 1) throw ShapeError("bev_warp: empty raster");
  if (raster.size() != static_cast<std::size_t>(height) * width * channels) {
    throw ShapeError("bev_warp: raster size does not match height*width*channels");
  }
  if (grid.rows < 1 || grid.cols < 1 || !(grid.meters_per_cell > 0)) throw ConfigError("bev_warp: bad grid");
  const double det = H.determinant();
  if (!std::isfinite(det) || std::abs(det) <= 1e-12 * std::max(1.0, H.cwiseAbs().maxCoeff())) {
    throw ConfigError("bev_warp: singular homography");
  }
  BevRaster<V> out;
  out.rows = grid.rows;
  out.cols = grid.cols;
  out.channels = channels;
  const std::size_t plane = static_cast<std::size_t>(grid.rows) * grid.cols;
  const std::size_t src_plane = static_cast<std::size_t>(height) * width;
  out.values.assign(plane * channels, V{});
  out.valid.assign(plane, 0);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const Eigen::Vector3d q = H * Eigen::Vector3d((c + 0.5) * grid.meters_per_cell,
                                                    (r + 0.5) * grid.meters_per_cell, 1.0);
      if (!(q.z() > 0)) continue;
      const double u = std::floor(q.x() / q.z()), v = std::floor(q.y() / q.z());
      if (!(u >= 0 && u < width && v >= 0 && v < height)) continue;
      const std::size_t src = static_cast<std::size_t>(v) * width + static_cast<std::size_t>(u);
      const std::size_t dst = static_cast<std::size_t>(r) * grid.cols + c;
      for (int ch = 0; ch < channels; ++ch) out.values[ch * plane + dst] = raster[ch * src_plane + src];
      out.valid[dst] = 1;
    }
  }
  return out;
}

// Ground-plane homography for a camera `camera_height` metres above a flat
// road: BEV x runs right from `x_min`, BEV y runs towards the camera from
// `z_max`, so row 0 is the far edge.
inline Eigen::Matrix3d ground_plane_homography(const Eigen::Matrix3d& K, double camera_height = 1.65,
                                               double x_min = -10.0, double z_max = 46.0) {
  Eigen::Matrix3d M;
  M << 1, 0, x_min, 0, 0, camera_height, 0, -1, z_max;
  return K * M;
}

// Warps prob/gt/valid into BEV; unmapped cells become invalid.
struct BevMasks {
  std::vector<float> prob;
  std::vector<std::uint8_t> gt_road, gt_valid;
};

inline BevMasks bev_warp_masks(std::span<const float> prob, std::span<const std::uint8_t> gt_road,
                               std::span<const std::uint8_t> gt_valid, int height, int width,
                               const Eigen::Matrix3d& H, const BevGrid& grid) {
  detail::check_raster_sizes(prob.size(), gt_road.size(), gt_valid.size());
  const auto p = bev_warp<float>(prob, height, width, 1, H, grid);
  const auto g = bev_warp<std::uint8_t>(gt_road, height, width, 1, H, grid);
  const auto v = bev_warp<std::uint8_t>(gt_valid, height, width, 1, H, grid);
  BevMasks out{p.values, g.values, v.values};
  for (std::size_t i = 0; i < out.gt_valid.size(); ++i) out.gt_valid[i] = out.gt_valid[i] && v.valid[i];
  return out;
}

// ---------------------------------------------------------------------------
// Overlay: TP green, FP blue, FN red, blended 50% over the image; TN and
// invalid pixels keep their colour.

enum class PixelOutcome : std::uint8_t { Invalid, TrueNegative, TruePositive, FalsePositive, FalseNegative };

inline std::vector<PixelOutcome> classify_pixels(std::span<const float> prob, std::span<const std::uint8_t> gt_road,
                                                 std::span<const std::uint8_t> gt_valid, double tau) {
  detail::check_raster_sizes(prob.size(), gt_road.size(), gt_valid.size());
  std::vector<PixelOutcome> out(prob.size(), PixelOutcome::Invalid);
  for (std::size_t i = 0; i < prob.size(); ++i) {
    if (!gt_valid[i]) continue;
    const bool pred = static_cast<double>(prob[i]) >= tau;
    out[i] = gt_road[i] ? (pred ? PixelOutcome::TruePositive : PixelOutcome::FalseNegative)
                        : (pred ? PixelOutcome::FalsePositive : PixelOutcome::TrueNegative);
  }
  return out;
}

// `rgb` holds three planes in [0,1] (RoadFrame layout).
inline Image8 render_overlay(std::span<const float> rgb, int height, int width, std::span<const float> prob,
                             std::span<const std::uint8_t> gt_road, std::span<const std::uint8_t> gt_valid,
                             double tau) {
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  if (rgb.size() != 3 * plane) throw ShapeError("overlay: rgb must hold 3 planes of height*width");
  if (prob.size() != plane) throw ShapeError("overlay: prob size does not match the image");
  const auto outcome = classify_pixels(prob, gt_road, gt_valid, tau);
  Image8 img;
  img.height = height;
  img.width = width;
  img.channels = 3;
  img.pixels.resize(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    std::array<int, 3> tint{-1, -1, -1};
    switch (outcome[i]) {
      case PixelOutcome::TruePositive: tint = {0, 255, 0}; break;
      case PixelOutcome::FalsePositive: tint = {0, 0, 255}; break;
      case PixelOutcome::FalseNegative: tint = {255, 0, 0}; break;
      default: break;
    }
    for (std::size_t c = 0; c < 3; ++c) {
      const double base = std::clamp(static_cast<double>(rgb[c * plane + i]), 0.0, 1.0) * 255.0;
      const double v = tint[c] < 0 ? base : 0.5 * base + 0.5 * tint[c];
      img.pixels[3 * i + c] = static_cast<std::uint8_t>(std::lround(v));
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Report tables. Percentages mirror the paper's tables; absent values print n/a.

enum class MetricColumn { MaxF, AP, PRE, REC, FPR, FNR, Accuracy };

inline const char* metric_column_name(MetricColumn c) {
  switch (c) {
    case MetricColumn::MaxF: return "MaxF";
    case MetricColumn::AP: return "AP";
    case MetricColumn::PRE: return "PRE";
    case MetricColumn::REC: return "REC";
    case MetricColumn::FPR: return "FPR";
    case MetricColumn::FNR: return "FNR";
    case MetricColumn::Accuracy: return "Accuracy";
  }
  return "?";
}

inline std::optional<double> metric_value(const MetricsReport& r, MetricColumn c) {
  switch (c) {
    case MetricColumn::MaxF: return r.max_f;
    case MetricColumn::AP: return r.ap;
    case MetricColumn::PRE: return r.pre;
    case MetricColumn::REC: return r.rec;
    case MetricColumn::FPR: return r.fpr;
    case MetricColumn::FNR: return r.fnr;
    case MetricColumn::Accuracy: return r.accuracy;
  }
  return std::nullopt;
}

// Fusion-strategy comparison layout and benchmark-category layout.
inline const std::vector<MetricColumn>& fusion_table_columns() {
  static const std::vector<MetricColumn> cols{MetricColumn::MaxF, MetricColumn::PRE, MetricColumn::REC,
                                              MetricColumn::Accuracy};
  return cols;
}
inline const std::vector<MetricColumn>& benchmark_table_columns() {
  static const std::vector<MetricColumn> cols{MetricColumn::MaxF, MetricColumn::AP,  MetricColumn::PRE,
                                              MetricColumn::REC,  MetricColumn::FPR, MetricColumn::FNR};
  return cols;
}

struct ReportRow {
  std::string label;
  MetricsReport report;
};

inline std::string format_percent(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << (*v * 100.0) << '%';
  return os.str();
}

inline std::string format_table(const std::string& first_header, const std::vector<MetricColumn>& columns,
                                const std::vector<ReportRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{first_header};
  for (auto c : columns) header.emplace_back(metric_column_name(c));
  cells.push_back(header);
  for (const auto& row : rows) {
    std::vector<std::string> line{row.label};
    for (auto c : columns) line.push_back(format_percent(metric_value(row.report, c)));
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  std::ostringstream os;
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i == 0) {
        os << std::left << std::setw(static_cast<int>(width[i])) << line[i];
      } else {
        os << "  " << std::right << std::setw(static_cast<int>(width[i])) << line[i];
      }
    }
    os << '\n';
  }
  return os.str();
}

inline std::string format_csv(const std::string& first_header, const std::vector<MetricColumn>& columns,
                              const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os << first_header;
  for (auto c : columns) os << ',' << metric_column_name(c);
  os << ",threshold,TP,FP,FN,TN\n" << std::setprecision(9);
  for (const auto& row : rows) {
    os << row.label;
    for (auto c : columns) {
      os << ',';
      if (auto v = metric_value(row.report, c)) os << *v;
    }
    os << ',';
    if (row.report.threshold_at_maxf) os << *row.report.threshold_at_maxf;
    const auto& k = row.report.counts;
    os << ',' << k.tp << ',' << k.fp << ',' << k.fn << ',' << k.tn << '\n';
  }
  return os.str();
}

}  // namespace sfcn
