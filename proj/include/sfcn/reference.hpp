#pragma once

// Published full-scale results, shipped as reference fixtures only. They come
// from GPU training on full KITTI and server-held test labels and are never
// expected from a desk-scale run. Values are fractions; absent cells are nullopt.

#include <optional>
#include <string>
#include <vector>

#include "sfcn/evaluation.hpp"

namespace sfcn::reference {

struct Row {
  std::string label;
  std::optional<double> max_f, ap, pre, rec, fpr, fnr, accuracy;

  MetricsReport report() const {
    MetricsReport r;
    r.max_f = max_f;
    r.ap = ap;
    r.pre = pre;
    r.rec = rec;
    r.fpr = fpr;
    r.fnr = fnr;
    r.accuracy = accuracy;
    return r;
  }
};

// Fusion strategies on the 240/49 validation split.
inline const std::vector<Row>& fusion_strategies() {
  static const std::vector<Row> rows{
      {"Early Fusion", 0.8968, {}, 0.9002, 0.8871, {}, {}, 0.9559},
      {"Late Fusion", 0.9087, {}, 0.9113, 0.9079, {}, {}, 0.9688},
      {"Siamese structure", 0.9140, {}, 0.9121, 0.9160, {}, {}, 0.9702},
  };
  return rows;
}

// Sparse versus dense LiDAR input on the same split.
inline const std::vector<Row>& lidar_density() {
  static const std::vector<Row> rows{
      {"Original FCN-8s (RGB only)", 0.8831, {}, 0.8946, 0.8719, {}, {}, 0.9601},
      {"Siamese-FCN (dense LiDAR)", 0.9186, {}, 0.9273, 0.9102, {}, {}, 0.9721},
      {"Siamese-FCN (sparse LiDAR)", 0.9140, {}, 0.9121, 0.9160, {}, {}, 0.9702},
  };
  return rows;
}

// KITTI ROAD test-server results per category (BEV).
inline const std::vector<Row>& benchmark_categories() {
  static const std::vector<Row> rows{
      {"UM ROAD", 0.9103, 0.8464, 0.8998, 0.9211, 0.0467, 0.0789, {}},
      {"UMM ROAD", 0.9368, 0.8974, 0.9348, 0.9387, 0.0720, 0.0613, {}},
      {"UU ROAD", 0.8802, 0.7558, 0.8691, 0.8916, 0.0437, 0.1084, {}},
      {"URBAN ROAD", 0.9151, 0.8579, 0.9082, 0.9221, 0.0513, 0.0779, {}},
  };
  return rows;
}

// KITTI ROAD URBAN results of published methods.
inline const std::vector<Row>& benchmark_methods() {
  static const std::vector<Row> rows{
      {"Multi-task CNN", 0.8681, 0.8215, 0.7826, 0.9747, 0.1492, 0.0253, {}},
      {"FCN-LC", 0.9079, 0.8583, 0.9087, 0.9072, 0.0502, 0.0928, {}},
      {"LidarHisto", 0.9067, 0.8479, 0.9306, 0.8841, 0.0363, 0.1159, {}},
      {"MixedCRF", 0.9059, 0.8424, 0.8911, 0.9213, 0.0620, 0.0787, {}},
      {"HybridCRF", 0.9099, 0.8526, 0.9065, 0.9133, 0.0429, 0.0867, {}},
      {"FusedCRF", 0.8955, 0.8000, 0.8487, 0.9478, 0.0770, 0.0522, {}},
      {"Our method", 0.9151, 0.8579, 0.9082, 0.9221, 0.0513, 0.0779, {}},
  };
  return rows;
}

inline std::vector<ReportRow> report_rows(const std::vector<Row>& rows) {
  std::vector<ReportRow> out;
  for (const auto& r : rows) out.push_back({r.label, r.report()});
  return out;
}

}  // namespace sfcn::reference
