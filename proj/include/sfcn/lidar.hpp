#pragma once

// LiDAR sweep I/O, camera calibration and the sparse LiDAR image.
//
// A point p in the LiDAR frame lands on the image at
//   p_cam = R p + t,   (u, v, 1)^T ~ K p_cam
// and is kept only when it is in front of the camera and inside the raster.

#include <Eigen/Core>
#include <Eigen/LU>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sfcn/checkpoint.hpp"
#include "sfcn/error.hpp"

namespace sfcn {

struct LidarPoint {
  float x = 0, y = 0, z = 0;
  float reflectance = 0;
};

struct PointCloud {
  std::vector<LidarPoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct ImageSize {
  int height = 0;
  int width = 0;
  bool operator==(const ImageSize&) const = default;
};

struct CalibrationSet {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  ImageSize image_size;

  // Throws ConfigError unless R is a proper rotation within `tol` and K is an
  // upper-triangular intrinsic matrix with positive focal lengths.
  void validate(double tol = 1e-6) const {
    if (std::abs(R.determinant() - 1.0) > tol) {
      throw ConfigError("rotation determinant " + std::to_string(R.determinant()) + " is not 1");
    }
    const double ortho = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (ortho > tol) throw ConfigError("rotation is not orthonormal (max error " + std::to_string(ortho) + ")");
    if (K(1, 0) != 0 || K(2, 0) != 0 || K(2, 1) != 0 || K(2, 2) != 1) {
      throw ConfigError("intrinsics must be upper-triangular with K(2,2) = 1");
    }
    if (!(K(0, 0) > 0) || !(K(1, 1) > 0)) throw ConfigError("focal lengths must be positive");
    if (image_size.height < 1 || image_size.width < 1) throw ConfigError("calibration image size unset");
    if (!K.allFinite() || !R.allFinite() || !t.allFinite()) throw ConfigError("non-finite calibration");
  }
};

// ---------------------------------------------------------------------------
// Velodyne .bin: consecutive little-endian float32 quadruples (x, y, z, r).

inline PointCloud load_velodyne_bin(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw FormatError("cannot open velodyne file: " + path);
  const auto bytes = static_cast<std::size_t>(is.tellg());
  if (bytes % 16 != 0) {
    throw FormatError("velodyne file " + path + " has " + std::to_string(bytes) +
                      " bytes, not a multiple of 16 (truncated record)");
  }
  is.seekg(0);
  PointCloud cloud;
  cloud.points.resize(bytes / 16);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    auto& p = cloud.points[i];
    p.x = detail::read_le<float>(is, "velodyne x");
    p.y = detail::read_le<float>(is, "velodyne y");
    p.z = detail::read_le<float>(is, "velodyne z");
    p.reflectance = detail::read_le<float>(is, "velodyne reflectance");
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) ||
        !std::isfinite(p.reflectance)) {
      throw FormatError("non-finite value in point " + std::to_string(i) + " of " + path);
    }
  }
  return cloud;
}

inline void save_velodyne_bin(const std::string& path, const PointCloud& cloud) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open for writing: " + path);
  for (const auto& p : cloud.points) {
    detail::write_le(os, p.x);
    detail::write_le(os, p.y);
    detail::write_le(os, p.z);
    detail::write_le(os, p.reflectance);
  }
  if (!os) throw Error("failed writing " + path);
}

// ---------------------------------------------------------------------------
// KITTI calibration text: "KEY: v0 v1 ..." lines. Uses P2 (3x4), R0_rect (3x3)
// and Tr_velo_to_cam (3x4). With P2 = [K | K b]:
//   K p_rect + K b = K (R0 Tr_R p + R0 Tr_t + b)  =>  R = R0 Tr_R, t = R0 Tr_t + K^-1 P2[:,3]

inline std::map<std::string, std::vector<double>> parse_kitti_keyvalues(std::istream& is) {
  std::map<std::string, std::vector<double>> out;
  std::string line;
  while (std::getline(is, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = line.substr(0, colon);
    key.erase(std::remove_if(key.begin(), key.end(), ::isspace), key.end());
    std::istringstream vs(line.substr(colon + 1));
    std::vector<double> values;
    std::string tok;
    while (vs >> tok) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw FormatError("calibration key " + key + " has non-numeric value '" + tok + "'");
      }
    }
    out[key] = std::move(values);
  }
  return out;
}

inline CalibrationSet parse_calib_stream(std::istream& is, ImageSize image_size, double tol = 1e-6) {
  const auto kv = parse_kitti_keyvalues(is);
  auto get = [&](const std::string& key, std::size_t n) -> const std::vector<double>& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("calibration is missing key " + key);
    if (it->second.size() != n) {
      throw FormatError("calibration key " + key + " needs " + std::to_string(n) + " values, found " +
                        std::to_string(it->second.size()));
    }
    return it->second;
  };
  const auto& p2 = get("P2", 12);
  const auto& r0 = get("R0_rect", 9);
  const auto& tr = get("Tr_velo_to_cam", 12);

  Eigen::Matrix3d K, R0, TrR;
  Eigen::Vector3d p2col, TrT;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      K(r, c) = p2[r * 4 + c];
      R0(r, c) = r0[r * 3 + c];
      TrR(r, c) = tr[r * 4 + c];
    }
    p2col(r) = p2[r * 4 + 3];
    TrT(r) = tr[r * 4 + 3];
  }
  CalibrationSet calib;
  calib.K = K;
  calib.R = R0 * TrR;
  calib.t = R0 * TrT;
  if (!p2col.isZero(0.0)) calib.t += K.lu().solve(p2col);
  calib.image_size = image_size;
  calib.validate(tol);
  return calib;
}

inline CalibrationSet parse_calib(const std::string& path, ImageSize image_size, double tol = 1e-6) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open calibration file: " + path);
  try {
    return parse_calib_stream(is, image_size, tol);
  } catch (const Error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

// Writes a calibration that parse_calib reads back exactly: P2 = [K | 0],
// R0_rect = I, Tr_velo_to_cam = [R | t].
inline void write_kitti_calib(const std::string& path, const CalibrationSet& calib) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open for writing: " + path);
  os.precision(17);
  auto row = [&](const char* key, auto&& values) {
    os << key << ':';
    for (double v : values) os << ' ' << v;
    os << '\n';
  };
  const auto& K = calib.K;
  const auto& R = calib.R;
  const auto& t = calib.t;
  for (const char* p : {"P0", "P1"}) {
    row(p, std::array<double, 12>{K(0, 0), K(0, 1), K(0, 2), 0, K(1, 0), K(1, 1), K(1, 2), 0,
                                  K(2, 0), K(2, 1), K(2, 2), 0});
  }
  row("P2", std::array<double, 12>{K(0, 0), K(0, 1), K(0, 2), 0, K(1, 0), K(1, 1), K(1, 2), 0,
                                   K(2, 0), K(2, 1), K(2, 2), 0});
  row("R0_rect", std::array<double, 9>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  row("Tr_velo_to_cam", std::array<double, 12>{R(0, 0), R(0, 1), R(0, 2), t(0), R(1, 0), R(1, 1),
                                               R(1, 2), t(1), R(2, 0), R(2, 1), R(2, 2), t(2)});
  if (!os) throw Error("failed writing " + path);
}

// ---------------------------------------------------------------------------

struct ProjectedPoint {
  double u = 0, v = 0;
  Eigen::Vector3d p_cam = Eigen::Vector3d::Zero();
};

inline std::optional<ProjectedPoint> project_point(const Eigen::Vector3d& p_lidar,
                                                   const CalibrationSet& calib) {
  const Eigen::Vector3d p_cam = calib.R * p_lidar + calib.t;
  if (!(p_cam.z() > 0)) return std::nullopt;
  const Eigen::Vector3d q = calib.K * p_cam;
  const double u = q.x() / q.z();
  const double v = q.y() / q.z();
  if (!(u >= 0 && u < calib.image_size.width && v >= 0 && v < calib.image_size.height)) {
    return std::nullopt;
  }
  return ProjectedPoint{u, v, p_cam};
}

// Points behind the camera or outside the raster are dropped.
inline std::vector<ProjectedPoint> project_points(const PointCloud& cloud, const CalibrationSet& calib) {
  std::vector<ProjectedPoint> out;
  out.reserve(cloud.size() / 4);
  for (const auto& p : cloud.points) {
    if (auto pp = project_point(Eigen::Vector3d(p.x, p.y, p.z), calib)) out.push_back(*pp);
  }
  return out;
}

// H x W x 3 raster of camera-frame coordinates, stored as three planes
// (x, y, z). A pixel is occupied iff its triple is nonzero.
struct LidarImage {
  int height = 0;
  int width = 0;
  std::vector<float> xyz;  // 3 * height * width, plane-major
  std::vector<std::uint8_t> mask;

  LidarImage() = default;
  LidarImage(int h, int w)
      : height(h), width(w), xyz(static_cast<std::size_t>(3) * h * w, 0.f),
        mask(static_cast<std::size_t>(h) * w, 0) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  float at(int channel, int row, int col) const {
    return xyz[channel * plane() + static_cast<std::size_t>(row) * width + col];
  }
  std::size_t occupied() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  }
  double occupancy() const { return plane() ? double(occupied()) / double(plane()) : 0.0; }

  bool operator==(const LidarImage&) const = default;
};

// Pixel (floor v, floor u) keeps the point nearest to the camera.
inline LidarImage rasterize_lidar_image(const std::vector<ProjectedPoint>& projected, ImageSize size) {
  LidarImage img(size.height, size.width);
  std::vector<double> depth(img.plane(), std::numeric_limits<double>::infinity());
  for (const auto& p : projected) {
    const auto row = static_cast<long>(std::floor(p.v));
    const auto col = static_cast<long>(std::floor(p.u));
    if (row < 0 || row >= size.height || col < 0 || col >= size.width) {
      throw ShapeError("projected point outside raster");
    }
    const std::size_t idx = static_cast<std::size_t>(row) * size.width + col;
    if (p.p_cam.z() < depth[idx]) {
      depth[idx] = p.p_cam.z();
      for (int c = 0; c < 3; ++c) img.xyz[c * img.plane() + idx] = static_cast<float>(p.p_cam(c));
      img.mask[idx] = 1;
    }
  }
  return img;
}

inline LidarImage make_lidar_image(const PointCloud& cloud, const CalibrationSet& calib) {
  return rasterize_lidar_image(project_points(cloud, calib), calib.image_size);
}

// LIMG fixture: "LIMG" | u32 height | u32 width | u32 channels (3) | 3 planes f32 LE.
inline void save_limg(const std::string& path, const LidarImage& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open for writing: " + path);
  os.write("LIMG", 4);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(img.height));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(img.width));
  detail::write_le<std::uint32_t>(os, 3);
  for (float v : img.xyz) detail::write_le(os, v);
  if (!os) throw Error("failed writing " + path);
}

inline LidarImage load_limg(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open LIMG file: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "LIMG", 4) != 0) {
    throw FormatError("bad LIMG magic in " + path);
  }
  const auto h = detail::read_le<std::uint32_t>(is, "LIMG height");
  const auto w = detail::read_le<std::uint32_t>(is, "LIMG width");
  const auto c = detail::read_le<std::uint32_t>(is, "LIMG channels");
  if (c != 3 || h == 0 || w == 0) throw FormatError("bad LIMG header in " + path);
  LidarImage img(static_cast<int>(h), static_cast<int>(w));
  for (auto& v : img.xyz) v = detail::read_le<float>(is, "LIMG data");
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + path);
  for (std::size_t i = 0; i < img.plane(); ++i) {
    img.mask[i] = (img.xyz[i] != 0.f || img.xyz[img.plane() + i] != 0.f ||
                   img.xyz[2 * img.plane() + i] != 0.f);
  }
  return img;
}

}  // namespace sfcn
