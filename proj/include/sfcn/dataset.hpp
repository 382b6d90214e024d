#pragma once

// Road frames: KITTI ROAD loading, ground-truth decoding, train/validation
// splits and a synthetic scene generator that exports the same layout.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sfcn/error.hpp"
#include "sfcn/image_io.hpp"
#include "sfcn/lidar.hpp"

namespace sfcn {

enum class Category { UM, UMM, UU };

inline const char* category_prefix(Category c) {
  switch (c) {
    case Category::UM: return "um";
    case Category::UMM: return "umm";
    case Category::UU: return "uu";
  }
  return "?";
}

inline std::optional<Category> parse_category(const std::string& s) {
  if (s == "um" || s == "UM") return Category::UM;
  if (s == "umm" || s == "UMM") return Category::UMM;
  if (s == "uu" || s == "UU") return Category::UU;
  return std::nullopt;
}

// Training-frame counts of the full KITTI ROAD release.
inline constexpr int kKittiTrainFrames = 289;
inline int kitti_category_count(Category c) {
  switch (c) {
    case Category::UM: return 95;
    case Category::UMM: return 96;
    case Category::UU: return 98;
  }
  return 0;
}

struct RoadFrame {
  std::string frame_id;
  Category category = Category::UM;
  int height = 0;
  int width = 0;
  std::vector<float> rgb;  // 3 planes (r, g, b) in [0, 1]
  LidarImage lidar;
  std::vector<std::uint8_t> gt_road;
  std::vector<std::uint8_t> gt_valid;
  CalibrationSet calib;  // intrinsics match (height, width)

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }

  void validate() const {
    const std::size_t n = plane();
    if (n == 0) throw ShapeError(frame_id + ": empty frame");
    if (rgb.size() != 3 * n || gt_road.size() != n || gt_valid.size() != n ||
        lidar.height != height || lidar.width != width) {
      throw ShapeError(frame_id + ": raster shapes disagree");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (gt_road[i] && !gt_valid[i]) throw ShapeError(frame_id + ": road pixel outside valid mask");
    }
  }
};

struct GroundTruth {
  std::vector<std::uint8_t> road;
  std::vector<std::uint8_t> valid;
};

// KITTI colour code: magenta = road, red = valid non-road, black = ignore.
inline GroundTruth decode_gt_mask(const Image8& gt) {
  if (gt.channels != 3) throw ShapeError("ground-truth image must be RGB");
  GroundTruth out;
  const std::size_t n = static_cast<std::size_t>(gt.height) * gt.width;
  out.road.resize(n);
  out.valid.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool r = gt.pixels[3 * i] > 127;
    const bool b = gt.pixels[3 * i + 2] > 127;
    out.valid[i] = r;
    out.road[i] = r && b;
  }
  return out;
}

inline Image8 encode_gt_mask(const std::vector<std::uint8_t>& road,
                             const std::vector<std::uint8_t>& valid, int height, int width) {
  Image8 img(height, width, 3);
  for (std::size_t i = 0; i < road.size(); ++i) {
    if (!valid[i]) continue;
    img.pixels[3 * i] = 255;
    if (road[i]) img.pixels[3 * i + 2] = 255;
  }
  return img;
}

inline std::vector<float> rgb_planes(const Image8& img) {
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  std::vector<float> out(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) out[c * n + i] = img.pixels[3 * i + c] / 255.f;
  }
  return out;
}

inline Image8 rgb_image(const std::vector<float>& planes, int height, int width) {
  const std::size_t n = static_cast<std::size_t>(height) * width;
  Image8 img(height, width, 3);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      img.pixels[3 * i + c] = static_cast<std::uint8_t>(
          std::lround(std::clamp(planes[c * n + i], 0.f, 1.f) * 255.f));
    }
  }
  return img;
}

namespace detail {

// Bilinear resampling of an interleaved 8-bit image (pixel-centre aligned).
inline Image8 resize_bilinear(const Image8& src, int height, int width) {
  Image8 dst(height, width, src.channels);
  const double sy = double(src.height) / height, sx = double(src.width) / width;
  for (int r = 0; r < height; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, double(src.height - 1));
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int c = 0; c < width; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, double(src.width - 1));
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < src.channels; ++ch) {
        const double v = (1 - wy) * ((1 - wx) * src.at(y0, x0, ch) + wx * src.at(y0, x1, ch)) +
                         wy * ((1 - wx) * src.at(y1, x0, ch) + wx * src.at(y1, x1, ch));
        dst.at(r, c, ch) = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return dst;
}

inline Image8 resize_nearest(const Image8& src, int height, int width) {
  Image8 dst(height, width, src.channels);
  for (int r = 0; r < height; ++r) {
    const int y = std::min(src.height - 1, static_cast<int>((r + 0.5) * src.height / height));
    for (int c = 0; c < width; ++c) {
      const int x = std::min(src.width - 1, static_cast<int>((c + 0.5) * src.width / width));
      for (int ch = 0; ch < src.channels; ++ch) dst.at(r, c, ch) = src.at(y, x, ch);
    }
  }
  return dst;
}

}  // namespace detail

struct LoadOptions {
  std::optional<Category> category;   // empty = all categories
  std::optional<ImageSize> resize_to;  // empty = native resolution
  double calib_tolerance = 1e-6;
};

// Reads <root>/training/{image_2, gt_image_2, calib, velodyne}, sorted by
// frame id. Missing companions and size mismatches throw FormatError.
inline std::vector<RoadFrame> load_kitti_road(const std::filesystem::path& root,
                                              const LoadOptions& opts = {}) {
  namespace fs = std::filesystem;
  const fs::path base = root / "training";
  const fs::path image_dir = base / "image_2";
  if (!fs::is_directory(image_dir)) throw FormatError("missing directory " + image_dir.string());

  std::vector<std::pair<std::string, Category>> ids;
  for (const auto& entry : fs::directory_iterator(image_dir)) {
    if (entry.path().extension() != ".png") continue;
    const std::string id = entry.path().stem().string();
    const auto us = id.find('_');
    const auto cat = us == std::string::npos ? std::nullopt : parse_category(id.substr(0, us));
    if (!cat) throw FormatError("cannot infer category of frame " + id);
    if (opts.category && *opts.category != *cat) continue;
    ids.emplace_back(id, *cat);
  }
  std::sort(ids.begin(), ids.end());

  std::vector<RoadFrame> frames;
  frames.reserve(ids.size());
  for (const auto& [id, cat] : ids) {
    const std::string number = id.substr(id.find('_') + 1);
    const fs::path img_path = image_dir / (id + ".png");
    const fs::path gt_path = base / "gt_image_2" / (std::string(category_prefix(cat)) + "_road_" + number + ".png");
    const fs::path calib_path = base / "calib" / (id + ".txt");
    const fs::path velo_path = base / "velodyne" / (id + ".bin");
    for (const auto& p : {gt_path, calib_path, velo_path}) {
      if (!fs::exists(p)) throw FormatError("frame " + id + ": missing companion file " + p.string());
    }
    Image8 rgb = read_png(img_path.string(), 3);
    Image8 gt = read_png(gt_path.string(), 3);
    if (gt.height != rgb.height || gt.width != rgb.width) {
      throw FormatError("frame " + id + ": ground truth " + std::to_string(gt.height) + "x" +
                        std::to_string(gt.width) + " does not match image " +
                        std::to_string(rgb.height) + "x" + std::to_string(rgb.width));
    }
    CalibrationSet calib = parse_calib(calib_path.string(), {rgb.height, rgb.width}, opts.calib_tolerance);
    const PointCloud cloud = load_velodyne_bin(velo_path.string());

    if (opts.resize_to && !(*opts.resize_to == ImageSize{rgb.height, rgb.width})) {
      const auto [h, w] = *opts.resize_to;
      const double sy = double(h) / rgb.height, sx = double(w) / rgb.width;
      calib.K.row(0) *= sx;
      calib.K.row(1) *= sy;
      calib.image_size = {h, w};
      rgb = detail::resize_bilinear(rgb, h, w);
      gt = detail::resize_nearest(gt, h, w);
    }

    RoadFrame f;
    f.frame_id = id;
    f.category = cat;
    f.height = rgb.height;
    f.width = rgb.width;
    f.rgb = rgb_planes(rgb);
    f.lidar = make_lidar_image(cloud, calib);
    f.calib = calib;
    auto decoded = decode_gt_mask(gt);
    f.gt_road = std::move(decoded.road);
    f.gt_valid = std::move(decoded.valid);
    f.validate();
    frames.push_back(std::move(f));
  }
  return frames;
}

// ---------------------------------------------------------------------------

struct SplitSpec {
  std::vector<std::string> train_ids;
  std::vector<std::string> validation_ids;
  std::uint64_t seed = 0;
};

// Seeded shuffle stratified by category. Per-category training counts follow
// the global ratio, rounded by largest remainder so they sum to n_train.
inline SplitSpec make_split(const std::vector<RoadFrame>& frames, std::size_t n_train, std::uint64_t seed) {
  if (n_train > frames.size()) throw ConfigError("n_train exceeds number of frames");
  std::map<Category, std::vector<std::string>> by_cat;
  for (const auto& f : frames) by_cat[f.category].push_back(f.frame_id);

  const double ratio = frames.empty() ? 0.0 : double(n_train) / double(frames.size());
  std::vector<std::tuple<double, Category, std::size_t>> remainders;
  std::map<Category, std::size_t> quota;
  std::size_t assigned = 0;
  for (const auto& [cat, ids] : by_cat) {
    const double exact = ratio * double(ids.size());
    quota[cat] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[cat];
    remainders.emplace_back(exact - std::floor(exact), cat, ids.size());
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    return std::get<1>(a) < std::get<1>(b);
  });
  for (std::size_t i = 0; assigned < n_train && i < remainders.size(); ++i, ++assigned) {
    ++quota[std::get<1>(remainders[i])];
  }

  SplitSpec spec;
  spec.seed = seed;
  std::mt19937_64 rng(seed);
  for (auto& [cat, ids] : by_cat) {
    std::sort(ids.begin(), ids.end());
    std::shuffle(ids.begin(), ids.end(), rng);
    spec.train_ids.insert(spec.train_ids.end(), ids.begin(), ids.begin() + static_cast<long>(quota[cat]));
    spec.validation_ids.insert(spec.validation_ids.end(), ids.begin() + static_cast<long>(quota[cat]), ids.end());
  }
  std::sort(spec.train_ids.begin(), spec.train_ids.end());
  std::sort(spec.validation_ids.begin(), spec.validation_ids.end());
  return spec;
}

inline std::pair<std::vector<RoadFrame>, std::vector<RoadFrame>> split_train_val(
    const std::vector<RoadFrame>& frames, const SplitSpec& spec) {
  std::map<std::string, const RoadFrame*> by_id;
  for (const auto& f : frames) by_id[f.frame_id] = &f;
  auto pick = [&](const std::vector<std::string>& ids) {
    std::vector<RoadFrame> out;
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw ConfigError("split references unknown frame " + id);
      out.push_back(*it->second);
    }
    return out;
  };
  return {pick(spec.train_ids), pick(spec.validation_ids)};
}

// ---------------------------------------------------------------------------
// Synthetic scenes.
//
// Camera frame: x right, y down, z forward; the ground is the plane
// y = camera_height. The LiDAR sits above and behind the camera with the usual
// Velodyne axes (x forward, y left, z up).

struct SynthConfig {
  int n_frames = 2;
  ImageSize image_size{96, 312};
  std::uint64_t seed = 0;
  int elevation_beams = 64;
  int azimuth_steps = 2000;
  double camera_height = 1.65;
  double lidar_height = 1.73;
  double lidar_setback = 0.27;
  double max_range = 80.0;
  double curb_height = 0.12;

  void validate() const {
    if (n_frames < 1 || image_size.height < 1 || image_size.width < 1 || elevation_beams < 1 ||
        azimuth_steps < 1) {
      throw ConfigError("degenerate synthetic dataset config");
    }
  }
};

enum class Surface : std::uint8_t { None = 0, Ground = 1, Sidewalk = 2, Box = 3 };

struct SynthFrame {
  RoadFrame frame;
  PointCloud cloud;
  CalibrationSet calib;
  std::vector<Surface> point_surface;   // per cloud point
  std::vector<Surface> lidar_surface;   // per LiDAR-image pixel (winning point)
};

inline CalibrationSet synth_calibration(const SynthConfig& cfg) {
  const double w = cfg.image_size.width, h = cfg.image_size.height;
  const double f = 0.8 * w;
  CalibrationSet calib;
  calib.K << f, 0, w / 2, 0, f, h / 2, 0, 0, 1;
  calib.R << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  calib.t = Eigen::Vector3d(0, -(cfg.lidar_height - cfg.camera_height), -cfg.lidar_setback);
  calib.image_size = cfg.image_size;
  return calib;
}

namespace detail {

struct SynthBox {
  double x0, x1, z0, z1, height;
  std::array<float, 3> color;
};

struct SynthScene {
  double c0, c1, c2;  // road centre x(z) = c0 + c1 z + c2 z^2
  double half_width;
  double sidewalk_width;  // 0 = no sidewalk
  int lane_lines;         // 1 = dashed centre, 2 = two lane separators, 0 = none
  double brightness;
  std::array<float, 3> road_color, grass_color, walk_color;
  std::vector<SynthBox> boxes;
  std::vector<std::array<double, 3>> shadows;  // (x, z, radius) darkening patches on the ground

  double centre(double z) const { return c0 + c1 * z + c2 * z * z; }
  // Lateral offset from the road centre, signed.
  double offset(double x, double z) const { return x - centre(z); }
  bool on_road(double x, double z) const { return std::abs(offset(x, z)) < half_width; }
  bool on_sidewalk(double x, double z) const {
    const double d = std::abs(offset(x, z));
    return sidewalk_width > 0 && d >= half_width && d < half_width + sidewalk_width;
  }
};

struct Hit {
  Surface surface = Surface::None;
  double distance = 0;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  int box = -1;
};

inline Hit cast_ray(const SynthScene& scene, const SynthConfig& cfg, const Eigen::Vector3d& origin,
                    const Eigen::Vector3d& dir, double max_dist) {
  Hit best;
  best.distance = max_dist;
  for (std::size_t b = 0; b < scene.boxes.size(); ++b) {
    const auto& box = scene.boxes[b];
    const double lo[3] = {box.x0, cfg.camera_height - box.height, box.z0};
    const double hi[3] = {box.x1, cfg.camera_height, box.z1};
    double tmin = 0, tmax = best.distance;
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (std::abs(dir(a)) < 1e-12) {
        if (origin(a) < lo[a] || origin(a) > hi[a]) miss = true;
        continue;
      }
      double t0 = (lo[a] - origin(a)) / dir(a), t1 = (hi[a] - origin(a)) / dir(a);
      if (t0 > t1) std::swap(t0, t1);
      tmin = std::max(tmin, t0);
      tmax = std::min(tmax, t1);
      if (tmin > tmax) miss = true;
    }
    if (!miss && tmin > 1e-9 && tmin < best.distance) {
      best = {Surface::Box, tmin, origin + tmin * dir, static_cast<int>(b)};
    }
  }
  if (dir.y() > 1e-12) {
    if (scene.sidewalk_width > 0) {
      const double t = (cfg.camera_height - cfg.curb_height - origin.y()) / dir.y();
      if (t > 0 && t < best.distance) {
        const Eigen::Vector3d p = origin + t * dir;
        if (scene.on_sidewalk(p.x(), p.z())) return {Surface::Sidewalk, t, p, -1};
      }
    }
    const double t = (cfg.camera_height - origin.y()) / dir.y();
    if (t > 0 && t < best.distance) {
      const Eigen::Vector3d p = origin + t * dir;
      // A ground hit below a sidewalk slab is the curb face.
      return {scene.on_sidewalk(p.x(), p.z()) ? Surface::Sidewalk : Surface::Ground, t, p, -1};
    }
  }
  return best;
}

inline std::uint64_t mix_hash(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic value noise in [-1, 1] over the ground plane.
inline double ground_noise(double x, double z, double cell, std::uint64_t seed) {
  const auto ix = static_cast<std::int64_t>(std::floor(x / cell));
  const auto iz = static_cast<std::int64_t>(std::floor(z / cell));
  const std::uint64_t h = mix_hash(seed ^ mix_hash(static_cast<std::uint64_t>(ix) * 73856093ULL ^
                                                   static_cast<std::uint64_t>(iz) * 19349663ULL));
  return double(h >> 11) / double(1ULL << 53) * 2.0 - 1.0;
}

inline SynthScene random_scene(std::mt19937_64& rng, Category cat) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * U(rng); };
  SynthScene s;
  s.c0 = uni(-1.5, 1.5);
  s.c1 = uni(-0.08, 0.08);
  s.c2 = uni(-0.004, 0.004);
  s.half_width = uni(3.0, 5.0);
  s.sidewalk_width = cat == Category::UU ? 0.0 : uni(1.5, 2.5);
  s.lane_lines = cat == Category::UM ? 1 : cat == Category::UMM ? 2 : 0;
  s.brightness = uni(0.8, 1.15);
  const float g = static_cast<float>(uni(0.38, 0.5));
  s.road_color = {g, g, static_cast<float>(g + uni(0.0, 0.04))};
  s.grass_color = {static_cast<float>(uni(0.2, 0.32)), static_cast<float>(uni(0.42, 0.55)),
                   static_cast<float>(uni(0.15, 0.25))};
  const float w = static_cast<float>(uni(0.6, 0.7));
  s.walk_color = {w, static_cast<float>(w - 0.03), static_cast<float>(w - 0.07)};
  const int n_boxes = static_cast<int>(uni(1.0, 4.999));
  for (int i = 0; i < n_boxes; ++i) {
    SynthBox b;
    const double z = uni(12.0, 45.0);
    const double side = U(rng) < 0.5 ? -1.0 : 1.0;
    const bool on_road = U(rng) < 0.25;
    const double width = uni(1.6, 2.2);
    const double xc = on_road ? s.centre(z) + side * uni(0.3, 1.5)
                              : s.centre(z) + side * (s.half_width + s.sidewalk_width + uni(1.5, 6.0));
    b.x0 = xc - width / 2;
    b.x1 = xc + width / 2;
    b.z0 = z;
    b.z1 = z + uni(2.0, 4.5);
    b.height = on_road ? uni(1.3, 1.8) : uni(1.5, 6.0);
    b.color = {static_cast<float>(uni(0.1, 0.9)), static_cast<float>(uni(0.1, 0.9)),
               static_cast<float>(uni(0.1, 0.9))};
    s.boxes.push_back(b);
  }
  const int n_shadows = static_cast<int>(uni(0.0, 3.999));
  for (int i = 0; i < n_shadows; ++i) {
    const double z = uni(9.0, 30.0);
    s.shadows.push_back({s.centre(z) + uni(-5.0, 5.0), z, uni(1.0, 3.0)});
  }
  return s;
}

inline bool lane_marking(const SynthScene& s, double x, double z) {
  const double d = s.offset(x, z);
  const double line_half = 0.08;
  if (s.lane_lines == 1) {
    return std::abs(d) < line_half && std::fmod(z, 6.0) < 3.0;
  }
  if (s.lane_lines == 2) {
    const double sep = s.half_width / 3.0;
    return (std::abs(d - sep) < line_half || std::abs(d + sep) < line_half) && std::fmod(z, 8.0) < 4.0;
  }
  return false;
}

inline std::array<float, 3> shade(const SynthScene& s, const Hit& hit, std::uint64_t seed) {
  std::array<float, 3> c{};
  const double x = hit.point.x(), z = hit.point.z();
  switch (hit.surface) {
    case Surface::None: return c;
    case Surface::Box: {
      c = s.boxes[static_cast<std::size_t>(hit.box)].color;
      const float n = static_cast<float>(0.04 * ground_noise(x + hit.point.y(), z, 0.3, seed + 7));
      for (auto& v : c) v += n;
      return c;
    }
    case Surface::Sidewalk: {
      c = s.walk_color;
      const float n = static_cast<float>(0.05 * ground_noise(x, z, 0.25, seed + 3));
      for (auto& v : c) v += n;
      break;
    }
    case Surface::Ground: {
      if (s.on_road(x, z)) {
        c = lane_marking(s, x, z) ? std::array<float, 3>{0.92f, 0.92f, 0.9f} : s.road_color;
        const float n = static_cast<float>(0.05 * ground_noise(x, z, 0.15, seed + 1));
        for (auto& v : c) v += n;
      } else {
        c = s.grass_color;
        const float n = static_cast<float>(0.08 * ground_noise(x, z, 0.2, seed + 2));
        c[0] += n * 0.6f;
        c[1] += n;
        c[2] += n * 0.4f;
      }
      break;
    }
  }
  for (const auto& sh : s.shadows) {
    if (std::hypot(x - sh[0], z - sh[1]) < sh[2]) {
      for (auto& v : c) v *= 0.6f;
    }
  }
  return c;
}

}  // namespace detail

inline SynthFrame synth_frame(const SynthConfig& cfg, int index) {
  const CalibrationSet calib = synth_calibration(cfg);
  const std::uint64_t frame_seed = detail::mix_hash(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(index));
  std::mt19937_64 rng(frame_seed);
  const Category cat = static_cast<Category>(index % 3);
  const detail::SynthScene scene = detail::random_scene(rng, cat);

  const int H = cfg.image_size.height, W = cfg.image_size.width;
  const std::size_t n = static_cast<std::size_t>(H) * W;
  SynthFrame out;
  out.calib = calib;
  RoadFrame& f = out.frame;
  f.calib = calib;
  f.category = cat;
  f.height = H;
  f.width = W;
  f.rgb.assign(3 * n, 0.f);
  f.gt_road.assign(n, 0);
  f.gt_valid.assign(n, 1);

  const Eigen::Matrix3d Kinv = calib.K.inverse();
  const Eigen::Vector3d cam_origin = Eigen::Vector3d::Zero();
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const Eigen::Vector3d dir = (Kinv * Eigen::Vector3d(c + 0.5, r + 0.5, 1.0)).normalized();
      const detail::Hit hit = detail::cast_ray(scene, cfg, cam_origin, dir, 300.0);
      std::array<float, 3> color;
      if (hit.surface == Surface::None) {
        const float t = float(r) / float(H);
        color = {0.55f + 0.2f * t, 0.7f + 0.15f * t, 0.95f};
      } else {
        color = detail::shade(scene, hit, frame_seed);
      }
      const std::size_t i = static_cast<std::size_t>(r) * W + c;
      for (int ch = 0; ch < 3; ++ch) {
        // Quantized to 8 bits so an exported PNG reloads identically.
        const float v = std::clamp(color[ch] * static_cast<float>(scene.brightness), 0.f, 1.f);
        f.rgb[ch * n + i] = static_cast<float>(std::lround(v * 255.f)) / 255.f;
      }
      f.gt_road[i] = hit.surface == Surface::Ground && scene.on_road(hit.point.x(), hit.point.z());
    }
  }

  // LiDAR sweep: rays from the sensor origin, expressed in the camera frame.
  const double deg = std::numbers::pi / 180.0;
  for (int e = 0; e < cfg.elevation_beams; ++e) {
    const double el = cfg.elevation_beams == 1
                          ? 0.0
                          : (2.0 - 26.8 * e / double(cfg.elevation_beams - 1)) * deg;
    for (int a = 0; a < cfg.azimuth_steps; ++a) {
      const double az = (-180.0 + 360.0 * a / cfg.azimuth_steps) * deg;
      const Eigen::Vector3d d_velo(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      const Eigen::Vector3d d_cam = calib.R * d_velo;
      const detail::Hit hit = detail::cast_ray(scene, cfg, calib.t, d_cam, cfg.max_range);
      if (hit.surface == Surface::None) continue;
      const Eigen::Vector3d p = hit.distance * d_velo;
      float refl = 0.1f;
      if (hit.surface == Surface::Ground && scene.on_road(hit.point.x(), hit.point.z())) {
        refl = detail::lane_marking(scene, hit.point.x(), hit.point.z()) ? 0.9f : 0.3f;
      } else if (hit.surface == Surface::Box) {
        refl = 0.5f;
      }
      out.cloud.points.push_back({static_cast<float>(p.x()), static_cast<float>(p.y()),
                                  static_cast<float>(p.z()), refl});
      out.point_surface.push_back(hit.surface);
    }
  }

  f.lidar = make_lidar_image(out.cloud, calib);
  // Replays the nearest-wins rule to label each occupied pixel's surface.
  out.lidar_surface.assign(n, Surface::None);
  std::vector<double> depth(n, std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < out.cloud.size(); ++k) {
    const auto& p = out.cloud.points[k];
    if (auto pp = project_point(Eigen::Vector3d(p.x, p.y, p.z), calib)) {
      const std::size_t i = static_cast<std::size_t>(std::floor(pp->v)) * W +
                            static_cast<std::size_t>(std::floor(pp->u));
      if (pp->p_cam.z() < depth[i]) {
        depth[i] = pp->p_cam.z();
        out.lidar_surface[i] = out.point_surface[k];
      }
    }
  }
  return out;
}

inline std::string synth_frame_id(const SynthConfig& cfg, int index) {
  (void)cfg;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%06d", category_prefix(static_cast<Category>(index % 3)), index / 3);
  return buf;
}

inline std::vector<SynthFrame> synth_generate_full(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<SynthFrame> out;
  out.reserve(static_cast<std::size_t>(cfg.n_frames));
  for (int i = 0; i < cfg.n_frames; ++i) {
    out.push_back(synth_frame(cfg, i));
    out.back().frame.frame_id = synth_frame_id(cfg, i);
  }
  return out;
}

inline std::vector<RoadFrame> synth_generate(const SynthConfig& cfg) {
  std::vector<RoadFrame> frames;
  for (auto& sf : synth_generate_full(cfg)) frames.push_back(std::move(sf.frame));
  return frames;
}

// Writes frames in the KITTI ROAD training layout under `root`.
inline void export_kitti_layout(const std::filesystem::path& root, const std::vector<SynthFrame>& frames) {
  namespace fs = std::filesystem;
  const fs::path base = root / "training";
  for (const char* d : {"image_2", "gt_image_2", "calib", "velodyne"}) fs::create_directories(base / d);
  for (const auto& sf : frames) {
    const auto& f = sf.frame;
    const std::string number = f.frame_id.substr(f.frame_id.find('_') + 1);
    write_png((base / "image_2" / (f.frame_id + ".png")).string(), rgb_image(f.rgb, f.height, f.width));
    write_png((base / "gt_image_2" / (std::string(category_prefix(f.category)) + "_road_" + number + ".png")).string(),
              encode_gt_mask(f.gt_road, f.gt_valid, f.height, f.width));
    write_kitti_calib((base / "calib" / (f.frame_id + ".txt")).string(), sf.calib);
    save_velodyne_bin((base / "velodyne" / (f.frame_id + ".bin")).string(), sf.cloud);
  }
}

}  // namespace sfcn
