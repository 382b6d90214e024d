#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "oracles.hpp"

using namespace sfcn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("sfcn_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<RoadFrame> fake_frames(int um, int umm, int uu) {
  std::vector<RoadFrame> out;
  auto add = [&](Category c, int n) {
    for (int i = 0; i < n; ++i) {
      RoadFrame f;
      f.category = c;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s_%06d", category_prefix(c), i);
      f.frame_id = buf;
      out.push_back(f);
    }
  };
  add(Category::UM, um);
  add(Category::UMM, umm);
  add(Category::UU, uu);
  return out;
}

}  // namespace

TEST(GroundTruth, DecodeRule) {
  Image8 gt(1, 4, 3);
  const std::uint8_t px[4][3] = {{255, 0, 255}, {255, 0, 0}, {0, 0, 0}, {128, 10, 128}};
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 3; ++c) gt.at(0, i, c) = px[i][c];
  auto d = decode_gt_mask(gt);
  EXPECT_EQ(d.road, (std::vector<std::uint8_t>{1, 0, 0, 1}));
  EXPECT_EQ(d.valid, (std::vector<std::uint8_t>{1, 1, 0, 1}));
  auto back = decode_gt_mask(encode_gt_mask(d.road, d.valid, 1, 4));
  EXPECT_EQ(back.road, d.road);
  EXPECT_EQ(back.valid, d.valid);
}

TEST(Synth, InvariantsAndDeterminism) {
  SynthConfig cfg;
  cfg.n_frames = 3;
  cfg.seed = 5;
  auto a = synth_generate(cfg), b = synth_generate(cfg);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& f = a[i];
    EXPECT_NO_THROW(f.validate());
    EXPECT_EQ(f.height, 96);
    EXPECT_EQ(f.width, 312);
    EXPECT_GT(std::count(f.gt_road.begin(), f.gt_road.end(), 1), 0);
    EXPECT_LT(f.lidar.occupancy(), 0.5);
    EXPECT_GT(f.lidar.occupancy(), 0.0);
    EXPECT_EQ(f.rgb, b[i].rgb);
    EXPECT_EQ(f.lidar, b[i].lidar);
    EXPECT_EQ(f.gt_road, b[i].gt_road);
    EXPECT_EQ(f.frame_id, b[i].frame_id);
  }
  EXPECT_EQ(a[0].category, Category::UM);
  EXPECT_EQ(a[1].category, Category::UMM);
  EXPECT_EQ(a[2].category, Category::UU);
  cfg.seed = 6;
  EXPECT_NE(synth_generate(cfg)[0].rgb, a[0].rgb);
}

TEST(Synth, GroundPointsSatisfyPlaneEquation) {
  SynthConfig cfg;
  cfg.n_frames = 3;
  std::size_t ground = 0, walk = 0;
  for (const auto& sf : synth_generate_full(cfg)) {
    const auto& img = sf.frame.lidar;
    for (std::size_t i = 0; i < img.plane(); ++i) {
      const double y = img.xyz[img.plane() + i];
      if (sf.lidar_surface[i] == Surface::Ground) {
        ++ground;
        ASSERT_NEAR(y, cfg.camera_height, 1e-4);
      } else if (sf.lidar_surface[i] == Surface::Sidewalk && std::abs(y - cfg.camera_height) > 1e-3) {
        ++walk;  // slab top (curb faces sit between the two planes)
        ASSERT_LE(y, cfg.camera_height);
        ASSERT_GE(y, cfg.camera_height - cfg.curb_height - 1e-4);
      }
      ASSERT_EQ(img.mask[i] == 1, sf.lidar_surface[i] != Surface::None);
    }
  }
  EXPECT_GT(ground, 1000u);
  EXPECT_GT(walk, 10u);
}

TEST(Synth, DegenerateConfigRejected) {
  SynthConfig cfg;
  cfg.image_size = {0, 10};
  EXPECT_THROW(synth_generate(cfg), ConfigError);
  cfg = {};
  cfg.n_frames = 0;
  EXPECT_THROW(synth_generate(cfg), ConfigError);
}

TEST(Split, PaperSizesAndStratification) {
  auto frames = fake_frames(95, 96, 98);
  ASSERT_EQ(static_cast<int>(frames.size()), kKittiTrainFrames);
  auto spec = make_split(frames, 240, 7);
  EXPECT_EQ(spec.train_ids.size(), 240u);
  EXPECT_EQ(spec.validation_ids.size(), 49u);
  std::set<std::string> all(spec.train_ids.begin(), spec.train_ids.end());
  for (const auto& id : spec.validation_ids) EXPECT_TRUE(all.insert(id).second) << "overlap " << id;
  EXPECT_EQ(all.size(), frames.size());
  // Per-category training count within one frame of the global ratio.
  std::map<std::string, int> per_cat;
  for (const auto& id : spec.train_ids) per_cat[id.substr(0, id.find('_'))]++;
  const double ratio = 240.0 / 289.0;
  EXPECT_LE(std::abs(per_cat["um"] - ratio * 95), 1.0);
  EXPECT_LE(std::abs(per_cat["umm"] - ratio * 96), 1.0);
  EXPECT_LE(std::abs(per_cat["uu"] - ratio * 98), 1.0);
  auto again = make_split(frames, 240, 7);
  EXPECT_EQ(again.train_ids, spec.train_ids);
  EXPECT_NE(make_split(frames, 240, 8).train_ids, spec.train_ids);
  auto [tr, va] = split_train_val(frames, spec);
  EXPECT_EQ(tr.size(), 240u);
  EXPECT_EQ(va.size(), 49u);
  EXPECT_THROW(make_split(frames, 300, 1), ConfigError);
}

TEST(Loader, SyntheticExportRoundTrip) {
  const auto root = temp_dir("kitti_rt");
  SynthConfig cfg;
  cfg.n_frames = 3;
  auto frames = synth_generate_full(cfg);
  export_kitti_layout(root, frames);
  auto loaded = load_kitti_road(root);
  ASSERT_EQ(loaded.size(), 3u);
  // Sorted by id: um_000000, umm_000000, uu_000000.
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    const auto& a = loaded[i];
    const auto& b = frames[i].frame;
    EXPECT_EQ(a.frame_id, b.frame_id);
    EXPECT_EQ(a.category, b.category);
    EXPECT_EQ(a.rgb, b.rgb);
    EXPECT_EQ(a.gt_road, b.gt_road);
    EXPECT_EQ(a.gt_valid, b.gt_valid);
    EXPECT_EQ(a.lidar, b.lidar);
  }
  LoadOptions um;
  um.category = Category::UM;
  auto only = load_kitti_road(root, um);
  ASSERT_EQ(only.size(), 1u);
  EXPECT_EQ(only[0].frame_id, "um_000000");
}

TEST(Loader, SingleFrameFixtureAndResize) {
  const auto root = temp_dir("kitti_one");
  SynthConfig cfg;
  cfg.n_frames = 1;
  cfg.image_size = {120, 390};
  export_kitti_layout(root, synth_generate_full(cfg));
  auto frames = load_kitti_road(root);
  ASSERT_EQ(frames.size(), 1u);
  EXPECT_NO_THROW(frames[0].validate());
  LoadOptions opts;
  opts.resize_to = ImageSize{96, 312};
  auto small = load_kitti_road(root, opts);
  EXPECT_EQ(small[0].height, 96);
  EXPECT_EQ(small[0].width, 312);
  EXPECT_NO_THROW(small[0].validate());
  EXPECT_GT(small[0].lidar.occupied(), 0u);
}

TEST(Loader, RejectsMalformedFiles) {
  SynthConfig cfg;
  cfg.n_frames = 1;
  const auto frames = synth_generate_full(cfg);
  auto fresh = [&](const std::string& name) {
    auto root = temp_dir(name);
    export_kitti_layout(root, frames);
    return root;
  };
  auto expect_error = [](const fs::path& root, const std::string& needle) {
    try {
      load_kitti_road(root);
      ADD_FAILURE() << "expected a FormatError mentioning " << needle;
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  {
    auto root = fresh("bad_velo");
    fs::resize_file(root / "training/velodyne/um_000000.bin", 100);
    expect_error(root, "multiple of 16");
  }
  {
    auto root = fresh("bad_calib");
    std::ofstream(root / "training/calib/um_000000.txt") << "P2: 1 0 0 0 0 1 0 0 0 0 1 0\n";
    expect_error(root, "R0_rect");
  }
  {
    auto root = fresh("missing_gt");
    fs::remove(root / "training/gt_image_2/um_road_000000.png");
    expect_error(root, "missing companion");
  }
  {
    auto root = fresh("size_mismatch");
    write_png((root / "training/gt_image_2/um_road_000000.png").string(), Image8(10, 10, 3));
    expect_error(root, "does not match");
  }
  EXPECT_THROW(load_kitti_road(temp_dir("empty_root")), FormatError);
}

TEST(Loader, FullKittiCountsWhenAvailable) {
  const char* root = std::getenv("SFCN_KITTI_ROOT");
  if (!root) GTEST_SKIP() << "set SFCN_KITTI_ROOT to a KITTI ROAD directory to run";
  auto all = load_kitti_road(root);
  EXPECT_EQ(static_cast<int>(all.size()), kKittiTrainFrames);
  for (auto c : {Category::UM, Category::UMM, Category::UU}) {
    LoadOptions o;
    o.category = c;
    EXPECT_EQ(static_cast<int>(load_kitti_road(root, o).size()), kitti_category_count(c));
  }
}
