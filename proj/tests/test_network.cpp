#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "checks.hpp"

using namespace sfcn;
using oracle::random_tensor;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// Narrow enough to run forward passes at full KITTI resolution.
NetConfig sliver(FusionStrategy s, ImageSize size = {375, 1242}) {
  NetConfig c = NetConfig::paper(s);
  c.input_size = size;
  c.width_scale = 64;
  c.head_width = 4;
  return c;
}

}  // namespace

TEST(Architecture, PaperTraceMatchesGoldenTable1) {
  const auto golden = read_file(std::string(SFCN_SOURCE_DIR) + "/tests/golden/table1_siamese.txt");
  EXPECT_EQ(format_manifest(trace_architecture(NetConfig::paper(FusionStrategy::Siamese))), golden);
}

TEST(Architecture, EncoderAndDecoderSizeChain) {
  const auto rows = trace_architecture(NetConfig::paper(FusionStrategy::Siamese));
  std::map<std::string, TraceRow> by;
  for (const auto& r : rows) by[r.layer] = r;
  EXPECT_EQ(by["FuseConv1"].output, (ImageSize{375, 1242}));
  EXPECT_EQ(by["FuseConv2"].output, (ImageSize{188, 621}));
  EXPECT_EQ(by["FuseConv3"].output, (ImageSize{94, 311}));
  EXPECT_EQ(by["FuseConv4"].output, (ImageSize{47, 156}));
  EXPECT_EQ(by["FuseConv5"].output, (ImageSize{24, 78}));
  EXPECT_EQ(by["TransConv1"].output, (ImageSize{47, 156}));
  EXPECT_EQ(by["TransConv2"].output, (ImageSize{94, 311}));
  EXPECT_EQ(by["TransConv3"].output, (ImageSize{375, 1242}));
  EXPECT_EQ(by["FuseConv4"].kernel, "(3,3,1024,512)");
}

TEST(Architecture, WidthScaleChangesNoSpatialSize) {
  for (auto s : {FusionStrategy::Early, FusionStrategy::Late, FusionStrategy::Siamese}) {
    auto a = NetConfig::paper(s), b = a;
    b.width_scale = 2;
    const auto ra = trace_architecture(a), rb = trace_architecture(b);
    ASSERT_EQ(ra.size(), rb.size());
    for (std::size_t i = 0; i < ra.size(); ++i) {
      EXPECT_EQ(ra[i].input, rb[i].input) << ra[i].layer;
      EXPECT_EQ(ra[i].output, rb[i].output) << ra[i].layer;
    }
    EXPECT_EQ(ra.back().output, (ImageSize{375, 1242})) << strategy_name(s);
  }
}

TEST(Architecture, ParameterCountsFollowKernels) {
  for (auto s : {FusionStrategy::Early, FusionStrategy::Late, FusionStrategy::Siamese}) {
    const auto cfg = NetConfig::tiny(s);
    const auto m = build_model<float>(cfg);
    std::int64_t expected = 0;
    for (const auto& l : m.layers()) {
      const auto& c = l.conv;
      const std::int64_t per_layer = std::int64_t{c.kh} * c.kw * c.c_in * c.c_out + c.c_out;
      EXPECT_EQ(m.weight(l.name).numel() + m.bias(l.name).numel(), per_layer) << l.name;
      expected += per_layer;
    }
    EXPECT_EQ(m.parameter_count(), expected);
  }
  // Paper-width Siamese conv weights follow Table 1 exactly.
  const auto layers = architecture(NetConfig::paper(FusionStrategy::Siamese));
  std::map<std::string, std::string> k;
  for (const auto& l : layers) k[l.name] = kernel_string(l.conv);
  EXPECT_EQ(k["ImgConv1_1"], "(3,3,3,64)");
  EXPECT_EQ(k["LdaConv3_3"], "(3,3,256,256)");
  EXPECT_EQ(k["FuseConv1"], "(3,3,128,64)");
  EXPECT_EQ(k["FuseConv4"], "(3,3,1024,512)");
  EXPECT_EQ(k["FuseConv5"], "(3,3,1024,512)");
  EXPECT_EQ(k["HeadConv1"], "(7,7,512,4096)");
}

TEST(Architecture, StrategiesDiffer) {
  const auto early = architecture(NetConfig::paper(FusionStrategy::Early));
  EXPECT_EQ(early.front().name, "Conv1_1");
  EXPECT_EQ(early.front().conv.c_in, 6);
  const auto late = build_model<float>(NetConfig::tiny(FusionStrategy::Late));
  EXPECT_TRUE(late.has_layer("LateFuse"));
  EXPECT_FALSE(late.has_layer("FuseConv1"));
  EXPECT_EQ(late.layer("LateFuse").conv.c_in, 2 * late.config().channels(5));
}

TEST(Architecture, TinyWidthScaleDividesTableChannels) {
  const auto cfg = NetConfig::tiny(FusionStrategy::Siamese);
  EXPECT_EQ(cfg.channels(1), 8);
  EXPECT_EQ(cfg.channels(2), 16);
  EXPECT_EQ(cfg.channels(3), 32);
  EXPECT_EQ(cfg.channels(4), 64);
  EXPECT_EQ(cfg.channels(5), 64);
  EXPECT_EQ(cfg.head_width, 256);
  NetConfig bad = cfg;
  bad.width_scale = 1000;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.input_size = {31, 312};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Forward, FullResolutionOutputForAllStrategies) {
  for (auto s : {FusionStrategy::Early, FusionStrategy::Late, FusionStrategy::Siamese}) {
    const auto cfg = sliver(s);
    const auto m = build_model<float>(cfg);
    NoGradGuard g;
    ShapeLog log;
    auto y = model_forward(m, random_tensor<float>({1, 3, 375, 1242}, 1), random_tensor<float>({1, 3, 375, 1242}, 2), &log);
    EXPECT_EQ(y.shape(), (Shape{1, 2, 375, 1242})) << strategy_name(s);
    EXPECT_EQ(log, trace_architecture(cfg)) << strategy_name(s);
  }
}

TEST(Forward, TinyOutputAndTraceAgree) {
  for (auto s : {FusionStrategy::Early, FusionStrategy::Late, FusionStrategy::Siamese}) {
    const auto cfg = NetConfig::tiny(s);
    const auto m = build_model<float>(cfg);
    NoGradGuard g;
    ShapeLog log;
    auto y = model_forward(m, random_tensor<float>({1, 3, 96, 312}, 1), random_tensor<float>({1, 3, 96, 312}, 2), &log);
    EXPECT_EQ(y.shape(), (Shape{1, 2, 96, 312}));
    EXPECT_EQ(log, trace_architecture(cfg));
  }
}

TEST(Forward, ZeroScoresGiveZeroLogits) {
  // Score layers start at zero and the deconvs have zero bias.
  const auto m = build_model<float>(NetConfig::tiny(FusionStrategy::Siamese));
  NoGradGuard g;
  auto y = model_forward(m, random_tensor<float>({1, 3, 96, 312}, 1), random_tensor<float>({1, 3, 96, 312}, 2));
  for (float v : y.data()) ASSERT_EQ(v, 0.0f);
}

TEST(Forward, InputValidation) {
  const auto m = build_model<float>(NetConfig::tiny(FusionStrategy::Siamese));
  EXPECT_THROW(model_forward(m, random_tensor<float>({1, 3, 20, 40}, 1), random_tensor<float>({1, 3, 20, 40}, 2)),
               ShapeError);
  EXPECT_THROW(model_forward(m, random_tensor<float>({1, 3, 96, 312}, 1), random_tensor<float>({1, 3, 96, 310}, 2)),
               ShapeError);
}

TEST(Forward, BitwiseDeterministic) {
  auto cfg = NetConfig::tiny(FusionStrategy::Siamese);
  auto a = build_model<float>(cfg), b = build_model<float>(cfg);
  checks::randomize_parameters(a, 5, 0.1);
  checks::randomize_parameters(b, 5, 0.1);
  auto x = random_tensor<float>({1, 3, 96, 312}, 1), l = random_tensor<float>({1, 3, 96, 312}, 2);
  NoGradGuard g;
  auto y1 = model_forward(a, x, l), y2 = model_forward(a, x, l), y3 = model_forward(b, x, l);
  EXPECT_TRUE(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
  EXPECT_TRUE(std::equal(y1.data().begin(), y1.data().end(), y3.data().begin()));
}

TEST(Forward, ZeroLidarStaysFinite) {
  auto m = build_model<float>(NetConfig::tiny(FusionStrategy::Siamese));
  checks::randomize_parameters(m, 8, 0.1);
  NoGradGuard g;
  auto y = model_forward(m, random_tensor<float>({1, 3, 96, 312}, 1), Tensor<float>({1, 3, 96, 312}));
  for (float v : y.data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(SiameseGroup, ZeroFuseConvGivesPooledBranch) {
  auto m = build_model<double>(checks::tiny_two_group_config());
  checks::randomize_parameters(m, 2);
  for (auto& nt : m.tensors())
    if (nt.name.rfind("FuseConv1.", 0) == 0) std::fill(nt.tensor.data().begin(), nt.tensor.data().end(), 0.0);
  auto img = random_tensor<double>({1, 3, 9, 7}, 1), lda = random_tensor<double>({1, 3, 9, 7}, 2);
  NoGradGuard g;
  auto out = siam_group_forward(m, 1, img, lda);
  EXPECT_EQ(out.img_out.shape(), (Shape{1, 2, 5, 4}));
  // Rebuild the image branch by hand: two conv+relu, then pool.
  Tensor<double> x = img;
  for (const char* n : {"ImgConv1_1", "ImgConv1_2"}) x = relu(conv2d(x, m.weight(n), m.bias(n), m.layer(n).conv));
  auto pooled = maxpool2d_ceil(x);
  for (std::size_t i = 0; i < pooled.data().size(); ++i) ASSERT_EQ(out.img_out.data()[i], pooled.data()[i]);
  for (double v : out.fused.data()) ASSERT_EQ(v, 0.0);
  EXPECT_THROW(siam_group_forward(m, 1, img, random_tensor<double>({1, 3, 9, 8}, 2)), ShapeError);
}

TEST(SiameseGroup, ImageOutputLossReachesLidarBranch) {
  auto m = build_model<double>(checks::tiny_two_group_config());
  checks::randomize_parameters(m, 4);
  auto img = random_tensor<double>({1, 3, 8, 8}, 1), lda = random_tensor<double>({1, 3, 8, 8}, 2);
  auto loss = [&] { return oracle::weighted_sum(siam_group_forward(m, 1, img, lda).img_out, 3); };
  std::vector<Tensor<double>> lidar_params;
  for (const auto& nt : m.tensors())
    if (nt.name.rfind("LdaConv1_", 0) == 0) lidar_params.push_back(nt.tensor);
  auto r = oracle::grad_check(loss, lidar_params);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
  double norm = 0;
  for (auto& p : lidar_params)
    for (double v : p.grad()) norm += std::abs(v);
  EXPECT_GT(norm, 0.0);
}

TEST(Gradients, TwoGroupSiameseEndToEnd) {
  auto r = checks::tiny_model_grad_check();
  EXPECT_GT(r.checked, 100u);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Init, ZeroScoresAndBilinearDeconvs) {
  const auto m = build_model<float>(NetConfig::tiny(FusionStrategy::Siamese));
  for (const char* n : {"Score", "ScoreSkip1", "ScoreSkip2"})
    for (float v : m.weight(n).data()) ASSERT_EQ(v, 0.0f);
  // A bilinear x2 kernel maps a constant map to the same constant away from borders.
  const auto& w = m.weight("TransConv1");
  auto x = Tensor<float>({1, 2, 6, 6}, std::vector<float>(72, 1.0f));
  NoGradGuard g;
  auto y = conv_transpose2d(x, w, m.bias("TransConv1"), m.layer("TransConv1").conv);
  EXPECT_FLOAT_EQ(y.data()[static_cast<std::size_t>(5 * 12 + 5)], 1.0f);
  const auto a = build_model<float>(NetConfig::tiny(FusionStrategy::Siamese));
  auto cfg = NetConfig::tiny(FusionStrategy::Siamese);
  cfg.seed = 1;
  const auto b = build_model<float>(cfg);
  EXPECT_TRUE(std::equal(a.weight("ImgConv1_1").data().begin(), a.weight("ImgConv1_1").data().end(),
                         m.weight("ImgConv1_1").data().begin()));
  EXPECT_FALSE(std::equal(a.weight("ImgConv1_1").data().begin(), a.weight("ImgConv1_1").data().end(),
                          b.weight("ImgConv1_1").data().begin()));
}

TEST(Checkpoint, ModelRoundTrip) {
  auto m = build_model<float>(NetConfig::tiny(FusionStrategy::Late));
  checks::randomize_parameters(m, 6, 0.2);
  const auto path = (std::filesystem::temp_directory_path() / "sfcn_model_rt.sfcn").string();
  save_checkpoint(path, m.tensors());
  auto fresh = build_model<float>(NetConfig::tiny(FusionStrategy::Late));
  load_checkpoint_into(path, fresh.tensors());
  for (std::size_t i = 0; i < m.tensors().size(); ++i) {
    const auto& a = m.tensors()[i].tensor;
    const auto& b = fresh.tensors()[i].tensor;
    ASSERT_EQ(std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()), 0) << m.tensors()[i].name;
  }
}
