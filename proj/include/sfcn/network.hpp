#pragma once

// Fusion networks over an FCN-8s style encoder/decoder.
//
//   EARLY    one VGG stack over the 6-channel concatenation of RGB and LiDAR.
//   LATE     two VGG stacks; deepest features concatenated and 1x1-fused
//            ahead of the decoder head.
//   SIAMESE  five two-branch groups. Each group runs its branch convs, fuses
//            the concatenated branch features with FuseConv at the group's
//            resolution, and feeds pool(branch) + pool(fused) to the next
//            group on both branches.
//
// The decoder head sits on the deepest group's features (1/16 scale for five
// groups): 7x7 conv, 1x1 conv, 1x1 score, then two x2 transposed convs, each
// followed by adding a 1x1 score of a shallower group's features, and a final
// transposed conv back to input resolution with a centre crop.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sfcn/checkpoint.hpp"
#include "sfcn/dataset.hpp"
#include "sfcn/error.hpp"
#include "sfcn/ops.hpp"
#include "sfcn/optim.hpp"
#include "sfcn/tensor.hpp"

namespace sfcn {

enum class FusionStrategy { Early, Late, Siamese };

inline const char* strategy_name(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::Early: return "early";
    case FusionStrategy::Late: return "late";
    case FusionStrategy::Siamese: return "siamese";
  }
  return "?";
}

inline FusionStrategy parse_strategy(const std::string& s) {
  if (s == "early" || s == "EARLY") return FusionStrategy::Early;
  if (s == "late" || s == "LATE") return FusionStrategy::Late;
  if (s == "siamese" || s == "SIAMESE") return FusionStrategy::Siamese;
  throw ConfigError("unknown fusion strategy '" + s + "'");
}

inline constexpr int kMaxGroups = 5;
inline constexpr int kTableChannels[kMaxGroups] = {64, 128, 256, 512, 512};
inline constexpr int kGroupConvs[kMaxGroups] = {2, 2, 3, 3, 3};

struct NetConfig {
  FusionStrategy strategy = FusionStrategy::Siamese;
  ImageSize input_size{375, 1242};
  double width_scale = 1.0;  // divides every encoder channel count
  int head_width = 4096;
  int num_classes = 2;
  int groups = kMaxGroups;
  std::uint64_t seed = 0;
  // Input normalisation: (rgb - rgb_mean) * rgb_scale, lidar metres * lidar_scale.
  float rgb_mean = 0.5f;
  float rgb_scale = 1.0f;
  float lidar_scale = 0.01f;  // keeps camera-frame depth (up to ~80 m) below ~1

  static NetConfig paper(FusionStrategy s) {
    NetConfig c;
    c.strategy = s;
    return c;
  }
  static NetConfig tiny(FusionStrategy s) {
    NetConfig c;
    c.strategy = s;
    c.input_size = {96, 312};
    c.width_scale = 8;
    c.head_width = 256;
    return c;
  }

  // Encoder width of group g (1-based).
  int channels(int g) const {
    const double c = kTableChannels[g - 1] / width_scale;
    const int rounded = static_cast<int>(std::lround(c));
    if (rounded < 1) {
      throw ConfigError("width_scale " + std::to_string(width_scale) + " leaves group " +
                        std::to_string(g) + " without channels");
    }
    return rounded;
  }
  int convs_in_group(int g) const { return kGroupConvs[g - 1]; }
  int skip_count() const { return std::min(2, groups - 1); }
  // Upsampling factor of the final transposed conv (1 = none).
  int final_upsample() const { return 1 << (groups - 1 - skip_count()); }

  void validate() const {
    if (input_size.height < 32 || input_size.width < 32) {
      throw ConfigError("input size must be at least 32x32");
    }
    if (!(width_scale > 0)) throw ConfigError("width_scale must be positive");
    if (head_width < 1) throw ConfigError("head_width must be >= 1");
    if (num_classes != 2) throw ConfigError("num_classes must be 2");
    if (groups < 1 || groups > kMaxGroups) throw ConfigError("groups must be in 1..5");
    for (int g = 1; g <= groups; ++g) (void)channels(g);
  }
};

enum class LayerKind { Conv, Deconv };
enum class LayerInit { HeNormal, Zero, Bilinear };

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  ConvSpec conv;
  LayerInit init = LayerInit::HeNormal;
};

// Layers of the configured architecture in forward order.
inline std::vector<LayerSpec> architecture(const NetConfig& cfg) {
  cfg.validate();
  std::vector<LayerSpec> layers;
  auto conv = [&](std::string name, int k, int cin, int cout, LayerInit init = LayerInit::HeNormal) {
    layers.push_back({std::move(name), LayerKind::Conv, ConvSpec::same(k, cin, cout), init});
  };
  auto stack = [&](const std::string& prefix, int in_channels) {
    int cin = in_channels;
    for (int g = 1; g <= cfg.groups; ++g) {
      for (int i = 1; i <= cfg.convs_in_group(g); ++i) {
        conv(prefix + std::to_string(g) + "_" + std::to_string(i), 3, cin, cfg.channels(g));
        cin = cfg.channels(g);
      }
    }
  };

  const int G = cfg.groups;
  int branch_mult = 1;  // skip/score inputs are concatenated branches for LATE
  switch (cfg.strategy) {
    case FusionStrategy::Early:
      stack("Conv", 6);
      break;
    case FusionStrategy::Late:
      stack("ImgConv", 3);
      stack("LdaConv", 3);
      conv("LateFuse", 1, 2 * cfg.channels(G), cfg.channels(G));
      branch_mult = 2;
      break;
    case FusionStrategy::Siamese:
      for (int g = 1; g <= G; ++g) {
        const int c = cfg.channels(g);
        for (const char* branch : {"ImgConv", "LdaConv"}) {
          int cin = g == 1 ? 3 : cfg.channels(g - 1);
          for (int i = 1; i <= cfg.convs_in_group(g); ++i) {
            conv(std::string(branch) + std::to_string(g) + "_" + std::to_string(i), 3, cin, c);
            cin = c;
          }
        }
        conv("FuseConv" + std::to_string(g), 3, 2 * c, c);
      }
      break;
  }

  const int nc = cfg.num_classes;
  conv("HeadConv1", 7, cfg.channels(G), cfg.head_width);
  conv("HeadConv2", 1, cfg.head_width, cfg.head_width);
  conv("Score", 1, cfg.head_width, nc, LayerInit::Zero);
  for (int s = 1; s <= cfg.skip_count(); ++s) {
    conv("ScoreSkip" + std::to_string(s), 1, branch_mult * cfg.channels(G - s), nc, LayerInit::Zero);
  }
  int t = 1;
  for (; t <= cfg.skip_count(); ++t) {
    layers.push_back({"TransConv" + std::to_string(t), LayerKind::Deconv,
                      ConvSpec::upsample(4, 2, 1, nc, nc), LayerInit::Bilinear});
  }
  if (const int f = cfg.final_upsample(); f > 1) {
    layers.push_back({"TransConv" + std::to_string(t), LayerKind::Deconv,
                      ConvSpec::upsample(4 * f, f, 3 * f / 2, nc, nc), LayerInit::Bilinear});
  }
  return layers;
}

template <typename T>
class ModelParams {
 public:
  ModelParams() = default;

  ModelParams(NetConfig config, std::vector<LayerSpec> layers, std::vector<NamedTensor<T>> tensors)
      : config_(std::move(config)), layers_(std::move(layers)), tensors_(std::move(tensors)) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layer_index_[layers_[i].name] = i;
  }

  const NetConfig& config() const { return config_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::vector<NamedTensor<T>>& tensors() { return tensors_; }
  const std::vector<NamedTensor<T>>& tensors() const { return tensors_; }

  bool has_layer(const std::string& name) const { return layer_index_.count(name) != 0; }

  const LayerSpec& layer(const std::string& name) const {
    auto it = layer_index_.find(name);
    if (it == layer_index_.end()) throw ConfigError("model has no layer " + name);
    return layers_[it->second];
  }
  const Tensor<T>& weight(const std::string& name) const {
    return tensors_[2 * index_of(name)].tensor;
  }
  const Tensor<T>& bias(const std::string& name) const {
    return tensors_[2 * index_of(name) + 1].tensor;
  }

  std::vector<Tensor<T>> trainable() const {
    std::vector<Tensor<T>> out;
    for (const auto& nt : tensors_) out.push_back(nt.tensor);
    return out;
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& nt : tensors_) n += nt.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& nt : tensors_) nt.tensor.zero_grad();
  }

 private:
  std::size_t index_of(const std::string& name) const {
    auto it = layer_index_.find(name);
    if (it == layer_index_.end()) throw ConfigError("model has no layer " + name);
    return it->second;
  }

  NetConfig config_;
  std::vector<LayerSpec> layers_;
  std::vector<NamedTensor<T>> tensors_;  // weight, bias per layer
  std::map<std::string, std::size_t> layer_index_;
};

template <typename T>
ModelParams<T> build_model(const NetConfig& cfg) {
  auto layers = architecture(cfg);
  std::vector<NamedTensor<T>> tensors;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    ConvParams<T> p;
    switch (l.init) {
      case LayerInit::HeNormal:
        p = init_params<T>(l.conv, detail::mix_hash(cfg.seed * 7919ULL + i));
        break;
      case LayerInit::Zero:
        p = {Tensor<T>({l.conv.c_out, l.conv.c_in, l.conv.kh, l.conv.kw}, true),
             Tensor<T>({l.conv.c_out}, true)};
        break;
      case LayerInit::Bilinear:
        p = bilinear_upsample_params<T>(l.conv);
        break;
    }
    tensors.push_back({l.name + ".weight", std::move(p.weight)});
    tensors.push_back({l.name + ".bias", std::move(p.bias)});
  }
  return ModelParams<T>(cfg, std::move(layers), std::move(tensors));
}

// ---------------------------------------------------------------------------
// Shape trace

struct TraceRow {
  std::string layer;
  std::string kernel;  // (kh,kw,c_in,c_out); "-" for pooling/crop
  int stride = 1;
  ImageSize input;
  ImageSize output;

  bool operator==(const TraceRow&) const = default;
};

inline std::string kernel_string(const ConvSpec& s) {
  std::ostringstream os;
  os << '(' << s.kh << ',' << s.kw << ',' << s.c_in << ',' << s.c_out << ')';
  return os.str();
}

inline std::string format_size(ImageSize s) {
  return "(" + std::to_string(s.height) + "," + std::to_string(s.width) + ")";
}

// One line per layer: name kernel stride input output.
inline std::string format_manifest(const std::vector<TraceRow>& rows) {
  std::ostringstream os;
  os << "# layer kernel stride input output\n";
  for (const auto& r : rows) {
    os << r.layer << ' ' << r.kernel << ' ' << r.stride << ' ' << format_size(r.input) << ' '
       << format_size(r.output) << '\n';
  }
  return os.str();
}

using ShapeLog = std::vector<TraceRow>;

// Spatial sizes of every layer, computed without running any kernels.
// Transposed-conv rows report the size after the alignment crop.
inline std::vector<TraceRow> trace_architecture(const NetConfig& cfg) {
  const auto layers = architecture(cfg);
  std::map<std::string, const LayerSpec*> by_name;
  for (const auto& l : layers) by_name[l.name] = &l;
  std::vector<TraceRow> rows;
  auto emit = [&](const std::string& name, ImageSize in, ImageSize out) {
    const auto& l = *by_name.at(name);
    rows.push_back({name, kernel_string(l.conv), l.conv.sh, in, out});
  };
  auto conv_size = [&](const std::string& name, ImageSize in) {
    const auto& s = by_name.at(name)->conv;
    return ImageSize{static_cast<int>(conv_out_size(in.height, s.kh, s.sh, s.ph)),
                     static_cast<int>(conv_out_size(in.width, s.kw, s.sw, s.pw))};
  };
  auto pool = [](ImageSize s) {
    return ImageSize{static_cast<int>(pool_out_size_ceil(s.height, 2, 2)),
                     static_cast<int>(pool_out_size_ceil(s.width, 2, 2))};
  };

  std::vector<ImageSize> group_size;
  ImageSize size = cfg.input_size;
  for (int g = 1; g <= cfg.groups; ++g) {
    group_size.push_back(size);
    auto run_stack = [&](const std::string& prefix) {
      ImageSize s = size;
      for (int i = 1; i <= cfg.convs_in_group(g); ++i) {
        const std::string name = prefix + std::to_string(g) + "_" + std::to_string(i);
        const ImageSize o = conv_size(name, s);
        emit(name, s, o);
        s = o;
      }
      return s;
    };
    switch (cfg.strategy) {
      case FusionStrategy::Early:
        run_stack("Conv");
        break;
      case FusionStrategy::Late:
        run_stack("ImgConv");
        run_stack("LdaConv");
        break;
      case FusionStrategy::Siamese: {
        const ImageSize s = run_stack("ImgConv");
        run_stack("LdaConv");
        emit("FuseConv" + std::to_string(g), s, conv_size("FuseConv" + std::to_string(g), s));
        break;
      }
    }
    if (g < cfg.groups) size = pool(size);
  }
  if (cfg.strategy == FusionStrategy::Late) emit("LateFuse", size, size);
  for (const char* h : {"HeadConv1", "HeadConv2", "Score"}) emit(h, size, conv_size(h, size));
  // Upsamples `in` with layer `name` and crops to `target`.
  auto upsample = [&](const std::string& name, ImageSize in, ImageSize target) {
    const auto& s = by_name.at(name)->conv;
    const auto h = conv_transpose_out_size(in.height, s.kh, s.sh, s.ph);
    const auto w = conv_transpose_out_size(in.width, s.kw, s.sw, s.pw);
    if (h < target.height || w < target.width) {
      throw ShapeError(name + " output (" + std::to_string(h) + "," + std::to_string(w) +
                       ") is smaller than its crop target " + format_size(target));
    }
    emit(name, in, target);
  };
  int t = 1;
  for (; t <= cfg.skip_count(); ++t) {
    const ImageSize skip = group_size[static_cast<std::size_t>(cfg.groups - 1 - t)];
    upsample("TransConv" + std::to_string(t), size, skip);
    emit("ScoreSkip" + std::to_string(t), skip, skip);
    size = skip;
  }
  if (cfg.final_upsample() > 1) upsample("TransConv" + std::to_string(t), size, cfg.input_size);
  return rows;
}

// ---------------------------------------------------------------------------
// Forward passes

namespace detail {

template <typename T>
Tensor<T> apply_layer(const ModelParams<T>& m, const std::string& name, const Tensor<T>& x,
                      ShapeLog* log, std::optional<ImageSize> logged_out = std::nullopt) {
  const auto& l = m.layer(name);
  Tensor<T> y = l.kind == LayerKind::Conv ? conv2d(x, m.weight(name), m.bias(name), l.conv)
                                          : conv_transpose2d(x, m.weight(name), m.bias(name), l.conv);
  if (log) {
    const ImageSize in{static_cast<int>(x.dim(2)), static_cast<int>(x.dim(3))};
    const ImageSize out = logged_out.value_or(ImageSize{static_cast<int>(y.dim(2)), static_cast<int>(y.dim(3))});
    log->push_back({name, kernel_string(l.conv), l.conv.sh, in, out});
  }
  return y;
}

template <typename T>
Tensor<T> conv_relu(const ModelParams<T>& m, const std::string& name, const Tensor<T>& x, ShapeLog* log) {
  return relu(apply_layer(m, name, x, log));
}

template <typename T>
Tensor<T> branch_convs(const ModelParams<T>& m, const std::string& prefix, int g, Tensor<T> x, ShapeLog* log) {
  for (int i = 1; i <= m.config().convs_in_group(g); ++i) {
    x = conv_relu(m, prefix + std::to_string(g) + "_" + std::to_string(i), x, log);
  }
  return x;
}

}  // namespace detail

template <typename T>
struct SiamOutputs {
  Tensor<T> img_out;    // pool(img features) + pool(fused); undefined when not pooled
  Tensor<T> lidar_out;  // pool(lidar features) + pool(fused); undefined when not pooled
  Tensor<T> fused;      // relu(FuseConv(concat(img features, lidar features))) at group resolution
};

// One Siamese group (1-based). The last group's pooled outputs have no
// consumer, so callers may skip them with pool_outputs = false.
template <typename T>
SiamOutputs<T> siam_group_forward(const ModelParams<T>& m, int group, const Tensor<T>& img_in,
                                  const Tensor<T>& lidar_in, bool pool_outputs = true,
                                  ShapeLog* log = nullptr) {
  if (img_in.shape() != lidar_in.shape()) {
    throw ShapeError("Siamese group " + std::to_string(group) + " branch inputs differ: " +
                     to_string(img_in.shape()) + " vs " + to_string(lidar_in.shape()));
  }
  const Tensor<T> img_feat = detail::branch_convs(m, "ImgConv", group, img_in, log);
  const Tensor<T> lda_feat = detail::branch_convs(m, "LdaConv", group, lidar_in, log);
  SiamOutputs<T> out;
  out.fused = detail::conv_relu(m, "FuseConv" + std::to_string(group), concat_channels(img_feat, lda_feat), log);
  if (pool_outputs) {
    const Tensor<T> pooled_fused = maxpool2d_ceil(out.fused);
    out.img_out = add(maxpool2d_ceil(img_feat), pooled_fused);
    out.lidar_out = add(maxpool2d_ceil(lda_feat), pooled_fused);
  }
  return out;
}

// `skips` are ordered coarse to fine and must have already the channel count
// expected by ScoreSkip1, ScoreSkip2, ...
template <typename T>
Tensor<T> fcn8s_head_forward(const ModelParams<T>& m, const Tensor<T>& head_in,
                             const std::vector<Tensor<T>>& skips, ImageSize target,
                             ShapeLog* log = nullptr) {
  const auto& cfg = m.config();
  if (static_cast<int>(skips.size()) != cfg.skip_count()) {
    throw ShapeError("decoder expects " + std::to_string(cfg.skip_count()) + " skip inputs");
  }
  Tensor<T> x = detail::conv_relu(m, "HeadConv1", head_in, log);
  x = detail::conv_relu(m, "HeadConv2", x, log);
  Tensor<T> score = detail::apply_layer(m, "Score", x, log);
  int t = 1;
  for (; t <= cfg.skip_count(); ++t) {
    const Tensor<T>& skip = skips[static_cast<std::size_t>(t - 1)];
    const ImageSize skip_size{static_cast<int>(skip.dim(2)), static_cast<int>(skip.dim(3))};
    score = detail::apply_layer(m, "TransConv" + std::to_string(t), score, log, skip_size);
    if (score.dim(2) < skip.dim(2) || score.dim(3) < skip.dim(3)) {
      throw ShapeError("upsampled scores " + to_string(score.shape()) + " smaller than skip " +
                       to_string(skip.shape()));
    }
    score = center_crop(score, skip.dim(2), skip.dim(3));
    score = add(score, detail::apply_layer(m, "ScoreSkip" + std::to_string(t), skip, log));
  }
  if (cfg.final_upsample() > 1) {
    score = detail::apply_layer(m, "TransConv" + std::to_string(t), score, log, target);
  }
  if (score.dim(2) < target.height || score.dim(3) < target.width) {
    throw ShapeError("decoder output " + to_string(score.shape()) + " smaller than target " +
                     format_size(target));
  }
  return center_crop(score, target.height, target.width);
}

// rgb and lidar are (N, 3, H, W), already normalised (see make_inputs).
// Returns logits (N, 2, H, W).
template <typename T>
Tensor<T> model_forward(const ModelParams<T>& m, const Tensor<T>& rgb, const Tensor<T>& lidar,
                        ShapeLog* log = nullptr) {
  const auto& cfg = m.config();
  detail::require_rank4(rgb, "model_forward");
  if (rgb.shape() != lidar.shape() || rgb.dim(1) != 3) {
    throw ShapeError("model_forward expects matching (N,3,H,W) inputs, got " + to_string(rgb.shape()) +
                     " and " + to_string(lidar.shape()));
  }
  if (rgb.dim(2) < 32 || rgb.dim(3) < 32) {
    throw ShapeError("input " + to_string(rgb.shape()) + " below the 32x32 minimum");
  }
  const ImageSize target{static_cast<int>(rgb.dim(2)), static_cast<int>(rgb.dim(3))};
  const int G = cfg.groups;
  std::vector<Tensor<T>> taps;  // per-group features feeding the decoder

  switch (cfg.strategy) {
    case FusionStrategy::Siamese: {
      Tensor<T> img = rgb, lda = lidar;
      for (int g = 1; g <= G; ++g) {
        auto out = siam_group_forward(m, g, img, lda, g < G, log);
        taps.push_back(out.fused);
        img = out.img_out;
        lda = out.lidar_out;
      }
      break;
    }
    case FusionStrategy::Early: {
      Tensor<T> x = concat_channels(rgb, lidar);
      for (int g = 1; g <= G; ++g) {
        x = detail::branch_convs(m, "Conv", g, x, log);
        taps.push_back(x);
        if (g < G) x = maxpool2d_ceil(x);
      }
      break;
    }
    case FusionStrategy::Late: {
      Tensor<T> img = rgb, lda = lidar;
      for (int g = 1; g <= G; ++g) {
        img = detail::branch_convs(m, "ImgConv", g, img, log);
        lda = detail::branch_convs(m, "LdaConv", g, lda, log);
        taps.push_back(concat_channels(img, lda));
        if (g < G) {
          img = maxpool2d_ceil(img);
          lda = maxpool2d_ceil(lda);
        }
      }
      taps.back() = detail::conv_relu(m, "LateFuse", taps.back(), log);
      break;
    }
  }

  std::vector<Tensor<T>> skips;
  for (int s = 1; s <= cfg.skip_count(); ++s) skips.push_back(taps[static_cast<std::size_t>(G - 1 - s)]);
  return fcn8s_head_forward(m, taps.back(), skips, target, log);
}

// Network inputs for one frame: normalised RGB and LiDAR tensors (1,3,H,W).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_inputs(const RoadFrame& f, const NetConfig& cfg) {
  const auto h = static_cast<std::int64_t>(f.height), w = static_cast<std::int64_t>(f.width);
  std::vector<T> rgb(f.rgb.size()), lda(f.lidar.xyz.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<T>((f.rgb[i] - cfg.rgb_mean) * cfg.rgb_scale);
  for (std::size_t i = 0; i < lda.size(); ++i) lda[i] = static_cast<T>(f.lidar.xyz[i] * cfg.lidar_scale);
  return {Tensor<T>({1, 3, h, w}, std::move(rgb)), Tensor<T>({1, 3, h, w}, std::move(lda))};
}

// Road probability map (H*W) for one frame, without recording a graph.
template <typename T>
std::vector<float> predict_road_probability(const ModelParams<T>& m, const RoadFrame& f) {
  NoGradGuard guard;
  auto [rgb, lda] = make_inputs<T>(f, m.config());
  return class_probability(model_forward(m, rgb, lda), 1);
}

}  // namespace sfcn
