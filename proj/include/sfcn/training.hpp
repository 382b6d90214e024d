#pragma once

// Batch-size-one SGD training with a step-halving learning rate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sfcn/checkpoint.hpp"
#include "sfcn/dataset.hpp"
#include "sfcn/error.hpp"
#include "sfcn/network.hpp"
#include "sfcn/ops.hpp"
#include "sfcn/optim.hpp"

namespace sfcn {

enum class Preset { Paper, Tiny };

inline const char* preset_name(Preset p) { return p == Preset::Paper ? "paper" : "tiny"; }

inline Preset parse_preset(const std::string& s) {
  if (s == "paper") return Preset::Paper;
  if (s == "tiny") return Preset::Tiny;
  throw ConfigError("unknown preset '" + s + "'");
}

inline NetConfig net_config_for(Preset p, FusionStrategy s) {
  return p == Preset::Paper ? NetConfig::paper(s) : NetConfig::tiny(s);
}

struct TrainConfig {
  int iterations = 60000;
  double initial_lr = 1e-5;
  int halving_period = 5000;
  int batch_size = 1;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 = only the final checkpoint
  std::string checkpoint_dir;  // empty = no checkpoints
  Preset preset = Preset::Paper;

  static TrainConfig paper() { return {}; }

  // Desk-scale schedule for the tiny network. The mean-reduced loss and the
  // narrow network need a far larger step than the full-size protocol.
  static TrainConfig tiny() {
    TrainConfig c;
    c.iterations = 2000;
    c.initial_lr = 0.03;
    c.preset = Preset::Tiny;
    return c;
  }

  void validate() const {
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (!(initial_lr > 0)) throw ConfigError("initial_lr must be positive");
    if (halving_period < 1) throw ConfigError("halving_period must be >= 1");
    if (batch_size != 1) throw ConfigError("only batch_size = 1 is supported");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  }
};

inline double lr_schedule(const TrainConfig& cfg, int iteration) {
  return cfg.initial_lr * std::ldexp(1.0, -(iteration / cfg.halving_period));
}

struct LossRecord {
  int iteration = 0;
  double lr = 0;
  double loss = 0;
  bool operator==(const LossRecord&) const = default;
};

struct TrainResult {
  std::vector<LossRecord> log;
  std::vector<std::string> checkpoints;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

// Epoch-cyclic sampler: a fresh seeded permutation of the frame indices per epoch.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    if (n == 0) throw ConfigError("cannot sample from an empty training set");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = n;
  }
  std::size_t next() {
    if (pos_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

inline void write_loss_csv(const std::string& path, const std::vector<LossRecord>& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path);
  os << "iteration,lr,loss\n";
  os << std::setprecision(9);
  for (const auto& r : log) os << r.iteration << ',' << r.lr << ',' << r.loss << '\n';
}

// Trains `model` in place. `on_iteration`, if set, sees every record.
template <typename T>
TrainResult train(ModelParams<T>& model, const std::vector<RoadFrame>& frames, const TrainConfig& cfg,
                  const std::function<void(const LossRecord&)>& on_iteration = {}) {
  cfg.validate();
  if (frames.empty()) throw ConfigError("training set is empty");

  struct Sample {
    Tensor<T> rgb, lidar;
    const RoadFrame* frame;
  };
  std::vector<Sample> samples;
  samples.reserve(frames.size());
  for (const auto& f : frames) {
    f.validate();
    auto [rgb, lda] = make_inputs<T>(f, model.config());
    samples.push_back({std::move(rgb), std::move(lda), &f});
  }

  TrainResult result;
  result.log.reserve(static_cast<std::size_t>(cfg.iterations));
  EpochSampler sampler(samples.size(), cfg.seed);
  auto params = model.trainable();
  auto save = [&](int iteration) {
    if (cfg.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(cfg.checkpoint_dir);
    std::ostringstream name;
    name << "iter_" << std::setw(6) << std::setfill('0') << iteration << ".sfcn";
    const std::string path = (std::filesystem::path(cfg.checkpoint_dir) / name.str()).string();
    save_checkpoint(path, model.tensors());
    result.checkpoints.push_back(path);
  };

  model.zero_grad();
  for (int it = 0; it < cfg.iterations; ++it) {
    const Sample& s = samples[sampler.next()];
    const double lr = lr_schedule(cfg, it);
    double loss_value = 0;
    try {
      Tensor<T> logits = model_forward(model, s.rgb, s.lidar);
      Tensor<T> loss = softmax_ce_loss(logits, s.frame->gt_road, s.frame->gt_valid);
      loss_value = static_cast<double>(loss.item());
      backward(loss);
    } catch (const NumericError& e) {
      throw TrainingError("non-finite value at iteration " + std::to_string(it) + " on frame " +
                          s.frame->frame_id + ": " + e.what());
    }
    sgd_step(params, static_cast<T>(lr));
    result.log.push_back({it, lr, loss_value});
    if (on_iteration) on_iteration(result.log.back());
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < cfg.iterations) {
      save(it + 1);
    }
  }
  save(cfg.iterations);
  return result;
}

}  // namespace sfcn
