#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

#include "sfcn/ops.hpp"
#include "sfcn/tensor.hpp"

namespace sfcn {

// Plain SGD: p <- p - lr * grad, then clears the gradient.
template <typename T, typename Range>
void sgd_step(Range&& params, T lr) {
  for (Tensor<T>& p : params) {
    if (!p.requires_grad()) continue;
    auto values = p.data();
    auto grads = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * grads[i];
    p.zero_grad();
  }
}

template <typename T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;
};

// He-normal weights, std = sqrt(2 / (kh*kw*c_in)), zero bias.
template <typename T>
ConvParams<T> init_params(const ConvSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (double(spec.kh) * spec.kw * spec.c_in)));
  std::vector<T> w(static_cast<std::size_t>(spec.weight_count()));
  for (auto& v : w) v = static_cast<T>(normal(rng));
  return {Tensor<T>({spec.c_out, spec.c_in, spec.kh, spec.kw}, std::move(w), true),
          Tensor<T>({spec.c_out}, true)};
}

// Bilinear upsampling filter of the given stride placed at the centre of a
// (kh, kw) window, one filter per channel (diagonal in channels). Layout
// matches conv_transpose2d: (c_in, c_out, kh, kw).
template <typename T>
ConvParams<T> bilinear_upsample_params(const ConvSpec& spec) {
  spec.validate();
  const int support = 2 * spec.sh;
  const int off = (spec.kh - support) / 2;
  const double center = (support - 1) / 2.0;
  std::vector<T> w(static_cast<std::size_t>(spec.weight_count()), T(0));
  for (int c = 0; c < std::min(spec.c_in, spec.c_out); ++c) {
    for (int i = 0; i < support; ++i) {
      for (int j = 0; j < support; ++j) {
        const double f = (1.0 - std::abs(i - center) / spec.sh) * (1.0 - std::abs(j - center) / spec.sw);
        const std::size_t idx = static_cast<std::size_t>(
            ((std::int64_t{c} * spec.c_out + c) * spec.kh + i + off) * spec.kw + j + off);
        w[idx] = static_cast<T>(f);
      }
    }
  }
  return {Tensor<T>({spec.c_in, spec.c_out, spec.kh, spec.kw}, std::move(w), true),
          Tensor<T>({spec.c_out}, true)};
}

}  // namespace sfcn
