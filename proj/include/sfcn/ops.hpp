#pragma once

// Differentiable operations used by the fusion networks. All spatial ops take
// NCHW tensors. Convolutions lower to im2col + GEMM.

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sfcn/tensor.hpp"

namespace sfcn {

struct ConvSpec {
  int kh = 3, kw = 3;
  int c_in = 1, c_out = 1;
  int sh = 1, sw = 1;
  int ph = 1, pw = 1;

  // Square kernel with "same" padding at stride 1.
  static ConvSpec same(int k, int c_in, int c_out) {
    return {k, k, c_in, c_out, 1, 1, k / 2, k / 2};
  }
  static ConvSpec upsample(int k, int stride, int pad, int c_in, int c_out) {
    return {k, k, c_in, c_out, stride, stride, pad, pad};
  }

  void validate() const {
    if (kh < 1 || kw < 1 || sh < 1 || sw < 1 || c_in < 1 || c_out < 1 || ph < 0 || pw < 0) {
      throw ConfigError("invalid ConvSpec");
    }
  }

  std::int64_t weight_count() const {
    return std::int64_t{kh} * kw * c_in * c_out;
  }
  std::int64_t param_count() const { return weight_count() + c_out; }

  bool operator==(const ConvSpec&) const = default;
};

inline std::int64_t conv_out_size(std::int64_t in, int k, int s, int p) {
  const std::int64_t span = in + 2 * p - k;
  if (span < 0) return 0;
  return span / s + 1;
}

inline std::int64_t conv_transpose_out_size(std::int64_t in, int k, int s, int p) {
  return (in - 1) * s - 2 * p + k;
}

// Ceil-mode pooling: the last window may hang over the right/bottom edge.
inline std::int64_t pool_out_size_ceil(std::int64_t in, int k, int s) {
  if (in <= k) return 1;
  return (in - k + s - 1) / s + 1;
}

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct Geometry {
  std::int64_t channels, in_h, in_w, out_h, out_w;
  int kh, kw, sh, sw, ph, pw;
};

// cols[(c*kh + i)*kw + j][oy*out_w + ox] = x[c][oy*sh - ph + i][ox*sw - pw + j]
template <typename T>
void im2col(const T* x, const Geometry& g, T* cols) {
  const std::int64_t plane = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const T* xc = x + c * g.in_h * g.in_w;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.sh - g.ph + i;
          T* out = row + oy * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(out, out + g.out_w, T(0));
            continue;
          }
          const T* xrow = xc + iy * g.in_w;
          if (g.sw == 1) {
            const std::int64_t lo = std::clamp<std::int64_t>(g.pw - j, 0, g.out_w);
            const std::int64_t hi = std::clamp<std::int64_t>(g.in_w + g.pw - j, lo, g.out_w);
            std::fill(out, out + lo, T(0));
            std::copy(xrow + lo - g.pw + j, xrow + hi - g.pw + j, out + lo);
            std::fill(out + hi, out + g.out_w, T(0));
          } else {
            for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
              const std::int64_t ix = ox * g.sw - g.pw + j;
              out[ox] = (ix >= 0 && ix < g.in_w) ? xrow[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds columns back into the image.
template <typename T>
void col2im(const T* cols, const Geometry& g, T* x) {
  const std::int64_t plane = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    T* xc = x + c * g.in_h * g.in_w;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.sh - g.ph + i;
          if (iy < 0 || iy >= g.in_h) continue;
          T* xrow = xc + iy * g.in_w;
          const T* in = row + oy * g.out_w;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.sw - g.pw + j;
            if (ix >= 0 && ix < g.in_w) xrow[ix] += in[ox];
          }
        }
      }
    }
  }
}

inline bool is_pointwise(const ConvSpec& s) {
  return s.kh == 1 && s.kw == 1 && s.sh == 1 && s.sw == 1 && s.ph == 0 && s.pw == 0;
}

template <typename T>
void require_rank4(const Tensor<T>& x, const char* op) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(op) + " expects NCHW input, got " + to_string(x.shape()));
  }
}

template <typename T>
void check_conv_params(const Tensor<T>& weight, const Tensor<T>& bias, const Shape& expected_w,
                       const ConvSpec& spec, const char* op) {
  if (weight.shape() != expected_w) {
    throw ShapeError(std::string(op) + " weight shape " + to_string(weight.shape()) +
                     " does not match spec " + to_string(expected_w));
  }
  if (bias.shape() != Shape{spec.c_out}) {
    throw ShapeError(std::string(op) + " bias shape " + to_string(bias.shape()));
  }
}

}  // namespace detail

// Weight layout (c_out, c_in, kh, kw); bias (c_out).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvSpec& spec) {
  spec.validate();
  detail::require_rank4(x, "conv2d");
  detail::check_conv_params(weight, bias, {spec.c_out, spec.c_in, spec.kh, spec.kw}, spec,
                            "conv2d");
  if (x.dim(1) != spec.c_in) {
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(x.dim(1)) +
                     ", kernel expects " + std::to_string(spec.c_in));
  }
  const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = conv_out_size(h, spec.kh, spec.sh, spec.ph);
  const std::int64_t ow = conv_out_size(w, spec.kw, spec.sw, spec.pw);
  if (oh < 1 || ow < 1) throw ShapeError("conv2d produces empty output for " + to_string(x.shape()));

  const detail::Geometry g{spec.c_in, h, w, oh, ow, spec.kh, spec.kw, spec.sh, spec.sw, spec.ph, spec.pw};
  const std::int64_t krows = spec.weight_count() / spec.c_out;
  const std::int64_t plane = oh * ow;
  const bool pointwise = detail::is_pointwise(spec);

  std::vector<T> out(static_cast<std::size_t>(n * spec.c_out * plane));
  std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(krows * plane));
  detail::ConstMatMap<T> wm(weight.data().data(), spec.c_out, krows);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(bias.data().data(), spec.c_out);
  for (std::int64_t b = 0; b < n; ++b) {
    const T* xb = x.data().data() + b * spec.c_in * h * w;
    const T* colp = xb;
    if (!pointwise) {
      detail::im2col(xb, g, cols.data());
      colp = cols.data();
    }
    detail::MatMap<T> ym(out.data() + b * spec.c_out * plane, spec.c_out, plane);
    ym.noalias() = wm * detail::ConstMatMap<T>(colp, krows, plane);
    ym.colwise() += bv;
  }

  return detail::make_result<T>(
      {n, spec.c_out, oh, ow}, std::move(out), "conv2d", {x, weight, bias},
      [x, weight, bias, spec, g, krows, plane, pointwise](Node<T>& self) {
        const std::int64_t nb = x.dim(0);
        const std::int64_t in_sz = spec.c_in * g.in_h * g.in_w;
        auto& xn = x.node();
        auto& wn = weight.node();
        auto& bn = bias.node();
        std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(krows * plane));
        std::vector<T> dcols(static_cast<std::size_t>(krows * plane));
        detail::ConstMatMap<T> wm(wn.value.data(), spec.c_out, krows);
        for (std::int64_t b = 0; b < nb; ++b) {
          detail::ConstMatMap<T> dy(self.grad.data() + b * spec.c_out * plane, spec.c_out, plane);
          if (wn.requires_grad) {
            const T* colp = xn.value.data() + b * in_sz;
            if (!pointwise) {
              detail::im2col(colp, g, cols.data());
              colp = cols.data();
            }
            detail::MatMap<T> dw(wn.ensure_grad().data(), spec.c_out, krows);
            dw.noalias() += dy * detail::ConstMatMap<T>(colp, krows, plane).transpose();
          }
          if (bn.requires_grad) {
            // Plain sequential sums: Eigen's vectorised reductions peel by
            // pointer alignment, which would make results allocation-dependent.
            T* db = bn.ensure_grad().data();
            for (std::int64_t co = 0; co < spec.c_out; ++co) {
              const T* row = self.grad.data() + (b * spec.c_out + co) * plane;
              T acc = 0;
              for (std::int64_t i = 0; i < plane; ++i) acc += row[i];
              db[co] += acc;
            }
          }
          if (xn.requires_grad) {
            T* dx = xn.ensure_grad().data() + b * in_sz;
            if (pointwise) {
              detail::MatMap<T>(dx, krows, plane).noalias() += wm.transpose() * dy;
            } else {
              detail::MatMap<T>(dcols.data(), krows, plane).noalias() = wm.transpose() * dy;
              detail::col2im(dcols.data(), g, dx);
            }
          }
        }
      });
}

// Transposed convolution (gradient of conv2d w.r.t. its input).
// Weight layout (c_in, c_out, kh, kw); output extent (H-1)*s - 2p + k.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           const ConvSpec& spec) {
  spec.validate();
  detail::require_rank4(x, "conv_transpose2d");
  detail::check_conv_params(weight, bias, {spec.c_in, spec.c_out, spec.kh, spec.kw}, spec,
                            "conv_transpose2d");
  if (x.dim(1) != spec.c_in) {
    throw ShapeError("conv_transpose2d channel mismatch: input has " + std::to_string(x.dim(1)) +
                     ", kernel expects " + std::to_string(spec.c_in));
  }
  const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = conv_transpose_out_size(h, spec.kh, spec.sh, spec.ph);
  const std::int64_t ow = conv_transpose_out_size(w, spec.kw, spec.sw, spec.pw);
  if (oh < 1 || ow < 1) {
    throw ShapeError("conv_transpose2d produces non-positive output for " + to_string(x.shape()));
  }
  // Geometry of the forward conv whose input is our output.
  const detail::Geometry g{spec.c_out, oh, ow, h, w, spec.kh, spec.kw, spec.sh, spec.sw, spec.ph, spec.pw};
  const std::int64_t krows = std::int64_t{spec.c_out} * spec.kh * spec.kw;
  const std::int64_t plane = h * w;
  const std::int64_t out_plane = oh * ow;

  std::vector<T> out(static_cast<std::size_t>(n * spec.c_out * out_plane), T(0));
  std::vector<T> cols(static_cast<std::size_t>(krows * plane));
  detail::ConstMatMap<T> wm(weight.data().data(), spec.c_in, krows);
  for (std::int64_t b = 0; b < n; ++b) {
    detail::ConstMatMap<T> xm(x.data().data() + b * spec.c_in * plane, spec.c_in, plane);
    detail::MatMap<T>(cols.data(), krows, plane).noalias() = wm.transpose() * xm;
    T* ob = out.data() + b * spec.c_out * out_plane;
    detail::col2im(cols.data(), g, ob);
    for (int c = 0; c < spec.c_out; ++c) {
      const T bc = bias.data()[c];
      std::for_each(ob + c * out_plane, ob + (c + 1) * out_plane, [bc](T& v) { v += bc; });
    }
  }

  return detail::make_result<T>(
      {n, spec.c_out, oh, ow}, std::move(out), "conv_transpose2d", {x, weight, bias},
      [x, weight, bias, spec, g, krows, plane, out_plane](Node<T>& self) {
        auto& xn = x.node();
        auto& wn = weight.node();
        auto& bn = bias.node();
        std::vector<T> cols(static_cast<std::size_t>(krows * plane));
        detail::ConstMatMap<T> wm(wn.value.data(), spec.c_in, krows);
        for (std::int64_t b = 0; b < x.dim(0); ++b) {
          const T* dy = self.grad.data() + b * spec.c_out * out_plane;
          detail::im2col(dy, g, cols.data());
          detail::ConstMatMap<T> cm(cols.data(), krows, plane);
          if (xn.requires_grad) {
            detail::MatMap<T>(xn.ensure_grad().data() + b * spec.c_in * plane, spec.c_in, plane)
                .noalias() += wm * cm;
          }
          if (wn.requires_grad) {
            detail::ConstMatMap<T> xm(xn.value.data() + b * spec.c_in * plane, spec.c_in, plane);
            detail::MatMap<T>(wn.ensure_grad().data(), spec.c_in, krows).noalias() +=
                xm * cm.transpose();
          }
          if (bn.requires_grad) {
            auto& db = bn.ensure_grad();
            for (int c = 0; c < spec.c_out; ++c) {
              T s = 0;
              for (std::int64_t i = 0; i < out_plane; ++i) s += dy[c * out_plane + i];
              db[c] += s;
            }
          }
        }
      });
}

// Max pooling with ceil output sizing and implicit -inf padding on the
// right/bottom. Gradient goes to the first maximum in row-major order.
template <typename T>
Tensor<T> maxpool2d_ceil(const Tensor<T>& x, int window = 2, int stride = 2) {
  detail::require_rank4(x, "maxpool2d_ceil");
  if (window < 1 || stride < 1) throw ConfigError("maxpool window/stride must be >= 1");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = pool_out_size_ceil(h, window, stride);
  const std::int64_t ow = pool_out_size_ceil(w, window, stride);
  std::vector<T> out(static_cast<std::size_t>(n * c * oh * ow));
  std::vector<std::int64_t> argmax(out.size());
  const T* xd = x.data().data();
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* xp = xd + p * h * w;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      const std::int64_t y0 = oy * stride, y1 = std::min<std::int64_t>(y0 + window, h);
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const std::int64_t x0 = ox * stride, x1 = std::min<std::int64_t>(x0 + window, w);
        T best = -std::numeric_limits<T>::infinity();
        std::int64_t best_i = y0 * w + x0;
        for (std::int64_t yy = y0; yy < y1; ++yy) {
          for (std::int64_t xx = x0; xx < x1; ++xx) {
            if (xp[yy * w + xx] > best) {
              best = xp[yy * w + xx];
              best_i = yy * w + xx;
            }
          }
        }
        const std::size_t o = static_cast<std::size_t>((p * oh + oy) * ow + ox);
        out[o] = best;
        argmax[o] = p * h * w + best_i;
      }
    }
  }
  return detail::make_result<T>({n, c, oh, ow}, std::move(out), "maxpool2d_ceil", {x},
                                [x, argmax = std::move(argmax)](Node<T>& self) {
                                  auto& dx = x.node().ensure_grad();
                                  for (std::size_t o = 0; o < argmax.size(); ++o) {
                                    dx[static_cast<std::size_t>(argmax[o])] += self.grad[o];
                                  }
                                });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v <= T(0) ? T(0) : v;  // NaN propagates to the finiteness check
  return detail::make_result<T>(x.shape(), std::move(out), "relu", {x}, [x](Node<T>& self) {
    auto& dx = x.node().ensure_grad();
    const auto xv = x.data();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xv[i] > T(0)) dx[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return detail::make_result<T>(a.shape(), std::move(out), "add", {a, b}, [a, b](Node<T>& self) {
    for (Node<T>* in : {&a.node(), &b.node()}) {
      if (!in->requires_grad) continue;
      auto& d = in->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

// Stacks b's channels after a's.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank4(a, "concat_channels");
  detail::require_rank4(b, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  const std::int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  std::vector<T> out(static_cast<std::size_t>(n * (ca + cb) * plane));
  for (std::int64_t i = 0; i < n; ++i) {
    auto dst = out.begin() + i * (ca + cb) * plane;
    auto as = a.data().begin() + i * ca * plane;
    auto bs = b.data().begin() + i * cb * plane;
    std::copy(as, as + ca * plane, dst);
    std::copy(bs, bs + cb * plane, dst + ca * plane);
  }
  return detail::make_result<T>(
      {n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), "concat_channels", {a, b},
      [a, b, n, ca, cb, plane](Node<T>& self) {
        for (std::int64_t i = 0; i < n; ++i) {
          const T* g = self.grad.data() + i * (ca + cb) * plane;
          if (a.requires_grad()) {
            T* da = a.node().ensure_grad().data() + i * ca * plane;
            for (std::int64_t k = 0; k < ca * plane; ++k) da[k] += g[k];
          }
          if (b.requires_grad()) {
            T* db = b.node().ensure_grad().data() + i * cb * plane;
            for (std::int64_t k = 0; k < cb * plane; ++k) db[k] += g[ca * plane + k];
          }
        }
      });
}

// Spatial window [top, top+out_h) x [left, left+out_w).
template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w, std::int64_t top,
                 std::int64_t left) {
  detail::require_rank4(x, "crop2d");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h < 1 || out_w < 1 || top < 0 || left < 0 || top + out_h > h || left + out_w > w) {
    throw ShapeError("crop window (" + std::to_string(out_h) + "," + std::to_string(out_w) +
                     ") at (" + std::to_string(top) + "," + std::to_string(left) +
                     ") outside " + to_string(x.shape()));
  }
  std::vector<T> out(static_cast<std::size_t>(n * c * out_h * out_w));
  const T* xd = x.data().data();
  for (std::int64_t p = 0; p < n * c; ++p) {
    for (std::int64_t y = 0; y < out_h; ++y) {
      const T* src = xd + (p * h + top + y) * w + left;
      std::copy(src, src + out_w, out.begin() + (p * out_h + y) * out_w);
    }
  }
  return detail::make_result<T>({n, c, out_h, out_w}, std::move(out), "crop2d", {x},
                                [x, out_h, out_w, top, left](Node<T>& self) {
                                  const std::int64_t h = x.dim(2), w = x.dim(3);
                                  T* dx = x.node().ensure_grad().data();
                                  for (std::int64_t p = 0; p < x.dim(0) * x.dim(1); ++p) {
                                    for (std::int64_t y = 0; y < out_h; ++y) {
                                      T* dst = dx + (p * h + top + y) * w + left;
                                      const T* g = self.grad.data() + (p * out_h + y) * out_w;
                                      for (std::int64_t i = 0; i < out_w; ++i) dst[i] += g[i];
                                    }
                                  }
                                });
}

// Centered crop; odd surplus leaves the extra row/column at the bottom/right.
template <typename T>
Tensor<T> center_crop(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  detail::require_rank4(x, "center_crop");
  if (x.dim(2) == out_h && x.dim(3) == out_w) return x;
  return crop2d(x, out_h, out_w, (x.dim(2) - out_h) / 2, (x.dim(3) - out_w) / 2);
}

// Mean over valid pixels of -log softmax(logits)[target]. Masks are N*H*W
// bytes; nonzero means road (target) or counted (valid).
template <typename T>
Tensor<T> softmax_ce_loss(const Tensor<T>& logits, std::span<const std::uint8_t> target,
                          std::span<const std::uint8_t> valid) {
  detail::require_rank4(logits, "softmax_ce_loss");
  const std::int64_t n = logits.dim(0), c = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  if (static_cast<std::int64_t>(target.size()) != n * plane ||
      static_cast<std::int64_t>(valid.size()) != n * plane) {
    throw ShapeError("loss masks must have N*H*W entries for logits " + to_string(logits.shape()));
  }
  if (c < 2) throw ShapeError("softmax_ce_loss needs at least 2 classes");
  std::int64_t count = 0;
  for (auto v : valid) count += v ? 1 : 0;
  if (count == 0) throw Error("softmax_ce_loss: no valid pixels");

  const T* ld = logits.data().data();
  std::vector<T> probs(static_cast<std::size_t>(n * c * plane), T(0));
  double total = 0;
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t i = 0; i < plane; ++i) {
      if (!valid[b * plane + i]) continue;
      const T* base = ld + b * c * plane + i;
      T mx = base[0];
      for (std::int64_t k = 1; k < c; ++k) mx = std::max(mx, base[k * plane]);
      T sum = 0;
      for (std::int64_t k = 0; k < c; ++k) sum += std::exp(base[k * plane] - mx);
      const std::int64_t label = target[b * plane + i] ? 1 : 0;
      total += static_cast<double>(std::log(sum) - (base[label * plane] - mx));
      for (std::int64_t k = 0; k < c; ++k) {
        probs[(b * c + k) * plane + i] = std::exp(base[k * plane] - mx) / sum;
      }
    }
  }
  const T loss = static_cast<T>(total / static_cast<double>(count));
  std::vector<std::uint8_t> tgt(target.begin(), target.end());
  std::vector<std::uint8_t> val(valid.begin(), valid.end());
  return detail::make_result<T>(
      {1}, {loss}, "softmax_ce_loss", {logits},
      [logits, probs = std::move(probs), tgt = std::move(tgt), val = std::move(val), n, c, plane,
       count](Node<T>& self) {
        const T scale = self.grad[0] / static_cast<T>(count);
        auto& dl = logits.node().ensure_grad();
        for (std::int64_t b = 0; b < n; ++b) {
          for (std::int64_t i = 0; i < plane; ++i) {
            if (!val[b * plane + i]) continue;
            const std::int64_t label = tgt[b * plane + i] ? 1 : 0;
            for (std::int64_t k = 0; k < c; ++k) {
              const std::size_t o = static_cast<std::size_t>((b * c + k) * plane + i);
              dl[o] += scale * (probs[o] - (k == label ? T(1) : T(0)));
            }
          }
        }
      });
}

// Per-pixel softmax probability of class `cls` for image `b` (no graph).
template <typename T>
std::vector<float> class_probability(const Tensor<T>& logits, std::int64_t cls = 1,
                                     std::int64_t b = 0) {
  detail::require_rank4(logits, "class_probability");
  const std::int64_t c = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  const T* base = logits.data().data() + b * c * plane;
  std::vector<float> out(static_cast<std::size_t>(plane));
  for (std::int64_t i = 0; i < plane; ++i) {
    T mx = base[i];
    for (std::int64_t k = 1; k < c; ++k) mx = std::max(mx, base[k * plane + i]);
    T sum = 0;
    for (std::int64_t k = 0; k < c; ++k) sum += std::exp(base[k * plane + i] - mx);
    out[static_cast<std::size_t>(i)] = static_cast<float>(std::exp(base[cls * plane + i] - mx) / sum);
  }
  return out;
}

}  // namespace sfcn
