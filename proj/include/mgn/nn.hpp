#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "mgn/ops.hpp"

namespace mgn {

// ---------------------------------------------------------------------------
// Parameter bundles. Feature maps are channel-first [C, H, W].

template <class T>
struct Conv2dParams {
  BasicTensor<T> weight;  // [C_out, C_in, k, k]
  BasicTensor<T> bias;    // [C_out]
  std::size_t stride = 1;
  std::size_t padding = 0;
};

template <class T>
struct InstanceNormParams {
  BasicTensor<T> gamma;  // [C]
  BasicTensor<T> beta;   // [C]
  double eps = 1e-5;
};

template <class T>
struct LayerNormParams {
  BasicTensor<T> gamma;  // [D]
  BasicTensor<T> beta;   // [D]
  double eps = 1e-5;
};

template <class T>
struct LinearParams {
  BasicTensor<T> weight;  // [D_out, D_in]
  BasicTensor<T> bias;    // [D_out]
};

template <class T>
struct RcabParams {
  Conv2dParams<T> conv1;
  Conv2dParams<T> conv2;
  LinearParams<T> squeeze;  // C -> C/r
  LinearParams<T> excite;   // C/r -> C
};

template <class T>
struct AttentionParams {
  LinearParams<T> q, k, v, out;
  std::size_t heads = 1;
};

template <class T>
struct VitBlockParams {
  LinearParams<T> embed;     // 3 -> D
  BasicTensor<T> pos;        // [S*S, D]; undefined tensor disables it
  LayerNormParams<T> norm1;
  AttentionParams<T> attn;
  LayerNormParams<T> norm2;
  LinearParams<T> mlp1;      // D -> 2D
  LinearParams<T> mlp2;      // 2D -> D
};

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero padding)

namespace detail {

struct ConvGeometry {
  std::size_t c_in, h, w, k, stride, pad, h_out, w_out;
};

/// Output columns [lo, hi) whose input column ox*stride + kj - pad is in range.
inline std::pair<std::size_t, std::size_t> valid_span(std::size_t n_out, std::size_t n_in, std::size_t stride,
                                                      std::size_t kj, std::size_t pad) {
  const auto off = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(pad);
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
  std::ptrdiff_t hi = (static_cast<std::ptrdiff_t>(n_in) - off + s - 1) / s;
  hi = std::clamp<std::ptrdiff_t>(hi, 0, static_cast<std::ptrdiff_t>(n_out));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t plane = g.h_out * g.w_out;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* row = col + ((c * g.k + ki) * g.k + kj) * plane;
        const auto [lo, hi] = valid_span(g.w_out, g.w, g.stride, kj, g.pad);
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(g.pad);
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oy * g.w_out;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill_n(dst, g.w_out, T(0));
            continue;
          }
          const T* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          std::fill(dst, dst + lo, T(0));
          if (g.stride == 1) {
            std::copy_n(src + static_cast<std::ptrdiff_t>(lo) + shift, hi - lo, dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox)
              dst[ox] = src[static_cast<std::ptrdiff_t>(ox * g.stride) + shift];
          }
          std::fill(dst + hi, dst + g.w_out, T(0));
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  const std::size_t plane = g.h_out * g.w_out;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* row = col + ((c * g.k + ki) * g.k + kj) * plane;
        const auto [lo, hi] = valid_span(g.w_out, g.w, g.stride, kj, g.pad);
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(g.pad);
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* src = row + oy * g.w_out;
          if (g.stride == 1) {
            T* d = dst + static_cast<std::ptrdiff_t>(lo) + shift;
            for (std::size_t ox = lo; ox < hi; ++ox) *d++ += src[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[static_cast<std::ptrdiff_t>(ox * g.stride) + shift] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const Conv2dParams<T>& p) {
  const auto& ws = p.weight.shape();
  if (x.rank() != 3 || ws.size() != 4 || ws[2] != ws[3])
    throw DimensionError("conv2d: expected [C,H,W] input and [Co,Ci,k,k] weight, got " + shape_str(x.shape()) + " and " +
                         shape_str(ws));
  if (x.dim(0) != ws[1])
    throw DimensionError("conv2d: input has " + std::to_string(x.dim(0)) + " channels, weight expects " +
                         std::to_string(ws[1]));
  if (p.bias.numel() != ws[0]) throw DimensionError("conv2d: bias length does not match output channels");
  if (p.stride == 0) throw DimensionError("conv2d: stride must be positive");
  const std::size_t k = ws[2];
  if (x.dim(1) + 2 * p.padding < k || x.dim(2) + 2 * p.padding < k)
    throw DimensionError("conv2d: kernel larger than padded input " + shape_str(x.shape()));

  detail::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), k, p.stride, p.padding, 0, 0};
  g.h_out = (g.h + 2 * g.pad - k) / g.stride + 1;
  g.w_out = (g.w + 2 * g.pad - k) / g.stride + 1;
  const std::size_t c_out = ws[0];
  const std::size_t rows = g.c_in * k * k;
  const std::size_t plane = g.h_out * g.w_out;
  const bool direct = k == 1 && g.stride == 1 && g.pad == 0;

  const T* col_ptr = x.data().data();
  if (!direct) {
    T* col = detail::scratch<T, 0>(rows * plane);
    detail::im2col(x.data().data(), g, col);
    col_ptr = col;
  }

  std::vector<T> out(c_out * plane);
  detail::gemm(out.data(), false, p.weight.data().data(), false, col_ptr, false, c_out, rows, plane);
  const auto b = p.bias.data();
  for (std::size_t c = 0; c < c_out; ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += b[c];
  count_flops("conv2d", 2 * c_out * rows * plane);

  auto xi = x.impl(), wi = p.weight.impl(), bi = p.bias.impl();
  return detail::make_result<T>(
      {c_out, g.h_out, g.w_out}, std::move(out), "conv2d", {xi, wi, bi},
      [xi, wi, bi, g, c_out, rows, plane, direct](TensorImpl<T>& o) {
        const T* gm = o.grad.data();
        const T* col_ptr = xi->data.data();
        auto gw = wi->grad_buffer();
        if (!gw.empty()) {
          if (!direct) {
            T* col = detail::scratch<T, 0>(rows * plane);
            detail::im2col(xi->data.data(), g, col);
            col_ptr = col;
          }
          detail::gemm(gw.data(), true, gm, false, col_ptr, true, c_out, plane, rows);
        }
        if (auto gb = bi->grad_buffer(); !gb.empty())
          for (std::size_t c = 0; c < c_out; ++c) {
            T acc = 0;
            for (std::size_t i = 0; i < plane; ++i) acc += gm[c * plane + i];
            gb[c] += acc;
          }
        if (auto gx = xi->grad_buffer(); !gx.empty()) {
          const T* wm = wi->data.data();
          if (direct) {
            detail::gemm(gx.data(), true, wm, true, gm, false, rows, c_out, plane);
          } else {
            T* dcol = detail::scratch<T, 1>(rows * plane);
            detail::gemm(dcol, false, wm, true, gm, false, rows, c_out, plane);
            detail::col2im_add(dcol, g, gx.data());
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization

namespace detail {

/// Normalizes `groups` contiguous rows of length `n` and applies a per-row
/// (instance norm) or per-column (layer norm) affine transform.
template <class T>
BasicTensor<T> normalize_rows(const BasicTensor<T>& x, std::size_t groups, std::size_t n, const BasicTensor<T>& gamma,
                              const BasicTensor<T>& beta, double eps, bool affine_per_row, const char* op) {
  const auto v = x.data();
  const auto ga = gamma.data();
  const auto be = beta.data();
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(groups);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < groups; ++r) {
    const T* row = v.data() + r * n;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += row[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<T>(is);
    for (std::size_t i = 0; i < n; ++i) {
      const T xh = static_cast<T>((row[i] - mu) * is);
      xhat[r * n + i] = xh;
      const std::size_t a = affine_per_row ? r : i;
      out[r * n + i] = xh * ga[a] + be[a];
    }
  }
  count_flops(op, 8 * x.numel());
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return make_result<T>(
      x.shape(), std::move(out), op, {xi, gi, bi},
      [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), groups, n, affine_per_row](TensorImpl<T>& o) {
        auto gg = gi->grad_buffer();
        auto gb = bi->grad_buffer();
        auto gx = xi->grad_buffer();
        const auto& gamma = gi->data;
        for (std::size_t r = 0; r < groups; ++r) {
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t idx = r * n + i;
            const std::size_t a = affine_per_row ? r : i;
            const T g = o.grad[idx];
            if (!gg.empty()) gg[a] += g * xhat[idx];
            if (!gb.empty()) gb[a] += g;
            const double d = static_cast<double>(g) * gamma[a];
            sum_d += d;
            sum_dx += d * xhat[idx];
          }
          if (gx.empty()) continue;
          const double scale = static_cast<double>(inv_std[r]) / static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t idx = r * n + i;
            const std::size_t a = affine_per_row ? r : i;
            const double d = static_cast<double>(o.grad[idx]) * gamma[a];
            gx[idx] += static_cast<T>(scale * (static_cast<double>(n) * d - sum_d - xhat[idx] * sum_dx));
          }
        }
      });
}

}  // namespace detail

/// Per-channel normalization over the spatial axes with learned affine.
template <class T>
BasicTensor<T> instance_norm2d(const BasicTensor<T>& x, const InstanceNormParams<T>& p) {
  if (x.rank() != 3) throw DimensionError("instance_norm2d: expected [C,H,W], got " + shape_str(x.shape()));
  if (p.gamma.numel() != x.dim(0) || p.beta.numel() != x.dim(0))
    throw DimensionError("instance_norm2d: affine parameters do not match channel count");
  return detail::normalize_rows(x, x.dim(0), x.dim(1) * x.dim(2), p.gamma, p.beta, p.eps, true, "instance_norm2d");
}

/// Normalization over the last axis (token features).
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const LayerNormParams<T>& p) {
  const std::size_t d = x.shape().back();
  if (p.gamma.numel() != d || p.beta.numel() != d)
    throw DimensionError("layer_norm: affine parameters do not match feature width " + std::to_string(d));
  return detail::normalize_rows(x, x.numel() / d, d, p.gamma, p.beta, p.eps, false, "layer_norm");
}

// ---------------------------------------------------------------------------
// Pooling

/// Bin (i, j) averages rows [floor(iH/S), ceil((i+1)H/S)) and the analogous columns.
template <class T>
BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>& x, long s) {
  if (s <= 0) throw DimensionError("adaptive_avg_pool2d: output size must be positive");
  if (x.rank() != 3) throw DimensionError("adaptive_avg_pool2d: expected [C,H,W], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), S = static_cast<std::size_t>(s);
  auto lo = [](std::size_t i, std::size_t n, std::size_t S) { return (i * n) / S; };
  auto hi = [](std::size_t i, std::size_t n, std::size_t S) { return ((i + 1) * n + S - 1) / S; };
  const auto v = x.data();
  std::vector<T> out(c * S * S);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t j = 0; j < S; ++j) {
        double acc = 0.0;
        const std::size_t y0 = lo(i, h, S), y1 = hi(i, h, S), x0 = lo(j, w, S), x1 = hi(j, w, S);
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t xx = x0; xx < x1; ++xx) acc += v[(ch * h + y) * w + xx];
        out[(ch * S + i) * S + j] = static_cast<T>(acc / static_cast<double>((y1 - y0) * (x1 - x0)));
      }
  std::uint64_t flops = 0;
  for (std::size_t i = 0; i < S; ++i)
    for (std::size_t j = 0; j < S; ++j) flops += (hi(i, h, S) - lo(i, h, S)) * (hi(j, w, S) - lo(j, w, S)) + 1;
  count_flops("adaptive_avg_pool2d", c * flops);
  auto xi = x.impl();
  return detail::make_result<T>({c, S, S}, std::move(out), "adaptive_avg_pool2d", {xi},
                                [xi, c, h, w, S, lo, hi](TensorImpl<T>& o) {
                                  auto gx = xi->grad_buffer();
                                  for (std::size_t ch = 0; ch < c; ++ch)
                                    for (std::size_t i = 0; i < S; ++i)
                                      for (std::size_t j = 0; j < S; ++j) {
                                        const std::size_t y0 = lo(i, h, S), y1 = hi(i, h, S);
                                        const std::size_t x0 = lo(j, w, S), x1 = hi(j, w, S);
                                        const T g = o.grad[(ch * S + i) * S + j] / static_cast<T>((y1 - y0) * (x1 - x0));
                                        for (std::size_t y = y0; y < y1; ++y)
                                          for (std::size_t xx = x0; xx < x1; ++xx) gx[(ch * h + y) * w + xx] += g;
                                      }
                                });
}

/// [C, h, w] -> [C]
template <class T>
BasicTensor<T> global_avg_pool2d(const BasicTensor<T>& x) {
  if (x.rank() != 3) throw DimensionError("global_avg_pool2d: expected [C,H,W], got " + shape_str(x.shape()));
  return mean(x, {1, 2});
}

// ---------------------------------------------------------------------------
// Sub-pixel rearrangement

/// [r^2 C, H, W] -> [C, rH, rW] with out[c, rH_i+a, rW_j+b] = in[c r^2 + a r + b, i, j].
template <class T>
BasicTensor<T> pixel_shuffle(const BasicTensor<T>& x, std::size_t r) {
  if (x.rank() != 3 || r == 0 || x.dim(0) % (r * r) != 0)
    throw DimensionError("pixel_shuffle: channels of " + shape_str(x.shape()) + " not divisible by r^2 = " +
                         std::to_string(r * r));
  const std::size_t c = x.dim(0) / (r * r), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h * r, ow = w * r;
  std::vector<std::size_t> src(x.numel());  // output index -> input index
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = 0; b < r; ++b)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j)
            src[(ch * oh + i * r + a) * ow + j * r + b] = ((ch * r * r + a * r + b) * h + i) * w + j;
  const auto v = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[src[i]];
  auto xi = x.impl();
  return detail::make_result<T>({c, oh, ow}, std::move(out), "pixel_shuffle", {xi}, [xi, src = std::move(src)](TensorImpl<T>& o) {
    auto gx = xi->grad_buffer();
    for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += o.grad[i];
  });
}

/// Inverse of pixel_shuffle: [C, rH, rW] -> [r^2 C, H, W].
template <class T>
BasicTensor<T> pixel_unshuffle(const BasicTensor<T>& x, std::size_t r) {
  if (x.rank() != 3 || r == 0 || x.dim(1) % r != 0 || x.dim(2) % r != 0)
    throw DimensionError("pixel_unshuffle: spatial extents of " + shape_str(x.shape()) + " not divisible by " +
                         std::to_string(r));
  const std::size_t c = x.dim(0), h = x.dim(1) / r, w = x.dim(2) / r;
  std::vector<std::size_t> src(x.numel());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = 0; b < r; ++b)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j)
            src[((ch * r * r + a * r + b) * h + i) * w + j] = (ch * h * r + i * r + a) * w * r + j * r + b;
  const auto v = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[src[i]];
  auto xi = x.impl();
  return detail::make_result<T>({c * r * r, h, w}, std::move(out), "pixel_unshuffle", {xi},
                                [xi, src = std::move(src)](TensorImpl<T>& o) {
                                  auto gx = xi->grad_buffer();
                                  for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += o.grad[i];
                                });
}

// ---------------------------------------------------------------------------
// Dense layers

/// Affine map on the last axis: x W^T + b.
template <class T>
BasicTensor<T> fully_connected(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  if (weight.rank() != 2 || x.shape().back() != weight.dim(1) || bias.numel() != weight.dim(0))
    throw DimensionError("fully_connected: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  const std::size_t d_in = weight.dim(1), d_out = weight.dim(0);
  const std::size_t rows = x.numel() / d_in;
  auto x2 = x.rank() == 2 ? x : reshape(x, {rows, d_in});
  auto y = add(matmul(x2, transpose(weight)), reshape(bias, {1, d_out}));
  if (x.rank() == 2) return y;
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  return reshape(y, out_shape);
}

template <class T>
BasicTensor<T> fully_connected(const BasicTensor<T>& x, const LinearParams<T>& p) {
  return fully_connected(x, p.weight, p.bias);
}

// ---------------------------------------------------------------------------
// Residual channel attention block

template <class T>
BasicTensor<T> rcab_forward(const BasicTensor<T>& x, const RcabParams<T>& p) {
  auto branch = conv2d(relu(conv2d(x, p.conv1)), p.conv2);
  auto s = sigmoid(fully_connected(relu(fully_connected(global_avg_pool2d(branch), p.squeeze)), p.excite));
  return add(x, mul(branch, s));
}

// ---------------------------------------------------------------------------
// Multi-head self-attention and the transformer block

template <class T>
struct AttentionOutput {
  BasicTensor<T> out;                        // [N, D]
  std::vector<BasicTensor<T>> weights;       // per head [N, N], rows sum to 1
};

template <class T>
AttentionOutput<T> multi_head_attention(const BasicTensor<T>& tokens, const AttentionParams<T>& p) {
  const std::size_t d = tokens.dim(1);
  if (p.heads == 0 || d % p.heads != 0)
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(p.heads) + " heads");
  const std::size_t dh = d / p.heads;
  auto q = fully_connected(tokens, p.q);
  auto k = fully_connected(tokens, p.k);
  auto v = fully_connected(tokens, p.v);
  AttentionOutput<T> res;
  std::vector<BasicTensor<T>> heads;
  for (std::size_t h = 0; h < p.heads; ++h) {
    auto qh = narrow(q, 1, h * dh, dh);
    auto kh = narrow(k, 1, h * dh, dh);
    auto vh = narrow(v, 1, h * dh, dh);
    auto a = softmax(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh))), 1);
    heads.push_back(matmul(a, vh));
    res.weights.push_back(a);
  }
  res.out = fully_connected(p.heads == 1 ? heads[0] : concat(heads, 1), p.out);
  return res;
}

/// Pre-norm block: t += MHA(LN(t)); t += MLP(LN(t)).
template <class T>
BasicTensor<T> vit_block_forward(const BasicTensor<T>& tokens, const VitBlockParams<T>& p,
                                 std::vector<BasicTensor<T>>* attn_weights = nullptr) {
  auto att = multi_head_attention(layer_norm(tokens, p.norm1), p.attn);
  if (attn_weights) *attn_weights = att.weights;
  auto t = add(tokens, att.out);
  auto m = fully_connected(relu(fully_connected(layer_norm(t, p.norm2), p.mlp1)), p.mlp2);
  return add(t, m);
}

/// [3, S, S] pooled image -> [S*S, D] token embeddings (+ positional embedding).
template <class T>
BasicTensor<T> tokenize(const BasicTensor<T>& pooled, const VitBlockParams<T>& p) {
  const std::size_t c = pooled.dim(0), n = pooled.dim(1) * pooled.dim(2);
  auto tokens = fully_connected(transpose(reshape(pooled, {c, n})), p.embed);
  return p.pos.defined() ? add(tokens, p.pos) : tokens;
}

}  // namespace mgn
