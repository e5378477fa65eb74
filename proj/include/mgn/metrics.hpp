#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mgn/tensor.hpp"

namespace mgn {

inline constexpr double kPsnrCap = 100.0;

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(what) + ": shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

inline double mse(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mse");
  const auto x = a.data(), y = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    acc += d * d;
  }
  return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

/// 10 log10(max^2 / MSE), capped at 100 dB (identical inputs included).
inline double psnr(const Tensor& a, const Tensor& b, double max_val = 1.0) {
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / m));
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    g[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    total += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= total;
  return g;
}

/// Separable "valid" filtering of an h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& src, std::size_t h, std::size_t w,
                                        const std::vector<double>& g) {
  const std::size_t k = g.size(), ho = h - k + 1, wo = w - k + 1;
  std::vector<double> tmp(h * wo, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < wo; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += g[i] * src[y * w + x + i];
      tmp[y * wo + x] = s;
    }
  std::vector<double> out(ho * wo, 0.0);
  for (std::size_t y = 0; y < ho; ++y)
    for (std::size_t x = 0; x < wo; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += g[i] * tmp[(y + i) * wo + x];
      out[y * wo + x] = s;
    }
  return out;
}

}  // namespace detail

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5) over valid
/// positions, computed per channel and averaged. Images are [C, H, W] in [0, 1].
inline double ssim(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "ssim");
  if (a.rank() != 3) throw DimensionError("ssim: expected [C,H,W], got " + shape_str(a.shape()));
  constexpr int kWin = 11;
  const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  if (h < kWin || w < kWin)
    throw DimensionError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the 11x11 window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto g = detail::gaussian_window(kWin, 1.5);
  const auto x = a.data(), y = b.data();
  const std::size_t plane = h * w;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<double> p(plane), q(plane), pp(plane), qq(plane), pq(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      p[i] = x[ch * plane + i];
      q[i] = y[ch * plane + i];
      pp[i] = p[i] * p[i];
      qq[i] = q[i] * q[i];
      pq[i] = p[i] * q[i];
    }
    const auto mp = detail::filter_valid(p, h, w, g), mq = detail::filter_valid(q, h, w, g);
    const auto spp = detail::filter_valid(pp, h, w, g), sqq = detail::filter_valid(qq, h, w, g),
               spq = detail::filter_valid(pq, h, w, g);
    for (std::size_t i = 0; i < mp.size(); ++i) {
      const double vp = spp[i] - mp[i] * mp[i], vq = sqq[i] - mq[i] * mq[i], cov = spq[i] - mp[i] * mq[i];
      total += ((2 * mp[i] * mq[i] + c1) * (2 * cov + c2)) / ((mp[i] * mp[i] + mq[i] * mq[i] + c1) * (vp + vq + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

/// Per-pixel Euclidean distance over channels, scaled so the maximum is 1.
/// Returns [1, H, W]; an all-zero map is left unscaled.
inline Tensor l2_error_map(const Tensor& pred, const Tensor& gt) {
  detail::require_same_shape(pred, gt, "l2_error_map");
  if (pred.rank() != 3) throw DimensionError("l2_error_map: expected [C,H,W], got " + shape_str(pred.shape()));
  const std::size_t c = pred.dim(0), plane = pred.dim(1) * pred.dim(2);
  const auto x = pred.data(), y = gt.data();
  std::vector<double> d(plane, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = static_cast<double>(x[ch * plane + i]) - static_cast<double>(y[ch * plane + i]);
      d[i] += v * v;
    }
  double peak = 0.0;
  for (auto& v : d) peak = std::max(peak, v = std::sqrt(v));
  std::vector<float> out(plane);
  for (std::size_t i = 0; i < plane; ++i) out[i] = static_cast<float>(peak > 0.0 ? d[i] / peak : 0.0);
  return Tensor::from({1, pred.dim(1), pred.dim(2)}, std::move(out));
}

}  // namespace mgn
