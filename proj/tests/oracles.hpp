#pragma once

// Slow, obviously-correct reference computations the tests compare against.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mgn/mgn.hpp"

namespace oracle {

inline mgn::Tensor random(const mgn::Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  mgn::Rng rng(seed);
  std::vector<float> v(mgn::shape_numel(s));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return mgn::Tensor::from(s, std::move(v));
}

inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t n,
                                  std::size_t k, std::size_t m) {
  std::vector<double> c(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * m + j] += a[i * k + p] * b[p * m + j];
  return c;
}

/// Direct six-loop cross-correlation with zero padding, 64-bit accumulation.
inline std::vector<double> conv2d(const mgn::Tensor& x, const mgn::Tensor& w, const mgn::Tensor& b, std::size_t stride,
                                  std::size_t pad) {
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t co = w.dim(0), k = w.dim(2);
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(co * ho * wo);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        double acc = b[o];
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t u = 0; u < k; ++u)
            for (std::size_t v = 0; v < k; ++v) {
              const long y = static_cast<long>(i * stride + u) - static_cast<long>(pad);
              const long xx = static_cast<long>(j * stride + v) - static_cast<long>(pad);
              if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
              acc += static_cast<double>(x[(c * h + y) * wd + xx]) * w[((o * ci + c) * k + u) * k + v];
            }
        out[(o * ho + i) * wo + j] = acc;
      }
  return out;
}

/// Closed-form parameter count of the network, written from the layer list
/// rather than from the allocated tensors.
inline std::size_t param_count(const mgn::ModelConfig& cfg) {
  auto conv = [](std::size_t i, std::size_t o, std::size_t k) { return i * o * k * k + o; };
  auto fc = [](std::size_t i, std::size_t o) { return i * o + o; };
  const std::size_t r = static_cast<std::size_t>(cfg.rcab_reduction);
  auto rcab = [&](std::size_t c) {
    const std::size_t hidden = std::max<std::size_t>(1, c / r);
    return 2 * conv(c, c, 3) + fc(c, hidden) + fc(hidden, c);
  };
  auto down = [&](std::size_t c) {
    return conv(c, c, 3) + conv(c, 2 * c, 3) + conv(2 * c, 2 * c, 3) + rcab(2 * c) + conv(2 * c, 2 * c, 1);
  };
  auto up = [&](std::size_t c) { return conv(c, 4 * c, 3) + conv(c, c, 3) + rcab(c) + conv(c, c, 1) + conv(c, c / 2, 1); };

  const std::size_t C = static_cast<std::size_t>(cfg.base_channels), D = static_cast<std::size_t>(cfg.vit_dim);
  const std::size_t S = static_cast<std::size_t>(cfg.token_grid), R = D * static_cast<std::size_t>(cfg.vit_mlp_ratio);
  const std::size_t K = static_cast<std::size_t>(cfg.partitions);
  const std::size_t widths[] = {C, 2 * C, 4 * C, 2 * C, C};

  std::size_t n = fc(3, D) + S * S * D + 2 * D + 4 * fc(D, D) + 2 * D + fc(D, R) + fc(R, D) + fc(D, C);
  n += conv(3, C, 3) + 2 * C;
  n += fc(C, C) + fc(C, 2 * C) + fc(2 * C, 4 * C) + fc(4 * C, 2 * C) + fc(2 * C, C);
  n += conv(C, C, 3) + down(C) + down(2 * C) + up(4 * C) + up(2 * C) + conv(C, C, 3);
  for (auto w : widths) n += cfg.fusion_mode == mgn::FusionMode::concat ? conv(2 * w, w, 1) : 6 * fc(w, w);
  n += conv(C, 3, 3) + conv(C, K, 3) + fc(C, 3);
  return n;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("mgn-" + tag + "-" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& leaf = {}) const { return leaf.empty() ? path_.string() : (path_ / leaf).string(); }

 private:
  std::filesystem::path path_;
};

/// Small model config for fast structural tests.
inline mgn::ModelConfig small_model() {
  mgn::ModelConfig c;
  c.base_channels = 4;
  c.token_grid = 4;
  c.vit_dim = 16;
  c.vit_heads = 2;
  c.partitions = 4;
  return c;
}

}  // namespace oracle
