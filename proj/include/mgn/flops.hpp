#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mgn/model.hpp"

namespace mgn {

using FlopTable = std::map<std::string, std::uint64_t>;

/// Closed-form operation counts of the global branch (transformer head and
/// the five global blocks) on an H x W input, keyed like the runtime counter.
inline FlopTable global_branch_flops(const ModelConfig& cfg, std::size_t h, std::size_t w) {
  const std::uint64_t S = static_cast<std::uint64_t>(cfg.token_grid), N = S * S;
  const std::uint64_t D = static_cast<std::uint64_t>(cfg.vit_dim), heads = static_cast<std::uint64_t>(cfg.vit_heads);
  const std::uint64_t dh = D / heads, R = D * static_cast<std::uint64_t>(cfg.vit_mlp_ratio);
  const std::uint64_t C = static_cast<std::uint64_t>(cfg.base_channels);
  FlopTable t;
  auto fc = [&](std::uint64_t rows, std::uint64_t din, std::uint64_t dout) {
    t["matmul"] += 2 * rows * din * dout;
    t["add"] += rows * dout;
  };

  // Pooling: one add per covered pixel plus one divide per bin, for 3 channels.
  std::uint64_t rows_covered = 0, cols_covered = 0;
  for (std::uint64_t i = 0; i < S; ++i) {
    rows_covered += ((i + 1) * h + S - 1) / S - (i * h) / S;
    cols_covered += ((i + 1) * w + S - 1) / S - (i * w) / S;
  }
  t["adaptive_avg_pool2d"] = 3 * (rows_covered * cols_covered + N);

  fc(N, 3, D);            // token embedding
  t["add"] += N * D;      // positional embedding
  t["layer_norm"] += 8 * N * D;
  for (int i = 0; i < 3; ++i) fc(N, D, D);  // q, k, v
  t["matmul"] += heads * (2 * N * N * dh + 2 * N * N * dh);
  t["scale"] += heads * N * N;
  t["softmax"] += heads * 3 * N * N;
  fc(N, D, D);            // output projection
  t["add"] += N * D;      // residual
  t["layer_norm"] += 8 * N * D;
  fc(N, D, R);
  t["relu"] += N * R;
  fc(N, R, D);
  t["add"] += N * D;      // residual
  t["mean"] += N * D;     // token average
  fc(1, D, C);            // head

  for (std::size_t s = 1; s <= kStages; ++s) {
    const std::uint64_t in = s == 1 ? C : cfg.stage_width(s - 1), out = cfg.stage_width(s);
    fc(1, in, out);
    t["tanh"] += out;
  }
  return t;
}

/// Runs the global branch once on a constant H x W image and returns what the
/// runtime counter recorded.
inline FlopTable measure_global_branch_flops(const Model<float>& m, std::size_t h, std::size_t w) {
  const auto x = Tensor::full({3, h, w}, 0.5f);
  FlopCounter counter;
  {
    NoGradGuard no_grad;
    FlopCounterScope scope(counter);
    auto f = global_head_forward(m, x);
    for (std::size_t t = 1; t <= kStages; ++t) f = global_block_forward(m, t, f);
  }
  return FlopTable(counter.by_op.begin(), counter.by_op.end());
}

}  // namespace mgn
