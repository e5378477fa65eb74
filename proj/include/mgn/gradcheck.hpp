#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mgn/rng.hpp"
#include "mgn/tensor.hpp"

namespace mgn {

struct GradCheckOptions {
  double eps = 1e-3;
  /// Coordinates sampled per parameter tensor (all of them when smaller).
  std::size_t coords_per_tensor = 6;
  std::uint64_t seed = 0;
  /// Denominator floor: absolute, and as a fraction of the largest numeric
  /// gradient in the whole check. The latter keeps structurally zero
  /// gradients (shift-invariant biases) from dividing noise by noise.
  double floor = 1e-8;
  double rel_floor = 1e-3;
};

struct GradCheckSample {
  std::size_t tensor = 0, index = 0;
  double analytic = 0.0, numeric = 0.0;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::vector<GradCheckSample> samples;
  std::vector<double> per_param;  // max relative error per parameter tensor
  std::size_t coords_checked = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences.
///
/// `f` must be callable with a `std::vector<BasicTensor<T>>` for both T=float
/// and T=double and return a scalar tensor of the same type. The analytic side
/// runs in 32-bit through the tape; the finite-difference side evaluates the
/// same function on a 64-bit shadow copy of the parameters.
template <class F>
GradCheckResult grad_check(F&& f, const std::vector<Tensor>& params, const GradCheckOptions& opt = {}) {
  std::vector<Tensor> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(p.detach().set_requires_grad());
  Tensor loss = f(leaves);
  loss.backward();

  std::vector<Tensor64> shadow;
  shadow.reserve(params.size());
  for (const auto& p : params) shadow.push_back(p.template cast<double>());

  NoGradGuard no_grad;
  Rng rng(opt.seed);
  GradCheckResult res;
  res.per_param.assign(params.size(), 0.0);
  for (std::size_t t = 0; t < params.size(); ++t) {
    const std::size_t n = params[t].numel();
    std::vector<std::size_t> coords;
    if (n <= opt.coords_per_tensor) {
      for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      while (coords.size() < opt.coords_per_tensor) {
        const auto c = static_cast<std::size_t>(rng.uniform_int(n));
        if (std::find(coords.begin(), coords.end(), c) == coords.end()) coords.push_back(c);
      }
    }
    const auto analytic = leaves[t].grad();
    for (auto c : coords) {
      auto data = shadow[t].mutable_data();
      const double orig = data[c];
      data[c] = orig + opt.eps;
      const double up = f(shadow).item();
      data[c] = orig - opt.eps;
      const double down = f(shadow).item();
      data[c] = orig;
      res.samples.push_back({t, c, analytic[c], (up - down) / (2.0 * opt.eps)});
    }
  }
  double scale = 0.0;
  for (const auto& s : res.samples) scale = std::max(scale, std::abs(s.numeric));
  const double floor = std::max(opt.floor, opt.rel_floor * scale);
  for (const auto& s : res.samples) {
    const double err = std::abs(s.analytic - s.numeric) / std::max({std::abs(s.analytic), std::abs(s.numeric), floor});
    res.per_param[s.tensor] = std::max(res.per_param[s.tensor], err);
    res.max_rel_err = std::max(res.max_rel_err, err);
    ++res.coords_checked;
  }
  return res;
}

}  // namespace mgn
