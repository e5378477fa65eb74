#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "mgn/image.hpp"
#include "mgn/io.hpp"
#include "mgn/rng.hpp"

namespace mgn {

struct SamplePair {
  Image x;     // degraded input
  Image y_gt;  // clean target
};

struct DegradationRanges {
  double exposure_lo = 0.3, exposure_hi = 0.8;
  double gamma_lo = 1.5, gamma_hi = 3.0;
  double cast_lo = 0.85, cast_hi = 1.0;
  double noise_lo = 0.0, noise_hi = 0.02;

  /// s = 1, gamma = 1, cast = 1, sigma = 0: the input equals the target.
  static DegradationRanges identity() { return {1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0}; }
};

namespace detail {

/// Fraction of the pixel covered by a shape, from a signed distance in pixels.
inline double coverage(double signed_dist) { return std::clamp(0.5 - signed_dist, 0.0, 1.0); }

inline std::vector<double> procedural_scene(std::size_t n, Rng& rng) {
  const std::size_t plane = n * n;
  std::vector<double> img(3 * plane);
  const double N = static_cast<double>(n);

  // Smooth gradient between two colors along a random direction.
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.1, 0.9);
    c1[c] = rng.uniform(0.1, 0.9);
  }
  const double angle = rng.uniform(0.0, 2.0 * M_PI);
  const double dx = std::cos(angle), dy = std::sin(angle);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double u = ((static_cast<double>(x) / N - 0.5) * dx + (static_cast<double>(y) / N - 0.5) * dy) / std::sqrt(2.0) + 0.5;
      for (int c = 0; c < 3; ++c) img[static_cast<std::size_t>(c) * plane + y * n + x] = c0[c] + (c1[c] - c0[c]) * u;
    }

  // Rectangles and disks, alpha-blended with anti-aliased edges.
  const auto shapes = 3 + rng.uniform_int(4);
  for (std::uint64_t s = 0; s < shapes; ++s) {
    const bool disk = rng.coin();
    double col[3];
    for (auto& v : col) v = rng.uniform(0.0, 1.0);
    const double alpha = rng.uniform(0.5, 1.0);
    const double cx = rng.uniform(0.0, N), cy = rng.uniform(0.0, N);
    const double rx = rng.uniform(0.08 * N, 0.3 * N), ry = disk ? rx : rng.uniform(0.08 * N, 0.3 * N);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double px = static_cast<double>(x) + 0.5 - cx, py = static_cast<double>(y) + 0.5 - cy;
        const double sd = disk ? std::hypot(px, py) - rx : std::max(std::abs(px) - rx, std::abs(py) - ry);
        const double a = alpha * coverage(sd);
        if (a == 0.0) continue;
        for (int c = 0; c < 3; ++c) {
          auto& v = img[static_cast<std::size_t>(c) * plane + y * n + x];
          v = (1.0 - a) * v + a * col[c];
        }
      }
  }

  // Bilinear value noise on a coarse lattice.
  constexpr std::size_t kCells = 8;
  std::vector<double> lattice((kCells + 1) * (kCells + 1) * 3);
  for (auto& v : lattice) v = rng.uniform(-0.03, 0.03);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double gx = static_cast<double>(x) / N * kCells, gy = static_cast<double>(y) / N * kCells;
      const auto ix = static_cast<std::size_t>(gx), iy = static_cast<std::size_t>(gy);
      const double fx = gx - static_cast<double>(ix), fy = gy - static_cast<double>(iy);
      for (std::size_t c = 0; c < 3; ++c) {
        auto at = [&](std::size_t a, std::size_t b) { return lattice[(b * (kCells + 1) + a) * 3 + c]; };
        const double v = (1 - fy) * ((1 - fx) * at(ix, iy) + fx * at(ix + 1, iy)) +
                         fy * ((1 - fx) * at(ix, iy + 1) + fx * at(ix + 1, iy + 1));
        img[c * plane + y * n + x] += v;
      }
    }

  for (auto& v : img) v = std::clamp(v, 0.05, 0.95);
  return img;
}

}  // namespace detail

/// Procedural clean targets and darkened, gamma-bent, color-cast, noisy inputs.
inline std::vector<SamplePair> synth_dataset(std::size_t n, std::size_t size, const Rng& stream,
                                             const DegradationRanges& deg = {}) {
  if (size < 8 || size % 4 != 0)
    throw DimensionError("synth_dataset: size must be at least 8 and divisible by 4, got " + std::to_string(size));
  std::vector<SamplePair> out;
  out.reserve(n);
  const std::size_t plane = size * size;
  for (std::size_t i = 0; i < n; ++i) {
    Rng scene_rng = stream.child(i).child("scene");
    Rng deg_rng = stream.child(i).child("degrade");
    const auto clean = detail::procedural_scene(size, scene_rng);

    const double s = deg_rng.uniform(deg.exposure_lo, deg.exposure_hi);
    double gamma[3], cast[3];
    for (auto& g : gamma) g = deg_rng.uniform(deg.gamma_lo, deg.gamma_hi);
    for (auto& c : cast) c = deg_rng.uniform(deg.cast_lo, deg.cast_hi);
    const double sigma = deg_rng.uniform(deg.noise_lo, deg.noise_hi);

    std::vector<float> x(3 * plane), y(3 * plane);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = clean[c * plane + p];
        y[c * plane + p] = static_cast<float>(v);
        double d = cast[c] * std::pow(s * v, gamma[c]);
        if (sigma > 0.0) d += deg_rng.normal(0.0, sigma);
        x[c * plane + p] = static_cast<float>(std::clamp(d, 0.0, 1.0));
      }
    out.push_back({Tensor::from({3, size, size}, std::move(x)), Tensor::from({3, size, size}, std::move(y))});
  }
  return out;
}

inline std::vector<SamplePair> synth_dataset(std::size_t n, std::size_t size, std::uint64_t seed,
                                             const DegradationRanges& deg = {}) {
  return synth_dataset(n, size, Rng(seed).child("synth"), deg);
}

/// Same random dihedral transform on both images.
inline SamplePair augment(const SamplePair& p, Rng& rng) {
  const D4 t = D4::draw(rng);
  return {apply_d4(p.x, t), apply_d4(p.y_gt, t)};
}

/// Random crop of the same window from both images.
inline SamplePair random_crop(const SamplePair& p, std::size_t size, Rng& rng) {
  const std::size_t h = p.x.dim(1), w = p.x.dim(2);
  if (size > h || size > w) throw DimensionError("random_crop: crop larger than image");
  const auto top = static_cast<std::size_t>(rng.uniform_int(h - size + 1));
  const auto left = static_cast<std::size_t>(rng.uniform_int(w - size + 1));
  return {crop(p.x, top, left, size, size), crop(p.y_gt, top, left, size, size)};
}

struct NamedPair {
  std::string name;
  SamplePair pair;
};

struct PairedFolder {
  std::vector<NamedPair> pairs;
  std::vector<std::string> unmatched;  // present on one side only
};

/// Loads `<dir>/x/*.ppm` against `<dir>/gt/*.ppm` by file name.
inline PairedFolder load_paired_folder(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path xdir = fs::path(dir) / "x", gdir = fs::path(dir) / "gt";
  if (!fs::is_directory(xdir) || !fs::is_directory(gdir))
    throw FormatError("paired folder '" + dir + "' must contain x/ and gt/ subdirectories");
  auto list = [](const fs::path& d) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(d))
      if (e.is_regular_file() && e.path().extension() == ".ppm") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
  };
  const auto xs = list(xdir), gs = list(gdir);
  PairedFolder out;
  std::set_symmetric_difference(xs.begin(), xs.end(), gs.begin(), gs.end(), std::back_inserter(out.unmatched));
  std::vector<std::string> common;
  std::set_intersection(xs.begin(), xs.end(), gs.begin(), gs.end(), std::back_inserter(common));
  for (const auto& n : common) {
    SamplePair p{read_ppm((xdir / n).string()), read_ppm((gdir / n).string())};
    if (p.x.shape() != p.y_gt.shape())
      throw DimensionError("pair '" + n + "': input " + shape_str(p.x.shape()) + " vs target " + shape_str(p.y_gt.shape()));
    out.pairs.push_back({n, std::move(p)});
  }
  return out;
}

}  // namespace mgn
