#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "mgn/rng.hpp"
#include "mgn/tensor.hpp"

namespace mgn {

/// RGB images are float tensors [3, H, W] with values in [0, 1].
using Image = Tensor;

namespace detail {

inline void require_image(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw DimensionError(std::string(what) + ": expected [C,H,W], got " + shape_str(t.shape()));
}

}  // namespace detail

/// Element of the dihedral group on squares, applied as
/// rot90^rot90 after vflip after hflip.
struct D4 {
  bool hflip = false;
  bool vflip = false;
  bool rot90 = false;  // counter-clockwise quarter turn

  static D4 from_index(int i) { return {(i & 1) != 0, (i & 2) != 0, (i & 4) != 0}; }
  static D4 draw(Rng& rng) {
    D4 t;
    t.hflip = rng.coin();
    t.vflip = rng.coin();
    t.rot90 = rng.coin();
    return t;
  }
};

inline Image apply_d4(const Image& img, D4 t) {
  detail::require_image(img, "apply_d4");
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  // A quarter turn swaps the extents.
  const std::size_t oh = t.rot90 ? w : h, ow = t.rot90 ? h : w;
  const auto src = img.data();
  std::vector<float> out(src.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t sy = y, sx = x;
        // Invert the composition: undo the turn, then the flips.
        if (t.rot90) {
          sy = x;
          sx = w - 1 - y;
        }
        if (t.vflip) sy = h - 1 - sy;
        if (t.hflip) sx = w - 1 - sx;
        out[(ch * oh + y) * ow + x] = src[(ch * h + sy) * w + sx];
      }
  return Tensor::from({c, oh, ow}, std::move(out));
}

/// Mirror padding (edge pixel not repeated) on the bottom and right.
inline Image reflect_pad(const Image& img, std::size_t pad_h, std::size_t pad_w) {
  detail::require_image(img, "reflect_pad");
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if ((pad_h > 0 && pad_h >= h) || (pad_w > 0 && pad_w >= w))
    throw DimensionError("reflect_pad: padding exceeds image extent " + shape_str(img.shape()));
  const std::size_t H = h + pad_h, W = w + pad_w;
  const auto src = img.data();
  std::vector<float> out(c * H * W);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < H; ++y) {
      const std::size_t sy = y < h ? y : 2 * (h - 1) - y;
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t sx = x < w ? x : 2 * (w - 1) - x;
        out[(ch * H + y) * W + x] = src[(ch * h + sy) * w + sx];
      }
    }
  return Tensor::from({c, H, W}, std::move(out));
}

inline Image crop(const Image& img, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  detail::require_image(img, "crop");
  if (top + h > img.dim(1) || left + w > img.dim(2))
    throw DimensionError("crop: window exceeds image " + shape_str(img.shape()));
  const std::size_t c = img.dim(0), H = img.dim(1), W = img.dim(2);
  const auto src = img.data();
  std::vector<float> out(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((ch * H + top + y) * W + left), w,
                  out.begin() + static_cast<std::ptrdiff_t>((ch * h + y) * w));
  return Tensor::from({c, h, w}, std::move(out));
}

inline Image clamp01(const Image& img) {
  std::vector<float> v = img.vec();
  for (auto& x : v) x = std::clamp(x, 0.0f, 1.0f);
  return Tensor::from(img.shape(), std::move(v));
}

}  // namespace mgn
