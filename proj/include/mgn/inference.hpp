#pragma once

#include <vector>

#include "mgn/data.hpp"
#include "mgn/image.hpp"
#include "mgn/metrics.hpp"
#include "mgn/model.hpp"

namespace mgn {

/// Forward pass on an arbitrary-size image: reflect-pads to a multiple of 4,
/// crops back and clamps to [0, 1].
inline Image enhance(const Model<float>& m, const Image& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw DimensionError("enhance: expected [3,H,W], got " + shape_str(img.shape()));
  const std::size_t h = img.dim(1), w = img.dim(2);
  if (h < 8 || w < 8)
    throw DimensionError("enhance: image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than 8x8");
  NoGradGuard no_grad;
  const std::size_t ph = (4 - h % 4) % 4, pw = (4 - w % 4) % 4;
  const Image padded = (ph || pw) ? reflect_pad(img, ph, pw) : img;
  const auto out = forward(m, padded);
  const Image y = (ph || pw) ? crop(out.y, 0, 0, h, w) : out.y;
  return clamp01(y);
}

struct EvalSummary {
  std::vector<double> psnr, ssim;
  double mean_psnr = 0.0, mean_ssim = 0.0;
  double mean_input_psnr = 0.0;  // PSNR(x, y_gt) baseline
};

inline EvalSummary evaluate(const Model<float>& m, const std::vector<SamplePair>& pairs) {
  EvalSummary s;
  for (const auto& p : pairs) {
    const Image y = enhance(m, p.x);
    s.psnr.push_back(psnr(y, p.y_gt));
    s.ssim.push_back(ssim(y, p.y_gt));
    s.mean_input_psnr += psnr(p.x, p.y_gt);
  }
  const double n = static_cast<double>(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    s.mean_psnr += s.psnr[i];
    s.mean_ssim += s.ssim[i];
  }
  if (!pairs.empty()) {
    s.mean_psnr /= n;
    s.mean_ssim /= n;
    s.mean_input_psnr /= n;
  }
  return s;
}

}  // namespace mgn
