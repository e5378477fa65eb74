#include <gtest/gtest.h>

#include <cmath>

#include "mgn/mgn.hpp"
#include "oracles.hpp"

using namespace mgn;

TEST(Psnr, UniformOffsetIsTwentyDb) {
  auto a = oracle::random({3, 16, 16}, 1, 0, 0.9);
  EXPECT_NEAR(psnr(a, add_scalar(a, 0.1)), 20.0, 1e-5);
}

TEST(Psnr, IdenticalIsCapped) {
  auto a = oracle::random({3, 8, 8}, 2);
  EXPECT_EQ(psnr(a, a), 100.0);
}

TEST(Psnr, MatchesReference) {
  auto a = oracle::random({3, 16, 16}, 3, 0, 1), b = oracle::random({3, 16, 16}, 4, 0, 1);
  long double acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const long double d = static_cast<long double>(a[i]) - b[i];
    acc += d * d;
  }
  const double ref = static_cast<double>(10.0L * std::log10(1.0L / (acc / a.numel())));
  EXPECT_NEAR(psnr(a, b), ref, 1e-6);
  EXPECT_THROW(psnr(a, Tensor::ones({3, 16, 15})), DimensionError);
}

TEST(Ssim, IdenticalIsOne) {
  auto a = oracle::random({3, 20, 20}, 5, 0, 1);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
}

TEST(Ssim, Symmetric) {
  auto a = oracle::random({3, 24, 20}, 6, 0, 1), b = oracle::random({3, 24, 20}, 7, 0, 1);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-9);
  EXPECT_LT(ssim(a, b), 0.5);
}

TEST(Ssim, ConstantImagesReduceToLuminanceTerm) {
  // Zero variance: SSIM = (2 mu_a mu_b + C1) / (mu_a^2 + mu_b^2 + C1).
  const double c1 = 1e-4;
  const double expect = (2 * 0.2 * 0.8 + c1) / (0.2 * 0.2 + 0.8 * 0.8 + c1);
  EXPECT_NEAR(ssim(Tensor::full({1, 16, 16}, 0.2f), Tensor::full({1, 16, 16}, 0.8f)), expect, 1e-6);
  EXPECT_NEAR(expect, 0.4707, 1e-4);
}

TEST(Ssim, MatchesDirectWindowSum) {
  // Unseparated 11x11 window at every valid position.
  auto a = oracle::random({1, 13, 12}, 8, 0, 1), b = oracle::random({1, 13, 12}, 9, 0, 1);
  double g1[11], tot = 0.0;
  for (int i = 0; i < 11; ++i) tot += g1[i] = std::exp(-(i - 5.0) * (i - 5.0) / (2 * 1.5 * 1.5));
  double sum = 0.0;
  int n = 0;
  for (int y = 0; y + 11 <= 13; ++y)
    for (int x = 0; x + 11 <= 12; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int u = 0; u < 11; ++u)
        for (int v = 0; v < 11; ++v) {
          const double w = g1[u] * g1[v] / (tot * tot);
          const double p = a[(y + u) * 12 + x + v], q = b[(y + u) * 12 + x + v];
          ma += w * p;
          mb += w * q;
          saa += w * p * p;
          sbb += w * q * q;
          sab += w * p * q;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      sum += ((2 * ma * mb + 1e-4) * (2 * cov + 9e-4)) / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
      ++n;
    }
  EXPECT_NEAR(ssim(a, b), sum / n, 1e-9);
}

TEST(Ssim, RejectsImagesSmallerThanWindow) {
  EXPECT_THROW(ssim(Tensor::ones({3, 10, 20}), Tensor::ones({3, 10, 20})), DimensionError);
}

TEST(ErrorMap, IdenticalIsZero) {
  auto a = oracle::random({3, 5, 5}, 10);
  const auto m = l2_error_map(a, a);
  for (float v : m.vec()) EXPECT_EQ(v, 0.0f);
}

TEST(ErrorMap, SinglePixelDifference) {
  auto a = oracle::random({3, 4, 4}, 11);
  std::vector<float> bv = a.vec();
  bv[16 + 5] += 0.3f;
  const auto m = l2_error_map(a, Tensor::from(a.shape(), bv));
  EXPECT_EQ(m.shape(), (Shape{1, 4, 4}));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(m[i], i == 5 ? 1.0f : 0.0f);
}

TEST(ErrorMap, MatchesDirectComputation) {
  auto a = oracle::random({3, 6, 5}, 12), b = oracle::random({3, 6, 5}, 13);
  std::vector<double> d(30);
  double peak = 0;
  for (std::size_t p = 0; p < 30; ++p) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += std::pow(static_cast<double>(a[c * 30 + p]) - b[c * 30 + p], 2);
    d[p] = std::sqrt(s);
    peak = std::max(peak, d[p]);
  }
  const auto m = l2_error_map(a, b);
  for (std::size_t p = 0; p < 30; ++p) EXPECT_NEAR(m[p], d[p] / peak, 1e-6);
}

TEST(Evaluate, ZeroResidualModelScoresInputs) {
  auto m = build_model(oracle::small_model(), Rng(0));
  for (const char* n : {"head.residual.weight", "head.residual.bias"})
    for (auto& v : m.params.get(n).mutable_data()) v = 0.0f;
  const auto pairs = synth_dataset(3, 16, 1);
  const auto ev = evaluate(m, pairs);
  ASSERT_EQ(ev.psnr.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(ev.psnr[i], psnr(pairs[i].x, pairs[i].y_gt), 1e-9);
  EXPECT_NEAR(ev.mean_psnr, ev.mean_input_psnr, 1e-9);
}
