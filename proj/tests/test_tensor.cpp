#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "mgn/mgn.hpp"
#include "oracles.hpp"

using namespace mgn;

TEST(Tensor, RejectsMismatchedShape) {
  EXPECT_THROW(Tensor::from({2, 3}, std::vector<float>(5)), DimensionError);
  EXPECT_THROW(Tensor::zeros({2, 0}), DimensionError);
}

TEST(Tensor, GradHasDataShape) {
  auto w = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}).set_requires_grad();
  sum(mul(w, w)).backward();
  ASSERT_EQ(w.grad().size(), w.numel());
  for (std::size_t i = 0; i < w.numel(); ++i) EXPECT_FLOAT_EQ(w.grad()[i], 2.0f * w[i]);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs = differs || x != c.next_u64();
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(Rng(7).child("init").next_u64(), Rng(7).child("init").next_u64());
  EXPECT_NE(Rng(7).child("init").next_u64(), Rng(7).child("augment").next_u64());
}

TEST(Rng, FirstDrawIsPinned) {
  // SplitMix64 reference value for seed 0.
  EXPECT_EQ(Rng(0).next_u64(), 0xe220a8397b1dcdafULL);
}

TEST(Matmul, Identity) {
  auto i2 = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor::from({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(matmul(i2, m).vec(), m.vec());
}

TEST(Matmul, OrthogonalVectors) {
  auto r = matmul(Tensor::from({1, 2}, {1, 0}), Tensor::from({2, 1}, {0, 1}));
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_EQ(r[0], 0.0f);
}

TEST(Matmul, MatchesTripleLoop) {
  auto a = oracle::random({3, 4}, 1), b = oracle::random({4, 2}, 2);
  std::vector<double> ad(a.vec().begin(), a.vec().end()), bd(b.vec().begin(), b.vec().end());
  const auto ref = oracle::matmul(ad, bd, 3, 4, 2);
  const auto c = matmul(a, b);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-5);
}

TEST(Matmul, GradientsMatchTransposedProducts) {
  auto a = oracle::random({3, 4}, 3).set_requires_grad();
  auto b = oracle::random({4, 2}, 4).set_requires_grad();
  sum(matmul(a, b)).backward();
  // d/da sum(ab) = 1 b^T: row i of the gradient is the row sums of b.
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t p = 0; p < 4; ++p) EXPECT_NEAR(a.grad()[i * 4 + p], b[p * 2] + b[p * 2 + 1], 1e-6);
}

TEST(Elementwise, ScalarAndPow) {
  EXPECT_EQ(scale(Tensor::from({3}, {1, 2, 3}), 2.0).vec(), (std::vector<float>{2, 4, 6}));
  EXPECT_FLOAT_EQ(pow(Tensor::scalar(0.25f), Tensor::scalar(2.0f)).item(), 0.0625f);
}

TEST(Elementwise, ChannelBroadcast) {
  auto w = Tensor::from({2, 1, 1}, {2, 0});
  auto r = mul(Tensor::ones({2, 2, 2}), w);
  EXPECT_EQ(r.vec(), (std::vector<float>{2, 2, 2, 2, 0, 0, 0, 0}));
}

TEST(Elementwise, BroadcastGradientSumsOverExpandedAxes) {
  auto w = Tensor::from({2, 1, 1}, {2, 3}).set_requires_grad();
  auto x = oracle::random({2, 3, 3}, 5);
  sum(mul(x, w)).backward();
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < 9; ++i) s += x[c * 9 + i];
    EXPECT_NEAR(w.grad()[c], s, 1e-5);
  }
}

TEST(Elementwise, IncompatibleShapesThrow) {
  EXPECT_THROW(add(Tensor::ones({2, 3}), Tensor::ones({3, 2})), DimensionError);
}

TEST(Reduce, MeanAndSum) {
  EXPECT_FLOAT_EQ(mean(Tensor::from({4}, {1, 2, 3, 4})).item(), 2.5f);
  EXPECT_EQ(sum(Tensor::zeros({3, 3})).item(), 0.0f);
}

TEST(Reduce, MeanOfManySmallValuesAccumulatesIn64Bit) {
  EXPECT_NEAR(mean(Tensor::full({1000000}, 0.1f)).item(), 0.1, 1e-6);
}

TEST(Reduce, AxisMean) {
  auto x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(mean(x, {1}).vec(), (std::vector<float>{2, 5}));
  EXPECT_EQ(sum(x, {0}).vec(), (std::vector<float>{5, 7, 9}));
}

TEST(Softmax, SymmetricAndStable) {
  EXPECT_EQ(softmax(Tensor::from({1, 2}, {0, 0}), 1).vec(), (std::vector<float>{0.5f, 0.5f}));
  const auto s = softmax(Tensor::from({1, 2}, {1000, 0}), 1);
  EXPECT_EQ(s[0], 1.0f);
  EXPECT_EQ(s[1], 0.0f);
}

TEST(Softmax, MatchesHighPrecisionReference) {
  const auto s = softmax(Tensor::from({1, 3}, {1, 2, 3}), 1);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s[i], std::exp(i + 1.0) / z, 1e-6);
}

TEST(Activations, PointValues) {
  EXPECT_EQ(relu(Tensor::from({2}, {-1, 2})).vec(), (std::vector<float>{0, 2}));
  EXPECT_EQ(tanh(Tensor::scalar(0)).item(), 0.0f);
  EXPECT_EQ(sigmoid(Tensor::scalar(0)).item(), 0.5f);
  EXPECT_NEAR(softplus(Tensor::scalar(50)).item(), 50.0, 1e-6);
  EXPECT_TRUE(std::isfinite(softplus(Tensor::scalar(1000)).item()));
  EXPECT_EQ(sigmoid(Tensor::scalar(-1000)).item(), 0.0f);
}

TEST(Autograd, LinearGradientIsInput) {
  auto x = Tensor::from({3}, {0.5f, -2.0f, 4.0f});
  auto w = Tensor::zeros({3}).set_requires_grad();
  sum(mul(w, x)).backward();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(w.grad()[i], x[i]);
}

TEST(Autograd, ZeroGradientAtMinimum) {
  auto t = oracle::random({5}, 9);
  auto w = t.detach().set_requires_grad();
  mean(pow(sub(w, t), 2.0)).backward();
  for (float g : w.grad()) EXPECT_EQ(g, 0.0f);
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  // y = a*a + a, each path contributes once.
  auto a = Tensor::scalar(3.0f).set_requires_grad();
  auto b = mul(a, a);
  add(b, a).backward();
  EXPECT_FLOAT_EQ(a.grad()[0], 7.0f);
}

TEST(Autograd, SecondBackwardWithoutZeroGradThrows) {
  auto w = Tensor::from({2}, {1, 2}).set_requires_grad();
  sum(w).backward();
  EXPECT_THROW(sum(w).backward(), std::logic_error);
  w.zero_grad();
  EXPECT_NO_THROW(sum(w).backward());
}

TEST(Autograd, NoGradRecordsNothing) {
  auto w = Tensor::from({2}, {1, 2}).set_requires_grad();
  Tensor y;
  {
    NoGradGuard g;
    y = mul(w, w);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_STREQ(y.op(), "leaf");
}

TEST(Autograd, NonScalarBackwardThrows) {
  auto w = Tensor::from({2}, {1, 2}).set_requires_grad();
  EXPECT_THROW(mul(w, w).backward(), DimensionError);
}

TEST(Shape, NarrowConcatRoundTrip) {
  auto x = oracle::random({4, 3}, 11);
  auto parts = std::vector<Tensor>{narrow(x, 0, 0, 1), narrow(x, 0, 1, 3)};
  EXPECT_EQ(concat(parts, 0).vec(), x.vec());
  EXPECT_EQ(transpose(transpose(x)).vec(), x.vec());
  EXPECT_EQ(reshape(x, {12}).shape(), (Shape{12}));
}

TEST(GradCheck, SquaredSum) {
  auto f = [](const auto& p) { return sum(mul(p[0], p[0])); };
  GradCheckOptions o;
  o.eps = 1e-3;
  const auto r = grad_check(f, {oracle::random({6}, 1)}, o);
  EXPECT_LT(r.max_rel_err, 1e-4);
}

TEST(GradCheck, ConvReluMean) {
  auto x = oracle::random({2, 5, 5}, 2);
  auto f = [&](const auto& p) {
    using T = scalar_of_t<decltype(p)>;
    Conv2dParams<T> cp{p[0], p[1], 1, 1};
    return mean(relu(conv2d(x.template cast<T>(), cp)));
  };
  GradCheckOptions o;
  o.eps = 1e-3;
  o.coords_per_tensor = 20;
  const auto r = grad_check(f, {oracle::random({3, 2, 3, 3}, 3), oracle::random({3}, 4)}, o);
  EXPECT_LT(r.max_rel_err, 1e-3);
}

TEST(GradCheck, ConvInstanceNorm) {
  auto x = oracle::random({2, 6, 6}, 5);
  auto proj = oracle::random({3, 6, 6}, 6);
  auto f = [&](const auto& p) {
    using T = scalar_of_t<decltype(p)>;
    Conv2dParams<T> cp{p[0], p[1], 1, 1};
    InstanceNormParams<T> np{p[2], p[3], 1e-5};
    return sum(mul(instance_norm2d(conv2d(x.template cast<T>(), cp), np), proj.template cast<T>()));
  };
  GradCheckOptions o;
  o.eps = 1e-6;
  const auto r = grad_check(
      f, {oracle::random({3, 2, 3, 3}, 7), oracle::random({3}, 8), oracle::random({3}, 9, 0.5, 1.5), oracle::random({3}, 10)}, o);
  EXPECT_LT(r.max_rel_err, 1e-3);
}

TEST(GradCheck, MutualGuidanceStep) {
  const std::size_t c = 4;
  auto F = oracle::random({c, 5, 5}, 12);
  auto fg = oracle::random({c}, 13);
  auto proj = oracle::random({c, 5, 5}, 14);
  auto projg = oracle::random({c}, 15);
  std::vector<Tensor> params;
  for (int i = 0; i < 6; ++i) {
    params.push_back(oracle::random({c, c}, 100 + i));
    params.push_back(oracle::random({c}, 200 + i));
  }
  auto f = [&](const auto& p) {
    using T = scalar_of_t<decltype(p)>;
    StageParams<T> sp;
    sp.g2l = {{p[0], p[1]}, {p[2], p[3]}, {p[4], p[5]}};
    sp.l2g = {{p[6], p[7]}, {p[8], p[9]}, {p[10], p[11]}};
    auto g = mutual_guidance_step(fg.template cast<T>(), F.template cast<T>(), sp, FusionMode::mutual);
    return add(sum(mul(g.F_l, proj.template cast<T>())), sum(mul(g.f_g, projg.template cast<T>())));
  };
  GradCheckOptions o;
  o.eps = 1e-6;
  EXPECT_LT(grad_check(f, params, o).max_rel_err, 1e-3);
}

TEST(GradCheck, DetectsMissingGradientPath) {
  // The detached copy contributes to the value but not to the tape.
  auto f = [](const auto& p) {
    using T = scalar_of_t<decltype(p)>;
    return sum(add(p[0], clamp_detached(p[0], T(-10), T(10))));
  };
  GradCheckOptions o;
  o.eps = 1e-3;
  EXPECT_NEAR(grad_check(f, {oracle::random({3}, 1)}, o).max_rel_err, 0.5, 1e-6);
}

TEST(FlopCounter, CountsOnlyInsideScope) {
  FlopCounter c;
  auto a = oracle::random({3, 4}, 1), b = oracle::random({4, 2}, 2);
  matmul(a, b);
  {
    FlopCounterScope s(c);
    matmul(a, b);
  }
  matmul(a, b);
  EXPECT_EQ(c.by_op.at("matmul"), 2u * 3 * 4 * 2);
}
