#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "deepconsensus/autodiff/ops.h"
#include "deepconsensus/nn/layers.h"
#include "gradcheck.h"

using namespace dc;
using namespace dc::nn;
using dc::testing::check_gradients;
using dc::testing::random_tensor;

namespace {

// Direct same-padded cross-correlation.
Tensord naive_conv(const Tensord& x, const Tensord& w, const Tensord& b, std::size_t stride) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = w.dim(0), k = w.dim(2);
  const long pad = static_cast<long>((k - 1) / 2);
  const std::size_t Ho = (H - 1) / stride + 1, Wo = (W - 1) / stride + 1;
  Tensord out({N, F, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double s = b[f];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long r = static_cast<long>(i * stride + u) - pad;
                const long q = static_cast<long>(j * stride + v) - pad;
                if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
                s += w[((f * C + c) * k + u) * k + v] * x[((n * C + c) * H + r) * W + q];
              }
          out[((n * F + f) * Ho + i) * Wo + j] = s;
        }
  return out;
}

}  // namespace

TEST(Conv2d, OneByOneUnitKernelIsIdentity) {
  std::mt19937_64 rng(1);
  auto x = random_tensor({2, 1, 5, 5}, rng, 1.0, false);
  auto y = conv2d(x, Tensord::ones({1, 1, 1, 1}), Tensord::zeros({1}));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv2d, OnesKernelSpreadsHotPixel) {
  Tensorf x({1, 1, 5, 5});
  x[2 * 5 + 2] = 1;
  auto y = conv2d(x, Tensorf::ones({1, 1, 3, 3}), Tensorf::zeros({1}));
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      const bool inside = r >= 1 && r <= 3 && c >= 1 && c <= 3;
      EXPECT_FLOAT_EQ(y[r * 5 + c], inside ? 1.f : 0.f);
    }
}

TEST(Conv2d, MatchesNaiveLoops) {
  std::mt19937_64 rng(2);
  auto xd = random_tensor({2, 3, 8, 8}, rng, 1.0, false);
  auto wd = random_tensor({4, 3, 3, 3}, rng, 1.0, false);
  auto bd = random_tensor({4}, rng, 1.0, false);
  auto ref = naive_conv(xd, wd, bd, 1);
  Tensorf x(xd.shape()), w(wd.shape()), b(bd.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(xd[i]);
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<float>(wd[i]);
  for (std::size_t i = 0; i < b.numel(); ++i) b[i] = static_cast<float>(bd[i]);
  auto y = conv2d(x, w, b);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-5);
}

TEST(Conv2d, StridedMatchesNaiveLoops) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 3, 8, 8}, rng, 1.0, false);
  for (std::size_t k : {1, 3}) {
    auto w = random_tensor({5, 3, k, k}, rng, 1.0, false);
    auto b = random_tensor({5}, rng, 1.0, false);
    auto ref = naive_conv(x, w, b, 2);
    auto y = conv2d(x, w, b, 2);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, RejectsChannelMismatchAndEvenKernels) {
  Tensorf x({1, 2, 4, 4});
  EXPECT_THROW(conv2d(x, Tensorf({3, 1, 3, 3}), Tensorf({3})), ShapeError);
  EXPECT_THROW(conv2d(x, Tensorf({3, 2, 2, 2}), Tensorf({3})), ShapeError);
}

TEST(Conv2d, FiniteDifferences) {
  std::mt19937_64 rng(4);
  for (std::size_t stride : {1, 2}) {
    auto x = random_tensor({2, 2, 6, 6}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng);
    auto b = random_tensor({3}, rng);
    auto probe = random_tensor({2, 3, (6 - 1) / stride + 1, (6 - 1) / stride + 1}, rng, 1.0, false);
    auto r = check_gradients([&] { return sum(conv2d(x, w, b, stride) * probe); }, {x, w, b});
    EXPECT_LT(r.max_error, 1e-6) << "stride " << stride;
  }
}

TEST(Maxpool, SmallWindow) {
  auto y = maxpool2d(Tensorf::from({1, 1, 2, 2}, {1, 2, 3, 4}), 2);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_FLOAT_EQ(y[0], 4);
}

TEST(Maxpool, TiesRouteGradientToFirstElement) {
  Tensord x(Shape{1, 1, 2, 2}, 3.0, true);
  auto y = maxpool2d(x, 2);
  EXPECT_DOUBLE_EQ(y[0], 3.0);
  backward(sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 0.0);
}

TEST(Maxpool, MatchesNaiveWindowMax) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 3, 4, 4}, rng, 1.0, false);
  auto y = maxpool2d(x, 2);
  for (std::size_t p = 0; p < 6; ++p)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t u = 0; u < 2; ++u)
          for (std::size_t v = 0; v < 2; ++v) m = std::max(m, x[p * 16 + (2 * i + u) * 4 + 2 * j + v]);
        EXPECT_EQ(y[p * 4 + i * 2 + j], m);
      }
}

TEST(Maxpool, RejectsIndivisibleInput) {
  EXPECT_THROW(maxpool2d(Tensorf({1, 1, 5, 4}), 2), ShapeError);
}

TEST(Maxpool, FiniteDifferences) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({2, 2, 4, 4}, rng);
  auto probe = random_tensor({2, 2, 2, 2}, rng, 1.0, false);
  auto r = check_gradients([&] { return sum(maxpool2d(x, 2) * probe); }, {x});
  EXPECT_LT(r.max_error, 1e-6);
}

TEST(BatchNorm, NormalisesPerChannel) {
  std::mt19937_64 rng(7);
  auto x = random_tensor({4, 3, 5, 5}, rng, 3.0, false);
  for (auto& v : x.data()) v += 2.0;
  BatchNormState<double> bn(3);
  auto y = batchnorm(x, bn);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) {
        const double v = y[(n * 3 + c) * 25 + i];
        s += v;
        s2 += v * v;
      }
    EXPECT_NEAR(s / 100, 0.0, 1e-9);
    EXPECT_NEAR(s2 / 100, 1.0, 1e-3);
  }
}

TEST(BatchNorm, AffineParameters) {
  std::mt19937_64 rng(8);
  auto x = random_tensor({8, 2, 3, 3}, rng, 1.0, false);
  BatchNormState<double> bn(2);
  for (auto& g : bn.gamma.data()) g = 2.0;
  for (auto& b : bn.beta.data()) b = 3.0;
  auto y = batchnorm(x, bn);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t i = 0; i < 9; ++i) {
        const double v = y[(n * 2 + c) * 9 + i];
        s += v;
        s2 += v * v;
      }
    const double mean = s / 72;
    EXPECT_NEAR(mean, 3.0, 1e-9);
    EXPECT_NEAR(std::sqrt(s2 / 72 - mean * mean), 2.0, 1e-3);
  }
}

TEST(BatchNorm, EvalModeUsesRunningStatistics) {
  BatchNormState<double> bn(2);
  bn.training = false;
  bn.running_mean[0] = 1.0;
  bn.running_mean[1] = -2.0;
  bn.running_var[0] = 4.0;
  bn.running_var[1] = 0.25;
  bn.gamma[0] = 1.5;
  bn.beta[1] = 0.5;
  auto x = Tensord::from({1, 2, 1, 2}, {3.0, -1.0, 0.0, 1.0});
  auto y = batchnorm(x, bn);
  const double eps = 1e-5;
  EXPECT_NEAR(y[0], (3.0 - 1.0) / std::sqrt(4.0 + eps) * 1.5, 1e-12);
  EXPECT_NEAR(y[1], (-1.0 - 1.0) / std::sqrt(4.0 + eps) * 1.5, 1e-12);
  EXPECT_NEAR(y[2], (0.0 + 2.0) / std::sqrt(0.25 + eps) + 0.5, 1e-12);
  EXPECT_NEAR(y[3], (1.0 + 2.0) / std::sqrt(0.25 + eps) + 0.5, 1e-12);
}

TEST(BatchNorm, RunningStatisticsOnlyMoveInTraining) {
  std::mt19937_64 rng(9);
  auto x = random_tensor({4, 1, 2, 2}, rng, 1.0, false);
  BatchNormState<double> bn(1);
  batchnorm(x, bn);
  double mean = 0;
  for (double v : x.data()) mean += v;
  mean /= 16;
  double var = 0;
  for (double v : x.data()) var += (v - mean) * (v - mean);
  var /= 15;
  EXPECT_NEAR(bn.running_mean[0], 0.1 * mean, 1e-12);
  EXPECT_NEAR(bn.running_var[0], 0.9 + 0.1 * var, 1e-12);
  bn.training = false;
  const double before = bn.running_mean[0];
  batchnorm(x, bn);
  EXPECT_EQ(bn.running_mean[0], before);
}

TEST(BatchNorm, SingleElementTrainingBatchIsAnError) {
  BatchNormState<float> bn(2);
  EXPECT_THROW(batchnorm(Tensorf({1, 2, 1, 1}), bn), ShapeError);
}

TEST(BatchNorm, FiniteDifferencesBothModes) {
  std::mt19937_64 rng(10);
  for (bool training : {true, false}) {
    auto x = random_tensor({3, 2, 3, 3}, rng);
    BatchNormState<double> bn(2);
    bn.training = training;
    bn.running_var[0] = 1.7;
    bn.running_mean[1] = 0.3;
    for (auto& g : bn.gamma.data()) g = 1.3;
    auto probe = random_tensor({3, 2, 3, 3}, rng, 1.0, false);
    auto r = check_gradients([&] { return sum(batchnorm(x, bn) * probe); }, {x, bn.gamma, bn.beta});
    EXPECT_LT(r.max_error, 1e-6) << (training ? "train" : "eval");
  }
}

TEST(LeakyRelu, Values) {
  auto y = leaky_relu(Tensorf::from({3}, {2.0f, -1.0f, 0.0f}));
  EXPECT_FLOAT_EQ(y[0], 2.0f);
  EXPECT_FLOAT_EQ(y[1], -0.01f);
  EXPECT_FLOAT_EQ(y[2], 0.0f);
}

TEST(LeakyRelu, SlopeAtZeroIsAlpha) {
  Tensord x(Shape{3}, std::vector<double>{0.0, 1.0, -1.0}, true);
  backward(sum(leaky_relu(x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.01);
  EXPECT_DOUBLE_EQ(x.grad()[1], 1.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 0.01);
}

TEST(Linear, FiniteDifferences) {
  std::mt19937_64 rng(11);
  auto x = random_tensor({4, 5}, rng);
  auto w = random_tensor({3, 5}, rng);
  auto b = random_tensor({3}, rng);
  auto probe = random_tensor({4, 3}, rng, 1.0, false);
  auto r = check_gradients([&] { return sum(leaky_relu(linear(x, w, b)) * probe); }, {x, w, b});
  EXPECT_LT(r.max_error, 1e-6);
}

TEST(CrossEntropy, TwoEqualLogits) {
  const int t[] = {0};
  auto l = softmax_cross_entropy(Tensorf::from({1, 2}, {0, 0}), t);
  EXPECT_NEAR(l.item(), std::log(2.0), 1e-6);
}

TEST(CrossEntropy, LargeLogitsStayFinite) {
  const int t[] = {0};
  auto l = softmax_cross_entropy(Tensorf::from({1, 2}, {1000, 0}), t);
  EXPECT_TRUE(std::isfinite(l.item()));
  EXPECT_NEAR(l.item(), 0.0, 1e-6);
}

TEST(CrossEntropy, OutOfRangeTarget) {
  const int t[] = {2};
  EXPECT_THROW(softmax_cross_entropy(Tensorf::from({1, 2}, {0, 0}), t), std::out_of_range);
}

TEST(CrossEntropy, FiniteDifferences) {
  std::mt19937_64 rng(12);
  auto logits = random_tensor({4, 10}, rng, 2.0);
  const int t[] = {3, 0, 9, 3};
  auto r = check_gradients([&] { return softmax_cross_entropy(logits, t); }, {logits});
  EXPECT_LT(r.max_error, 1e-6);
}

TEST(Shapes, FlattenSpatialSumAndSliceGradients) {
  std::mt19937_64 rng(13);
  auto x = random_tensor({2, 3, 2, 2}, rng);
  auto p1 = random_tensor({2, 12}, rng, 1.0, false);
  auto p2 = random_tensor({2, 2}, rng, 1.0, false);
  auto r = check_gradients(
      [&] { return sum(flatten(x) * p1) + sum(slice_columns(spatial_sum(x), 2) * p2); }, {x});
  EXPECT_LT(r.max_error, 1e-6);
}
