#include <gtest/gtest.h>

#include "dmf/losses.hpp"
#include "dmf/rng.hpp"

using namespace dmf;

namespace {

const LossConfig kMse{LossKind::MSE};
const LossConfig kAdaptive{LossKind::Adaptive, 0.75, 1e-3};
const LossConfig kCauchy{LossKind::Cauchy, 0.75, 0.3};

double row_e2(const Tensor& pred, const Tensor& target, std::size_t b) {
  double acc = 0;
  for (std::size_t j = 0; j < pred.cols(); ++j) acc += std::pow(pred.at(b, j) - target.at(b, j), 2);
  return acc / static_cast<double>(pred.cols());
}

}  // namespace

TEST(Losses, ZeroResidualIsZero) {
  Rng rng(1);
  const Tensor x = rng.normal_tensor({8, 3});
  for (const auto& cfg : {kMse, kAdaptive, kCauchy}) {
    const LossResult r = loss(x, x, cfg);
    EXPECT_EQ(r.value, 0.0);
    EXPECT_EQ(r.grad, Tensor::zeros({8, 3}));
  }
}

TEST(Losses, AdaptiveWeightAtZero) {
  EXPECT_NEAR(adaptive_weight(0.0, 0.75, 1e-3), 177.82794100389228, 1e-9);
  EXPECT_NEAR(std::pow(1e-3L, -0.75L), 177.82794100389228L, 1e-9L);
}

TEST(Losses, CauchySlope) {
  EXPECT_DOUBLE_EQ(cauchy_slope(0.09, 0.3), 0.5);
  EXPECT_DOUBLE_EQ(cauchy_slope(0.0, 0.3), 1.0);
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const double e2 = rng.uniform(0, 10), h = 1e-7;
    const double fd = (cauchy_loss(e2 + h, 0.3) - cauchy_loss(e2 - h + 2 * h * (e2 < h), 0.3)) / (2 * h);
    if (e2 > h) EXPECT_NEAR(cauchy_slope(e2, 0.3), fd, 1e-6);
    EXPECT_GT(cauchy_slope(e2, 0.3), 0.0);
    EXPECT_LE(cauchy_slope(e2, 0.3), 1.0);
  }
}

TEST(Losses, PerSampleDefinitions) {
  Rng rng(3);
  const Tensor p = rng.normal_tensor({6, 4}), t = rng.normal_tensor({6, 4});
  const LossResult mse = loss(p, t, kMse), ad = loss(p, t, kAdaptive), ca = loss(p, t, kCauchy);
  double mean_mse = 0;
  for (std::size_t b = 0; b < 6; ++b) {
    const double e2 = row_e2(p, t, b);
    EXPECT_NEAR(mse.per_sample[b], e2, 1e-14);
    EXPECT_NEAR(ad.per_sample[b], std::pow(e2 + 1e-3, -0.75) * e2, 1e-12);
    EXPECT_NEAR(ca.per_sample[b], 0.09 * std::log(1 + e2 / 0.09), 1e-12);
    mean_mse += e2 / 6;
  }
  EXPECT_NEAR(mse.value, mean_mse, 1e-14);
}

TEST(Losses, NonNegativeAndZeroOnlyAtEquality) {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const Tensor p = rng.normal_tensor({4, 2}), t = rng.normal_tensor({4, 2});
    for (const auto& cfg : {kMse, kAdaptive, kCauchy}) {
      const LossResult r = loss(p, t, cfg);
      EXPECT_GT(r.value, 0.0);
      for (double v : r.per_sample.data()) EXPECT_GE(v, 0.0);
    }
  }
}

TEST(Losses, CauchyBelowMse) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const Tensor p = rng.normal_tensor({4, 2}, 0.0, rng.uniform(0.01, 5)), t = rng.normal_tensor({4, 2});
    const double c = rng.uniform(0.01, 2);
    const LossResult ca = loss(p, t, {LossKind::Cauchy, 0.75, c}), mse = loss(p, t, kMse);
    for (std::size_t b = 0; b < 4; ++b) EXPECT_LE(ca.per_sample[b], mse.per_sample[b] * (1 + 1e-12));
  }
}

TEST(Losses, MonotoneInResidual) {
  const Tensor target = Tensor::zeros({1, 2});
  for (const auto& cfg : {kMse, kAdaptive, kCauchy}) {
    double prev = -1;
    for (double s = 0.0; s < 5.0; s += 0.01) {
      const double v = loss(Tensor::matrix({{s, -s}}), target, cfg).per_sample[0];
      EXPECT_GT(v, prev);
      prev = v;
    }
  }
}

TEST(Losses, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  const Tensor p = rng.normal_tensor({5, 3}), t = rng.normal_tensor({5, 3});
  const double h = 1e-6;
  for (const auto& cfg : {kMse, kCauchy}) {
    const LossResult r = loss(p, t, cfg);
    for (std::size_t i = 0; i < p.size(); ++i) {
      Tensor a = p, b = p;
      a[i] += h;
      b[i] -= h;
      const double fd = (loss(a, t, cfg).value - loss(b, t, cfg).value) / (2 * h);
      EXPECT_LT(std::abs(r.grad[i] - fd) / (std::abs(fd) + 1e-8), 1e-4);
    }
  }
}

TEST(Losses, AdaptiveWeightCarriesNoGradient) {
  Rng rng(7);
  const Tensor p = rng.normal_tensor({5, 3}), t = rng.normal_tensor({5, 3});
  const LossResult r = loss(p, t, kAdaptive);
  std::vector<double> w(5);
  for (std::size_t b = 0; b < 5; ++b) w[b] = adaptive_weight(row_e2(p, t, b), 0.75, 1e-3);
  auto frozen = [&](const Tensor& x) {
    double acc = 0;
    for (std::size_t b = 0; b < 5; ++b) acc += w[b] * row_e2(x, t, b);
    return acc / 5;
  };
  EXPECT_NEAR(frozen(p), r.value, 1e-12);
  const double h = 1e-6;
  for (std::size_t i = 0; i < p.size(); ++i) {
    Tensor a = p, b = p;
    a[i] += h;
    b[i] -= h;
    const double fd = (frozen(a) - frozen(b)) / (2 * h);
    EXPECT_LT(std::abs(r.grad[i] - fd) / (std::abs(fd) + 1e-8), 1e-4);
  }
}

TEST(Losses, NonFiniteRowsReported) {
  Tensor p({4, 2});
  p.at(2, 1) = std::nan("");
  try {
    loss(p, Tensor({4, 2}), kMse);
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("rows 2"), std::string::npos);
  }
  EXPECT_THROW(loss(Tensor({4, 2}), Tensor({4, 3}), kMse), ShapeError);
}

TEST(Losses, ConfigValidation) {
  EXPECT_THROW((LossConfig{LossKind::Adaptive, 0.0, 1e-3}.validate()), DomainError);
  EXPECT_THROW((LossConfig{LossKind::Adaptive, 1.6, 1e-3}.validate()), DomainError);
  EXPECT_THROW((LossConfig{LossKind::Cauchy, 0.75, 0.0}.validate()), DomainError);
  EXPECT_NO_THROW((LossConfig{LossKind::Adaptive, 1.5, 1e-3}.validate()));
}
