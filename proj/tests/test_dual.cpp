#include <gtest/gtest.h>

#include "dmf/dual.hpp"
#include "dmf/rng.hpp"

using namespace dmf;

namespace {

Graph square() {
  Graph g;
  const auto x = g.input();
  g.mul(x, x);
  return g;
}

// silu(x W1 + b1) W2 + b2 with random weights.
Graph two_layer(Rng& rng, std::size_t d, std::size_t h) {
  Graph g;
  const auto x = g.input();
  const auto a = g.silu(g.affine(x, rng.normal_tensor({d, h}, 0.0, 0.7), rng.normal_tensor({h}, 0.0, 0.3)));
  g.affine(a, rng.normal_tensor({h, d}, 0.0, 0.7), rng.normal_tensor({d}, 0.0, 0.3));
  return g;
}

Tensor central_difference(const Graph& g, const Tensor& x, const Tensor& v, double h) {
  return scale(sub(g.evaluate(add(x, scale(v, h))), g.evaluate(sub(x, scale(v, h)))), 0.5 / h);
}

double rel_err(const Tensor& a, const Tensor& ref) { return max_abs_diff(a, ref) / (max_abs(ref) + 1e-8); }

}  // namespace

TEST(Dual, SquareAtThree) {
  const DualTensor out = dual_forward(square(), Tensor::vector({3}), Tensor::vector({1}));
  EXPECT_DOUBLE_EQ(out.primal[0], 9.0);
  EXPECT_DOUBLE_EQ(out.tangent[0], 6.0);
}

TEST(Dual, LinearMapPushesTangentThrough) {
  Rng rng(5);
  const Tensor a = rng.normal_tensor({3, 3});
  Graph g;
  g.matmul(g.input(), g.constant(a));
  const Tensor x = rng.normal_tensor({2, 3}), v = rng.normal_tensor({2, 3});
  const DualTensor out = dual_forward(g, x, v);
  EXPECT_EQ(out.primal, matmul(x, a));
  EXPECT_EQ(out.tangent, matmul(v, a));
}

TEST(Dual, ShapeMismatchRejected) { EXPECT_THROW(DualTensor(Tensor({2}), Tensor({3})), ShapeError); }

TEST(Dual, OpaqueNodeIsUnsupported) {
  Graph g;
  g.opaque("exp", [](const Tensor& x) { return map(x, [](double v) { return std::exp(v); }); }, g.input());
  EXPECT_NO_THROW(g.evaluate(Tensor::vector({1})));
  EXPECT_THROW(dual_forward(g, Tensor::vector({1}), Tensor::vector({1})), Error);
}

TEST(Dual, AllPrimitivesMatchFiniteDifferences) {
  Rng rng(6);
  Graph g;
  const auto x = g.input();
  const auto c = g.constant(rng.normal_tensor({3, 3}));
  const auto y = g.silu(g.sub(g.matmul(x, c), g.neg(g.mul(x, x))));
  g.add(y, g.affine(x, rng.normal_tensor({3, 3}), rng.normal_tensor({3})));
  const Tensor p = rng.normal_tensor({4, 3}), v = rng.normal_tensor({4, 3});
  EXPECT_LT(rel_err(dual_forward(g, p, v).tangent, central_difference(g, p, v, 1e-5)), 1e-6);
}

TEST(Dual, TwoLayerNetMatchesFiniteDifferences) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Graph g = two_layer(rng, 3, 16);
    const Tensor x = rng.normal_tensor({5, 3}), v = rng.normal_tensor({5, 3});
    EXPECT_LT(rel_err(dual_forward(g, x, v).tangent, central_difference(g, x, v, 1e-5)), 1e-5);
  }
}

TEST(Dual, RandomInstancesWithinTolerance) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t dim = 2 + rng.index(4);
    const Graph g = two_layer(rng, dim, 4 + rng.index(20));
    const Tensor x = rng.normal_tensor({3, dim}), v = rng.normal_tensor({3, dim});
    const Tensor fd = central_difference(g, x, v, 1e-5);
    const Tensor tan = dual_forward(g, x, v).tangent;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      EXPECT_LT(std::abs(tan[i] - fd[i]) / (std::abs(fd[i]) + 1e-8), 1e-4);
    }
  }
}

TEST(Dual, ZeroTangentGivesZero) {
  Rng rng(9);
  const Graph g = two_layer(rng, 3, 8);
  const Tensor x = rng.normal_tensor({4, 3});
  EXPECT_EQ(dual_forward(g, x, Tensor::zeros({4, 3})).tangent, Tensor::zeros({4, 3}));
}

TEST(Dual, TangentIsAdditive) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const Graph g = two_layer(rng, 3, 12);
    const Tensor x = rng.normal_tensor({4, 3}), v1 = rng.normal_tensor({4, 3}), v2 = rng.normal_tensor({4, 3});
    const Tensor lhs = dual_forward(g, x, add(v1, v2)).tangent;
    const Tensor rhs = add(dual_forward(g, x, v1).tangent, dual_forward(g, x, v2).tangent);
    EXPECT_LT(max_abs_diff(lhs, rhs), 1e-10);
  }
}

TEST(Dual, PrimalMatchesEvaluate) {
  Rng rng(11);
  const Graph g = two_layer(rng, 3, 8);
  const Tensor x = rng.normal_tensor({4, 3});
  EXPECT_EQ(dual_forward(g, x, rng.normal_tensor({4, 3})).primal, g.evaluate(x));
}

TEST(Dual, SiluDerivative) {
  for (double x : {-5.0, -1.0, 0.0, 0.3, 4.0}) {
    const double fd = (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6;
    EXPECT_NEAR(silu_grad(x), fd, 1e-8);
  }
}
