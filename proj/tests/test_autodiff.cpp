#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "evcp/autodiff.hpp"
#include "evcp/error.hpp"
#include "oracle.hpp"

using namespace evcp;
using ad::Var;

namespace {

std::vector<double> random_values(std::size_t n, unsigned seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Compares the tape gradient of build(x) w.r.t. x against finite differences.
void expect_gradient(const ad::Shape& shape, const std::function<Var(const Var&)>& build, unsigned seed,
                     double tol = 1e-6) {
  const auto x0 = random_values(ad::numel(shape), seed);
  Var x = Var::parameter(shape, x0);
  Var y = build(x);
  const auto weights = random_values(y.size(), seed + 1);
  ad::backward(ad::dot_const(y, weights));
  const auto analytic = x.grad();
  const auto numeric = oracle::numeric_gradient(
      [&](const oracle::Vec& v) { return ad::dot_const(build(Var::constant(shape, v)), weights).item(); }, x0);
  for (std::size_t i = 0; i < analytic.size(); ++i) EXPECT_NEAR(analytic[i], numeric[i], tol) << "element " << i;
}

}  // namespace

TEST(Autodiff, LinearMatchesHandComputation) {
  Var x = Var::constant({2, 2}, {1, 2, 3, 4});
  Var w = Var::constant({2, 3}, {1, 0, -1, 2, 1, 0});
  Var b = Var::constant({3}, {0.5, 0, 0});
  Var y = ad::linear(x, w, b);
  ASSERT_EQ(y.shape(), (ad::Shape{2, 3}));
  const std::vector<double> expected{5.5, 2, -1, 11.5, 4, -3};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(y.value()[i], expected[i]);
}

TEST(Autodiff, ConstantsRecordNoTape) {
  Var a = Var::constant({2}, {1, 2});
  Var y = ad::mul(a, a);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_EQ(y.node()->parents.size(), 0u);
}

TEST(Autodiff, GradientAccumulatesThroughSharedNodes) {
  Var x = Var::parameter({1}, {3.0});
  Var y = ad::add(ad::mul(x, x), x);  // x^2 + x
  ad::backward(ad::sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Autodiff, BackwardRequiresScalar) {
  Var x = Var::parameter({2}, {1, 2});
  EXPECT_THROW(ad::backward(x), Error);
}

TEST(Autodiff, ShapeMismatchThrows) {
  Var a = Var::constant({2}, {1, 2});
  Var b = Var::constant({3}, {1, 2, 3});
  EXPECT_THROW(ad::add(a, b), Error);
  EXPECT_THROW(ad::reshape(a, {3}), Error);
}

TEST(Autodiff, ElementwiseGradients) {
  expect_gradient({3, 4}, [](const Var& x) { return ad::elu(x); }, 1);
  expect_gradient({3, 4}, [](const Var& x) { return ad::sigmoid(x); }, 2);
  expect_gradient({3, 4}, [](const Var& x) { return ad::leaky_relu(x, 0.2); }, 3);
  expect_gradient({3, 4}, [](const Var& x) { return ad::mul(x, ad::sigmoid(x)); }, 4);
  expect_gradient({3, 4}, [](const Var& x) { return ad::scale(ad::sub(x, ad::elu(x)), 3.0); }, 5);
}

TEST(Autodiff, LastAxisGradients) {
  const Var g = Var::constant({4}, {1.0, 0.5, -0.3, 2.0});
  const Var b = Var::constant({4}, {0.1, 0.2, 0.3, 0.4});
  expect_gradient({3, 4}, [&](const Var& x) { return ad::layer_norm(x, g, b, 1e-5); }, 6);
  expect_gradient({3, 4}, [](const Var& x) { return ad::tempered_softmax(x, 1.7); }, 7);
  const std::vector<double> noise{0.1, -0.2, 0.3, 0.0, 1.0, 2.0, -1.0, 0.5, 0.2, 0.2, 0.2, 0.2};
  expect_gradient({3, 4}, [&](const Var& x) { return ad::tempered_softmax(x, 0.7, noise); }, 8);
  expect_gradient({3, 4}, [](const Var& x) { return ad::mean_last(x); }, 9);
  expect_gradient({3, 4}, [](const Var& x) {
    const Var parts[] = {x, ad::elu(x)};
    return ad::concat_last(parts);
  }, 10);
  expect_gradient({3, 4}, [](const Var& x) {
    const Var parts[] = {x, ad::mul(x, x)};
    return ad::stack_last(parts);
  }, 11);
  expect_gradient({3, 4}, [](const Var& x) { return ad::weighted_sum_last(ad::tempered_softmax(x, 1.0), x); }, 12);
}

TEST(Autodiff, MatrixGradients) {
  const Var w = Var::constant({4, 2}, random_values(8, 20));
  const Var b = Var::constant({2}, {0.3, -0.1});
  expect_gradient({3, 4}, [&](const Var& x) { return ad::linear(x, w, b); }, 13);
  expect_gradient({4, 2}, [](const Var& wv) { return ad::linear(Var::constant({3, 4}, random_values(12, 21)), wv, Var()); }, 14);
  const Var other = Var::constant({2, 3, 4}, random_values(24, 22));
  expect_gradient({2, 3, 4}, [&](const Var& x) { return ad::matmul_nt(x, other); }, 15);
  expect_gradient({2, 3, 4}, [&](const Var& x) { return ad::matmul_nt(other, x); }, 16);
  const Var sq = Var::constant({2, 3, 3}, random_values(18, 23));
  expect_gradient({2, 3, 4}, [&](const Var& x) { return ad::batched_matmul(sq, x); }, 17);
  expect_gradient({2, 3, 3}, [&](const Var& x) { return ad::batched_matmul(x, other); }, 18);
}

TEST(Autodiff, SegmentGradients) {
  ad::Segments seg;
  const std::size_t s0[] = {0, 2};
  const std::size_t s1[] = {1};
  const std::size_t s2[] = {0, 1, 2};
  seg.push(s0);
  seg.push(s1);
  seg.push(s2);
  expect_gradient({2, 3, 4}, [&](const Var& x) { return ad::segment_mean(x, seg); }, 30);
  const Var w = Var::constant({8}, random_values(8, 31));
  const Var centers = Var::constant({2, 3, 4}, random_values(24, 32));
  expect_gradient({2, 3, 4}, [&](const Var& x) { return ad::segment_attention(centers, x, seg, w, 0.2).values; }, 33);
  expect_gradient({2, 3, 4}, [&](const Var& x) { return ad::segment_attention(x, x, seg, w, 0.2).values; }, 34);
  const Var members = Var::constant({2, 3, 4}, random_values(24, 35));
  expect_gradient({8}, [&](const Var& wv) { return ad::segment_attention(centers, members, seg, wv, 0.2).values; }, 36);
}

TEST(Autodiff, SegmentAttentionWeightsAreRowStochastic) {
  ad::Segments seg;
  const std::size_t s0[] = {0, 1, 2};
  seg.push(s0);
  auto att = ad::segment_attention(Var::constant({1, 1, 2}, {0.3, 0.1}),
                                   Var::constant({1, 3, 2}, {1, 2, 3, 4, 5, 6}), seg,
                                   Var::constant({4}, {0.1, 0.2, 0.3, 0.4}), 0.2);
  double total = 0;
  for (double w : att.weights) {
    EXPECT_GE(w, 0.0);
    total += w;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Autodiff, MseMatchesDefinition) {
  Var p = Var::parameter({2}, {0, 2});
  const std::vector<double> t{1, 0};
  Var loss = ad::mse(p, t);
  EXPECT_DOUBLE_EQ(loss.item(), 2.5);
  ad::backward(loss);
  EXPECT_DOUBLE_EQ(p.grad()[0], -1.0);
  EXPECT_DOUBLE_EQ(p.grad()[1], 2.0);
}
