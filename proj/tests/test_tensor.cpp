#include <gtest/gtest.h>

#include <cmath>

#include "cmac/errors.hpp"
#include "cmac/ops.hpp"
#include "cmac/oracle/bridge.hpp"
#include "cmac/parameter.hpp"
#include "support.hpp"

using namespace cmac;
using namespace cmac::testing;
using cmac::oracle::to_array;

TEST(Tensor, ShapeAndDataAgree) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.data().size(), 24u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<Scalar>{1, 2, 3}), DimensionError);
}

TEST(Tensor, DetachBreaksStorageAndGraph) {
  Tensor x = Tensor::ones({2});
  x.set_requires_grad(true);
  Tensor y = scale(x, 2);
  Tensor d = y.detach();
  EXPECT_FALSE(d.requires_grad());
  EXPECT_EQ(d.node(), nullptr);
  d.data()[0] = 10;
  EXPECT_EQ(y.data()[0], 2);
}

TEST(Conv3d, ZeroInputGivesZeroOutput) {
  Rng rng(1);
  Tensor y = conv3d(Tensor::zeros({2, 3, 4, 4}), random_tensor({3, 2, 2, 2, 2}, rng), Tensor(), {1, 1, 1}, {0, 0, 0});
  for (Scalar v : y.data()) EXPECT_EQ(v, 0);
}

TEST(Conv3d, UnitKernelIsIdentity) {
  Rng rng(2);
  Tensor x = random_tensor({1, 3, 4, 4}, rng);
  Tensor y = conv3d(x, Tensor::ones({1, 1, 1, 1, 1}), Tensor(), {1, 1, 1}, {0, 0, 0});
  EXPECT_EQ(max_abs_diff(x.data(), y.data()), 0.0);
}

TEST(Conv3d, MatchesLoopOracle) {
  Rng rng(3);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor x = random_tensor({2, 1, 3, 4, 4}, rng);
    Tensor k = random_tensor({1, 2, 1, 2, 2}, rng);
    // The 2 x 1 x 3 x 4 x 4 input is channel-major: two channels of one item.
    Tensor xc = reshape(x, {1, 2, 3, 4, 4});
    Tensor y = conv3d(xc, k, Tensor(), {1, 1, 1}, {0, 0, 0});
    EXPECT_LT(max_abs_diff(oracle::conv3d_naive(to_array(xc), to_array(k), {}, {1, 1, 1}, {0, 0, 0}), y), 1e-12);
  }
  Tensor x = random_tensor({2, 3, 3, 5, 4}, rng);
  Tensor k = random_tensor({2, 3, 2, 3, 2}, rng);
  Tensor b = random_tensor({2}, rng);
  Tensor y = conv3d(x, k, b, {1, 2, 1}, {1, 1, 0});
  EXPECT_LT(max_abs_diff(oracle::conv3d_naive(to_array(x), to_array(k), to_array(b), {1, 2, 1}, {1, 1, 0}), y),
            1e-12);
}

TEST(Conv3d, ShapeMismatchNamesAxes) {
  try {
    conv3d(Tensor::zeros({1, 2, 4, 4, 4}), Tensor::zeros({1, 3, 1, 1, 1}), Tensor(), {1, 1, 1}, {0, 0, 0});
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos) << e.what();
  }
}

TEST(Conv2d, ZeroAndIdentity) {
  Rng rng(4);
  Tensor x = random_tensor({2, 5, 6}, rng);
  Tensor z = conv2d(Tensor::zeros({2, 5, 6}), random_tensor({3, 2, 3, 3}, rng), Tensor(), {1, 1}, {1, 1});
  for (Scalar v : z.data()) EXPECT_EQ(v, 0);
  Tensor k = Tensor::zeros({2, 2, 1, 1});
  k.data()[0] = 1;
  k.data()[3] = 1;
  EXPECT_EQ(max_abs_diff(conv2d(x, k, Tensor(), {1, 1}, {0, 0}).data(), x.data()), 0.0);
}

TEST(Conv2d, MatchesLoopOracle) {
  Rng rng(5);
  Tensor x = random_tensor({3, 2, 5, 6}, rng);
  Tensor k = random_tensor({4, 2, 3, 2}, rng);
  Tensor b = random_tensor({4}, rng);
  Tensor y = conv2d(x, k, b, {2, 1}, {1, 0});
  EXPECT_LT(max_abs_diff(oracle::conv2d_naive(to_array(x), to_array(k), to_array(b), {2, 1}, {1, 0}), y), 1e-12);
}

TEST(Conv, Linearity) {
  Rng rng(6);
  Tensor x = random_tensor({1, 2, 3, 4, 4}, rng), y = random_tensor({1, 2, 3, 4, 4}, rng);
  Tensor k = random_tensor({3, 2, 2, 2, 2}, rng);
  const Scalar a = Scalar(0.7), b = Scalar(-1.3);
  Tensor lhs = conv3d(add(scale(x, a), scale(y, b)), k, Tensor(), {1, 1, 1}, {1, 0, 1});
  Tensor rhs = add(scale(conv3d(x, k, Tensor(), {1, 1, 1}, {1, 0, 1}), a), scale(conv3d(y, k, Tensor(), {1, 1, 1}, {1, 0, 1}), b));
  EXPECT_LT(max_abs_diff(lhs.data(), rhs.data()), 1e-10);
  Tensor x2 = random_tensor({2, 5, 5}, rng), y2 = random_tensor({2, 5, 5}, rng), k2 = random_tensor({2, 2, 3, 3}, rng);
  Tensor l2 = conv2d(add(scale(x2, a), scale(y2, b)), k2, Tensor(), {1, 1}, {1, 1});
  Tensor r2 = add(scale(conv2d(x2, k2, Tensor(), {1, 1}, {1, 1}), a), scale(conv2d(y2, k2, Tensor(), {1, 1}, {1, 1}), b));
  EXPECT_LT(max_abs_diff(l2.data(), r2.data()), 1e-10);
}

TEST(GlobalAvgPool, ConstantAndAnalytic) {
  Tensor c = Tensor::full({2, 3, 3}, Scalar(4.5));
  const Tensor pc = global_avg_pool(c);
  for (Scalar v : pc.data()) EXPECT_EQ(v, Scalar(4.5));
  Tensor x({1, 2, 2}, std::vector<Scalar>{1, 2, 3, 4});
  Tensor p = global_avg_pool(x);
  EXPECT_EQ(p.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(p.item(), Scalar(2.5));
}

TEST(GlobalAvgPool, MatchesExplicitSum) {
  Rng rng(7);
  Tensor x = random_tensor({3, 2, 2, 2}, rng);
  Tensor p = global_avg_pool(x);
  auto xa = to_array(reshape(x, {1, 3, 2, 2, 2}));
  auto ref = oracle::global_avg_pool_naive(xa);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(p.data()[c], ref[c], 1e-14);
}

TEST(GlobalAvgPool, EmptyGridIsAnError) { EXPECT_THROW(global_avg_pool(Tensor({3})), DimensionError); }

TEST(CosineSimilarity, Cases) {
  Rng rng(8);
  Tensor x = random_tensor({5}, rng);
  EXPECT_NEAR(cosine_similarity(x, x).item(), 1.0, 1e-12);
  Tensor e1({2}, std::vector<Scalar>{1, 0}), e2({2}, std::vector<Scalar>{0, 1});
  EXPECT_EQ(cosine_similarity(e1, e2).item(), 0);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor a = random_tensor({7}, rng), b = random_tensor({7}, rng);
    auto aa = to_array(a), bb = to_array(b);
    EXPECT_NEAR(cosine_similarity(a, b).item(), oracle::cosine_naive(aa.v.data(), bb.v.data(), 7), 1e-14);
  }
}

TEST(CosineSimilarity, ZeroInputsGiveZeroWithZeroGrad) {
  Tensor a = Tensor::zeros({3}), b = Tensor::zeros({3});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tensor c = cosine_similarity(a, b);
  EXPECT_EQ(c.item(), 0);
  c.backward();
  for (Scalar g : a.grad()) EXPECT_EQ(g, 0);
  for (Scalar g : b.grad()) EXPECT_EQ(g, 0);
}

TEST(Elementwise, Examples) {
  EXPECT_EQ(sigmoid(Tensor::scalar(0)).item(), Scalar(0.5));
  Tensor s = softmax(Tensor::full({1, 5}, 3), 1);
  for (Scalar v : s.data()) EXPECT_NEAR(v, 0.2, 1e-15);
  Tensor board({1, 4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) board.data()[i * 4 + j] = static_cast<Scalar>((i + j) % 2);
  Tensor d = downsample_avg2(board);
  EXPECT_EQ(d.shape(), (Shape{1, 2, 2}));
  for (Scalar v : d.data()) EXPECT_EQ(v, Scalar(0.5));
}

TEST(Elementwise, DownsampleFloorsOddSizes) {
  Rng rng(9);
  Tensor x = random_tensor({2, 5, 3}, rng);
  Tensor d = downsample_avg2(x);
  EXPECT_EQ(d.shape(), (Shape{2, 2, 1}));
  EXPECT_LT(max_abs_diff(oracle::downsample_naive(to_array(x), 1), d), 1e-15);
}

TEST(Elementwise, LogClampsAtTinyInputs) {
  EXPECT_NEAR(log(Tensor::scalar(0)).item(), std::log(1e-30), 1e-9);
  EXPECT_TRUE(std::isfinite(log(Tensor::scalar(-5)).item()));
}

TEST(Elementwise, SoftmaxSumsToOneAndSigmoidInOpenInterval) {
  Rng rng(10);
  Tensor x = random_tensor({4, 6}, rng, -30, 30);
  for (std::size_t axis : {0u, 1u}) {
    Tensor s = softmax(x, axis);
    const std::size_t other = axis == 0 ? 6 : 4, len = axis == 0 ? 4 : 6;
    for (std::size_t o = 0; o < other; ++o) {
      double acc = 0;
      for (std::size_t i = 0; i < len; ++i) acc += axis == 0 ? s.data()[i * 6 + o] : s.data()[o * 6 + i];
      EXPECT_NEAR(acc, 1.0, 1e-12);
    }
  }
  Tensor g = sigmoid(random_tensor({50}, rng, -30, 30));
  for (Scalar v : g.data()) {
    EXPECT_GT(v, 0);
    EXPECT_LT(v, 1);
  }
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::full({2, 3}, 0.4);
  x.set_requires_grad(true);
  sum(x).backward();
  for (Scalar g : x.grad()) EXPECT_EQ(g, 1);
}

TEST(Backward, SquareAnalytic) {
  Tensor x({2}, std::vector<Scalar>{1, 2});
  x.set_requires_grad(true);
  sum(mul(x, x)).backward();
  EXPECT_EQ(x.grad()[0], 2);
  EXPECT_EQ(x.grad()[1], 4);
}

TEST(Backward, AccumulatesUntilCleared) {
  Tensor x({2}, std::vector<Scalar>{1, 2});
  x.set_requires_grad(true);
  sum(x).backward();
  sum(x).backward();
  EXPECT_EQ(x.grad()[0], 2);
  x.zero_grad();
  sum(x).backward();
  EXPECT_EQ(x.grad()[0], 1);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor x = Tensor::ones({2});
  x.set_requires_grad(true);
  EXPECT_THROW(scale(x, 2).backward(), ContractError);
}

TEST(Backward, ZeroMultiplierSubtermGivesExactZero) {
  Rng rng(11);
  Tensor a = random_tensor({3}, rng), b = random_tensor({3}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  add(sum(mul(a, a)), scale(sum(exp(b)), 0)).backward();
  for (Scalar g : b.grad()) EXPECT_EQ(g, 0);
}

TEST(GradientCheck, EveryOpTwentyInstances) {
  Rng rng(12);
  for (const auto& op : differentiable_ops()) {
    double worst = 0;
    for (int rep = 0; rep < 20; ++rep) worst = std::max(worst, op_gradient_error(op.fn, op.inputs(rng), rng));
    EXPECT_LT(worst, 1e-4) << op.name;
  }
}

namespace {

Parameter scalar_param(Scalar w, Scalar g) {
  Parameter p("w", Tensor({1}, std::vector<Scalar>{w}));
  p.tensor.mutable_grad()[0] = g;
  return p;
}

}  // namespace

TEST(Sgd, ZeroLrLeavesParams) {
  Parameter p = scalar_param(1.5, 3.0);
  std::vector<Parameter*> ps{&p};
  sgd_step(ps, 0, Scalar(1e-5), Scalar(0.9));
  EXPECT_EQ(p.tensor.data()[0], Scalar(1.5));
}

TEST(Sgd, PlainStep) {
  Parameter p = scalar_param(1.5, 3.0);
  std::vector<Parameter*> ps{&p};
  sgd_step(ps, Scalar(0.1), 0, 0);
  EXPECT_NEAR(p.tensor.data()[0], 1.5 - 0.1 * 3.0, 1e-15);
  EXPECT_EQ(p.tensor.grad()[0], 3.0);
}

TEST(Sgd, MomentumRecurrenceTwoSteps) {
  const double lr = 0.05, wd = 0.01, mu = 0.9, w0 = 0.8, g1 = 0.3, g2 = -0.7;
  Parameter p = scalar_param(static_cast<Scalar>(w0), static_cast<Scalar>(g1));
  std::vector<Parameter*> ps{&p};
  sgd_step(ps, static_cast<Scalar>(lr), static_cast<Scalar>(wd), static_cast<Scalar>(mu));
  p.tensor.mutable_grad()[0] = static_cast<Scalar>(g2);
  sgd_step(ps, static_cast<Scalar>(lr), static_cast<Scalar>(wd), static_cast<Scalar>(mu));
  // Hand-unrolled recurrence.
  const double b1 = g1 + wd * w0;
  const double w1 = w0 - lr * b1;
  const double b2 = mu * b1 + g2 + wd * w1;
  const double w2 = w1 - lr * b2;
  EXPECT_NEAR(p.tensor.data()[0], w2, 1e-15);
}

TEST(Sgd, MissingGradNamesParameter) {
  Parameter p("encoder.weight", Tensor({1}, std::vector<Scalar>{1}));
  std::vector<Parameter*> ps{&p};
  try {
    sgd_step(ps, Scalar(0.1), 0, 0);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.weight"), std::string::npos);
  }
}
