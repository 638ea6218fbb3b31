#include <gtest/gtest.h>

#include "cmac/attention.hpp"
#include "cmac/errors.hpp"
#include "cmac/model.hpp"
#include "cmac/oracle/bridge.hpp"
#include "support.hpp"

using namespace cmac;
using namespace cmac::testing;
using cmac::oracle::Array;
using cmac::oracle::to_array;

namespace {

double grad_l1(const std::vector<NamedState>& states) {
  double s = 0;
  for (const NamedState& st : states) {
    if (st.is_parameter && st.tensor->has_grad())
      for (Scalar g : st.tensor->grad()) s += std::abs(g);
  }
  return s;
}

}  // namespace

TEST(Saliency, ZeroInitGivesHalf) {
  Rng rng(1);
  SaliencyHead h(32, 3, 3, rng);
  h.zero_init();
  const Tensor s = predict_attention(random_tensor({32, 2, 8, 8}, rng), h);
  EXPECT_EQ(s.shape(), (Shape{2, 8, 8}));
  for (Scalar v : s.data()) EXPECT_EQ(v, Scalar(0.5));
}

TEST(Saliency, BatchedShape) {
  Rng rng(2);
  SaliencyHead h(4, 2, 3, rng);
  EXPECT_EQ(predict_attention(random_tensor({3, 4, 8, 4}, rng), h).shape(), (Shape{3, 8, 4}));
}

TEST(Saliency, MatchesConvSigmoidOracle) {
  Rng rng(3);
  for (std::size_t kernel : {1u, 3u}) {
    SaliencyHead h(4, 3, kernel, rng);
    for (Scalar& b : h.hidden.bias.tensor.data()) b = static_cast<Scalar>(rng.uniform(-0.5, 0.5));
    for (Scalar& b : h.out.bias.tensor.data()) b = static_cast<Scalar>(rng.uniform(-0.5, 0.5));
    const Tensor feat = random_tensor({2, 4, 2, 4, 4}, rng);
    const std::size_t p = kernel / 2;
    Array hid = oracle::conv3d_naive(to_array(feat), to_array(h.hidden.weight.tensor), to_array(h.hidden.bias.tensor),
                                     {1, 1, 1}, {p, p, p});
    for (double& v : hid.v) v = v > 0 ? v : 0;
    Array out = oracle::conv3d_naive(hid, to_array(h.out.weight.tensor), to_array(h.out.bias.tensor), {1, 1, 1},
                                     {0, 0, 0});
    Array expected({2, 2, 4, 4});
    for (std::size_t i = 0; i < out.size(); ++i) expected[i] = oracle::sigmoid_naive(out[i]);
    EXPECT_LT(max_abs_diff(expected, predict_attention(feat, h)), 1e-14);
  }
}

TEST(Saliency, StrictlyInsideUnitInterval) {
  Rng rng(4);
  SaliencyHead h(4, 2, 3, rng);
  const Tensor s = predict_attention(random_tensor({2, 4, 6, 6}, rng, -3, 3), h);
  for (Scalar v : s.data()) {
    EXPECT_GT(v, 0);
    EXPECT_LT(v, 1);
  }
}

TEST(Saliency, ChannelMismatchAndEvenKernel) {
  Rng rng(5);
  SaliencyHead h(4, 2, 3, rng);
  EXPECT_THROW(predict_attention(Tensor::zeros({2, 5, 4, 4}), h), DimensionError);
  EXPECT_THROW(SaliencyHead(4, 2, 2, rng), ConfigError);
}

TEST(Consistency, Examples) {
  Rng rng(6);
  const Tensor s = random_tensor({2, 3, 3}, rng, 0, 1);
  EXPECT_EQ(attention_consistency_loss(s, s).item(), 0);
  EXPECT_EQ(attention_consistency_loss(Tensor::ones({5, 7}), Tensor::zeros({5, 7})).item(), 1);
  EXPECT_EQ(attention_consistency_loss(Tensor::ones({2, 2, 8, 8}), Tensor::zeros({2, 2, 8, 8})).item(), 1);
}

TEST(Consistency, MatchesLoopOracle) {
  Rng rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    const Tensor s = random_tensor({3, 4, 4}, rng, 0, 1), sh = random_tensor({3, 4, 4}, rng, 0, 1);
    EXPECT_NEAR(attention_consistency_loss(s, sh).item(), oracle::consistency_naive(to_array(s), to_array(sh)),
                1e-15);
  }
}

TEST(Consistency, BoundedForUnitMaps) {
  Rng rng(8);
  for (int rep = 0; rep < 200; ++rep) {
    const double l = attention_consistency_loss(random_tensor({2, 5}, rng, 0, 1), random_tensor({2, 5}, rng, 0, 1)).item();
    EXPECT_GE(l, 0);
    EXPECT_LE(l, 1);
  }
}

TEST(Consistency, ShapeMismatch) {
  EXPECT_THROW(attention_consistency_loss(Tensor::zeros({2, 4}), Tensor::zeros({4, 2})), DimensionError);
}

TEST(Consistency, DetachedTargetGetsNoGradient) {
  Rng rng(9);
  Tensor s = random_tensor({2, 3}, rng, 0, 1), sh = random_tensor({2, 3}, rng, 0, 1);
  s.set_requires_grad(true);
  sh.set_requires_grad(true);
  attention_consistency_loss(s, sh, true).backward();
  if (s.has_grad())
    for (Scalar g : s.grad()) EXPECT_EQ(g, 0);
  double total = 0;
  for (Scalar g : sh.grad()) total += std::abs(g);
  EXPECT_GT(total, 0);
}

// Transform heads reach the loss only through the guided maps, so with the
// guidance detached the consistency terms leave them untouched.
TEST(Consistency, StopGradientIntoGuidanceBranch) {
  for (bool detach : {true, false}) {
    ModelConfig cfg = oracle::micro_model_config(10);
    CmacModel model(cfg);
    oracle::randomize_state(model, 10);
    const StepInput in = oracle::random_micro_input(cfg, 3, 10);
    StepOutput out = model.forward(in, true);
    add(attention_consistency_loss(out.s_v, out.s_hat_v, detach),
        attention_consistency_loss(out.s_a, out.s_hat_a, detach))
        .backward();
    const double transform = grad_l1(collect_state(model.visual().online.transform)) +
                             grad_l1(collect_state(model.audio().online.transform));
    const double heads = grad_l1(collect_state(model.saliency_v())) + grad_l1(collect_state(model.saliency_a()));
    if (detach) {
      EXPECT_EQ(transform, 0.0);
    } else {
      EXPECT_GT(transform, 0.0);
    }
    EXPECT_GT(heads, 0.0);
  }
}

TEST(Consistency, ZeroLambdaLeavesHeadsWithoutGradient) {
  ModelConfig cfg = oracle::micro_model_config(11);
  cfg.loss.lambda = 0;
  CmacModel model(cfg);
  oracle::randomize_state(model, 11);
  oracle::fill_banks(model, 4, 11);
  model.forward(oracle::random_micro_input(cfg, 3, 11), true).loss.total.backward();
  for (SaliencyHead* h : {&model.saliency_v(), &model.saliency_a()}) {
    for (const NamedState& st : collect_state(*h)) {
      if (!st.is_parameter || !st.tensor->has_grad()) continue;
      for (Scalar g : st.tensor->grad()) EXPECT_EQ(g, 0);
    }
  }
}
