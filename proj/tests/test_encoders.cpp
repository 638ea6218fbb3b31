#include <gtest/gtest.h>

#include <cmath>

#include "cmac/encoders.hpp"
#include "cmac/errors.hpp"
#include "cmac/model.hpp"
#include "cmac/oracle/bridge.hpp"
#include "support.hpp"

using namespace cmac;
using namespace cmac::testing;

TEST(Encoders, DeskShapes) {
  Rng rng(1);
  VisualEncoder fv = make_visual_encoder(desk_visual_config(), rng);
  AudioEncoder fa = make_audio_encoder(desk_audio_config(), rng);
  EXPECT_EQ(encode_visual(fv, random_tensor({3, 8, 32, 32}, rng)).shape(), (Shape{32, 2, 8, 8}));
  EXPECT_EQ(encode_audio(fa, random_tensor({1, 64, 32}, rng)).shape(), (Shape{32, 8, 4}));
  EXPECT_EQ(fv.output_shape(), (Shape{32, 2, 8, 8}));
  EXPECT_EQ(fa.output_shape(), (Shape{32, 8, 4}));
}

TEST(Encoders, OutputShapeIsTableDriven) {
  struct Row {
    Shape grid;
    std::vector<ConvBlockSpec> blocks;
    Shape expected;
  };
  const std::vector<Row> rows{
      {{8, 32, 32}, desk_visual_config(8).blocks, {8, 2, 8, 8}},
      {{4, 16, 16}, {{4, {1, 2, 2}, {1, 2, 2}, {0, 0, 0}, true}}, {4, 4, 8, 8}},
      {{6, 10, 10}, {{3, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true}, {5, {2, 2, 2}, {2, 2, 2}, {0, 0, 0}, true}},
       {5, 3, 5, 5}},
  };
  for (const auto& r : rows) {
    EncoderConfig cfg;
    cfg.in_channels = 3;
    cfg.input_grid = r.grid;
    cfg.blocks = r.blocks;
    EXPECT_EQ(encoder_output_shape(cfg), r.expected);
    Rng rng(2);
    ConvEncoder enc(cfg, rng);
    Shape in{3};
    in.insert(in.end(), r.grid.begin(), r.grid.end());
    EXPECT_EQ(enc.forward(Tensor::zeros(in), false).shape(), r.expected);
  }
}

TEST(Encoders, TooSmallOutputGridIsConfigError) {
  EncoderConfig cfg = desk_audio_config();
  cfg.input_grid = {8, 8};
  EXPECT_THROW(encoder_output_shape(cfg), ConfigError);
}

TEST(Encoders, WrongInputSizeIsDimensionError) {
  Rng rng(3);
  VisualEncoder fv = make_visual_encoder(desk_visual_config(8), rng);
  EXPECT_THROW(encode_visual(fv, Tensor::zeros({3, 8, 30, 32})), DimensionError);
  EXPECT_THROW(encode_visual(fv, Tensor::zeros({1, 8, 32, 32})), DimensionError);
}

TEST(Encoders, ZeroClipThroughZeroFinalBlockIsZero) {
  Rng rng(4);
  VisualEncoder fv = make_visual_encoder(desk_visual_config(8, NormKind::identity), rng);
  fv.zero_final_block();
  Tensor out = encode_visual(fv, Tensor::zeros({3, 8, 32, 32}));
  for (Scalar v : out.data()) EXPECT_EQ(v, 0);
}

TEST(Encoders, EvalModeIsDeterministic) {
  Rng rng(5);
  VisualEncoder fv = make_visual_encoder(desk_visual_config(8), rng);
  AudioEncoder fa = make_audio_encoder(desk_audio_config(8), rng);
  Tensor clip = random_tensor({3, 8, 32, 32}, rng), spec = random_tensor({1, 64, 32}, rng);
  EXPECT_EQ(max_abs_diff(encode_visual(fv, clip).data(), encode_visual(fv, clip).data()), 0.0);
  EXPECT_EQ(max_abs_diff(encode_audio(fa, spec).data(), encode_audio(fa, spec).data()), 0.0);
}

namespace {

struct TinyModule {
  Parameter w;
  void visit(StateVisitor& v, const std::string& prefix) { v.parameter(prefix + "w", w); }
};

std::pair<TinyModule, TinyModule> tiny_pair(std::vector<Scalar> online, std::vector<Scalar> target) {
  const std::size_t n = online.size();
  return {TinyModule{Parameter("w", Tensor({n}, std::move(online)))},
          TinyModule{Parameter("w", Tensor({n}, std::move(target)))}};
}

}  // namespace

TEST(Momentum, Examples) {
  for (double m : {1.0, 0.0, 0.999}) {
    auto [on, tg] = tiny_pair({0, 2, -1}, {1, 1, 1});
    auto t = collect_parameters(tg), o = collect_parameters(on);
    momentum_update(t, o, static_cast<Scalar>(m));
    auto d = tg.w.tensor.data();
    if (m == 1.0) {
      for (Scalar v : d) EXPECT_EQ(v, 1);
    } else if (m == 0.0) {
      EXPECT_EQ(d[0], 0);
      EXPECT_EQ(d[1], 2);
      EXPECT_EQ(d[2], -1);
    } else {
      EXPECT_NEAR(d[0], 0.999, 1e-15);
    }
  }
}

TEST(Momentum, ContractionTowardOnline) {
  Rng rng(6);
  auto [on, tg] = tiny_pair({0, 0, 0, 0}, {0, 0, 0, 0});
  for (Scalar& v : on.w.tensor.data()) v = static_cast<Scalar>(rng.uniform(-1, 1));
  for (Scalar& v : tg.w.tensor.data()) v = static_cast<Scalar>(rng.uniform(-1, 1));
  auto dist = [&] {
    double s = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      const double d = tg.w.tensor.data()[i] - on.w.tensor.data()[i];
      s += d * d;
    }
    return std::sqrt(s);
  };
  const double m = 0.9;
  auto t = collect_parameters(tg), o = collect_parameters(on);
  for (int k = 0; k < 10; ++k) {
    const double before = dist();
    momentum_update(t, o, static_cast<Scalar>(m));
    EXPECT_LE(dist(), m * before + 1e-15);
  }
}

TEST(Momentum, ShapeMismatchIsDimensionError) {
  auto [on, tg] = tiny_pair({0, 1}, {0, 1});
  TinyModule other{Parameter("w", Tensor({3}))};
  auto t = collect_parameters(other), o = collect_parameters(on);
  EXPECT_THROW(momentum_update(t, o, Scalar(0.5)), DimensionError);
}

TEST(Momentum, TargetBranchesNeverReceiveGradient) {
  ModelConfig cfg = oracle::micro_model_config();
  CmacModel model(cfg);
  oracle::randomize_state(model, 7);
  oracle::fill_banks(model, 4, 7);
  const StepInput in = oracle::random_micro_input(cfg, 3, 7);
  model.forward(in, true).loss.total.backward();
  for (Parameter* p : model.target_parameters()) {
    EXPECT_FALSE(p->tensor.requires_grad());
    if (p->tensor.has_grad())
      for (Scalar g : p->tensor.grad()) EXPECT_EQ(g, 0);
  }
}

TEST(Momentum, PairStartsAsExactCopy) {
  CmacModel model(oracle::micro_model_config());
  auto on = collect_state(model.visual().online), tg = collect_state(model.visual().target);
  ASSERT_EQ(on.size(), tg.size());
  for (std::size_t i = 0; i < on.size(); ++i) {
    EXPECT_EQ(on[i].name, tg[i].name);
    EXPECT_EQ(max_abs_diff(on[i].tensor->data(), tg[i].tensor->data()), 0.0);
  }
}
