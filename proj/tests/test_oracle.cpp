#include <gtest/gtest.h>

#include <cmath>

#include "cmac/errors.hpp"
#include "cmac/ops.hpp"
#include "cmac/oracle/bridge.hpp"
#include "cmac/oracle/oracle.hpp"

using namespace cmac;
using namespace cmac::oracle;

TEST(FiniteDiff, QuadraticMatchesAnalytic) {
  std::vector<double> theta{1.0, 2.0};
  auto f = [&] { return theta[0] * theta[0] + theta[1] * theta[1]; };
  auto g = finite_diff_grad<double>(f, {&theta[0], &theta[1]});
  EXPECT_NEAR(g[0], 2.0, 1e-6);
  EXPECT_NEAR(g[1], 4.0, 1e-6);
  EXPECT_EQ(theta[0], 1.0);
  EXPECT_EQ(theta[1], 2.0);
}

TEST(FiniteDiff, ConstantGivesZero) {
  std::vector<double> theta{0.3, -1.0, 5.0};
  auto g = finite_diff_grad<double>([] { return 7.0; }, {&theta[0], &theta[1], &theta[2]});
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDiff, NondeterministicLossIsRejected) {
  double x = 1.0;
  int calls = 0;
  auto f = [&] { return x + 1e-3 * ++calls; };
  EXPECT_THROW(finite_diff_grad<double>(f, {&x}), NondeterminismError);
}

TEST(BruteLosses, SingleItemEmptyBankIsZero) {
  LossBatch b;
  b.z_v = Array({1, 2}, {1, 0});
  b.z_a = Array({1, 2}, {0, 1});
  b.key_v = b.z_v;
  b.key_a = b.z_a;
  const BruteLosses l = brute_force_losses(b, {});
  EXPECT_EQ(l.nce_va, 0.0);
  EXPECT_EQ(l.cl_va, 0.0);
  EXPECT_EQ(l.total, 0.0);
}

TEST(BruteLosses, OrthogonalPairAnalytic) {
  LossBatch b;
  b.z_v = Array({2, 2}, {1, 0, 0, 1});
  b.z_a = b.z_v;
  b.key_v = b.z_v;
  b.key_a = b.z_a;
  LossConfig cfg;
  cfg.tau = 1.0;
  cfg.within_modal_negatives = false;
  const BruteLosses l = brute_force_losses(b, cfg);
  const double e = std::exp(1.0);
  EXPECT_NEAR(l.nce_va, -std::log(e / (e + 1)), 1e-12);
  EXPECT_NEAR(l.nce_va, 0.3133, 1e-4);
  EXPECT_NEAR(l.cl_va, l.nce_va, 1e-15);
}

TEST(MicroCaps, FixedMicroModelIsSmall) {
  CmacModel m(micro_model_config());
  EXPECT_LE(trainable_count(m), 200u);
  EXPECT_NO_THROW(check_micro_caps(m));
}

TEST(MicroCaps, RandomConfigsStayWithinCaps) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    CmacModel m(random_micro_config(s));
    EXPECT_NO_THROW(check_micro_caps(m)) << "seed " << s;
  }
}

TEST(MicroCaps, DeskModelIsRejected) {
  CmacModel m(ModelConfig{});
  EXPECT_THROW(check_micro_caps(m), ContractError);
}

namespace {

double max_abs_diff(const Array& a, const Tensor& t) {
  EXPECT_EQ(a.shape, t.shape());
  double worst = 0;
  auto d = t.data();
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - static_cast<double>(d[i])));
  return worst;
}

}  // namespace

TEST(ReferencePipeline, MatchesModularForwardOnRandomMicroConfigs) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    ModelConfig cfg = random_micro_config(100 + s);
    CmacModel model(cfg);
    check_micro_caps(model);
    randomize_state(model, s);
    fill_banks(model, 3 + s, s);
    const StepInput in = random_micro_input(cfg, 2 + s % 3, s);
    const PipelineOutput ref = naive_reference_pipeline(pipeline_config(cfg), params_from_model(model), pipeline_input(in, model));
    const StepOutput out = model.forward(in, true);
    EXPECT_LT(max_abs_diff(ref.s_v, out.s_v), 1e-10) << "seed " << s;
    EXPECT_LT(max_abs_diff(ref.s_a, out.s_a), 1e-10) << "seed " << s;
    EXPECT_LT(max_abs_diff(ref.s_hat_v, out.s_hat_v), 1e-10) << "seed " << s;
    EXPECT_LT(max_abs_diff(ref.s_hat_a, out.s_hat_a), 1e-10) << "seed " << s;
    EXPECT_LT(max_abs_diff(ref.z_v, out.z_v), 1e-10) << "seed " << s;
    EXPECT_LT(max_abs_diff(ref.key_a, out.key_a), 1e-10) << "seed " << s;
    EXPECT_NEAR(ref.loss.cl_va, out.loss.cl_va, 1e-10) << "seed " << s;
    EXPECT_NEAR(ref.loss.cl_av, out.loss.cl_av, 1e-10) << "seed " << s;
    EXPECT_NEAR(ref.loss.ac_v, out.loss.ac_v, 1e-10) << "seed " << s;
    EXPECT_NEAR(ref.loss.ac_a, out.loss.ac_a, 1e-10) << "seed " << s;
    EXPECT_NEAR(ref.loss.total, out.loss.total.item(), 1e-10) << "seed " << s;
  }
}

TEST(ReferencePipeline, LambdaZeroDropsConsistencyTerms) {
  ModelConfig cfg = micro_model_config();
  cfg.loss.lambda = 0;
  CmacModel model(cfg);
  randomize_state(model, 3);
  const StepInput in = random_micro_input(cfg, 3, 3);
  const PipelineOutput ref = naive_reference_pipeline(pipeline_config(cfg), params_from_model(model), pipeline_input(in, model));
  EXPECT_GT(ref.loss.ac_v, 0.0);
  EXPECT_EQ(ref.loss.total, ref.loss.cl_va + ref.loss.cl_av);
}

TEST(ReferencePipeline, ZeroInputGivesHalfAttentionUnderCosine) {
  ModelConfig cfg = micro_model_config();
  cfg.visual.norm = NormKind::identity;
  cfg.audio.norm = NormKind::identity;
  cfg.transform_norm = NormKind::identity;
  CmacModel model(cfg);
  ParamMap p = params_from_model(model);
  for (auto& [name, a] : p)
    if (name.find("bias") != std::string::npos) std::fill(a.v.begin(), a.v.end(), 0.0);
  PipelineInput in;
  in.clips = Array({2, 3, 2, 4, 4});
  in.specs = Array({2, 1, 4, 4});
  const PipelineOutput ref = naive_reference_pipeline(pipeline_config(cfg), p, in);
  for (double v : ref.s_v.v) EXPECT_EQ(v, 0.5);
  for (double v : ref.s_a.v) EXPECT_EQ(v, 0.5);
  for (double v : ref.z_v.v) EXPECT_EQ(v, 0.0);
}

TEST(NaiveKernels, ConvMatchesProduction) {
  Rng rng(7);
  auto fill = [&](Tensor t) {
    for (Scalar& v : t.data()) v = static_cast<Scalar>(rng.uniform(-1, 1));
    return t;
  };
  Tensor x = fill(Tensor({1, 2, 3, 4, 4}));
  Tensor k = fill(Tensor({1, 2, 1, 2, 2}));
  Tensor y = conv3d(x, k, Tensor(), {1, 1, 1}, {0, 0, 0});
  EXPECT_LT(max_abs_diff(conv3d_naive(to_array(x), to_array(k), {}, {1, 1, 1}, {0, 0, 0}), y), 1e-12);
}

TEST(Gradcheck, MicroModelFullObjective) {
  ModelConfig cfg = micro_model_config();
  cfg.loss.within_modal_negatives = true;
  CmacModel model(cfg);
  randomize_state(model, 11);
  fill_banks(model, 4, 11);
  const StepInput in = random_micro_input(cfg, 3, 11);
  const GradcheckReport rep = gradcheck_model(model, in);
  EXPECT_GT(rep.coordinates, 100u);
  EXPECT_LT(rep.max_rel_err, 1e-4) << rep.worst;
}
