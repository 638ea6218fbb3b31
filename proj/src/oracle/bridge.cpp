#include "cmac/oracle/bridge.hpp"

#include <cmath>
#include <map>

#include "cmac/errors.hpp"
#include "cmac/ops.hpp"

namespace cmac::oracle {

Array to_array(const Tensor& t) {
  if (!t.defined()) return {};
  auto d = t.data();
  return Array(t.shape(), std::vector<double>(d.begin(), d.end()));
}

Tensor to_tensor(const Array& a) {
  return Tensor(a.shape, std::vector<Scalar>(a.v.begin(), a.v.end()));
}

ParamMap params_from_model(CmacModel& model) {
  ParamMap out;
  for (const NamedState& s : collect_state(model)) {
    if (s.is_parameter) out.emplace(s.name, to_array(*s.tensor));
  }
  return out;
}

namespace {

EncoderSpec encoder_spec(const EncoderConfig& e) {
  EncoderSpec s;
  s.in_channels = e.in_channels;
  s.grid = e.input_grid;
  s.batch_norm = e.norm == NormKind::batch;
  for (const auto& b : e.blocks) s.blocks.push_back({b.out_channels, b.kernel, b.stride, b.padding, b.relu});
  return s;
}

int mode_code(NormMode m) {
  switch (m) {
    case NormMode::none:
      return 0;
    case NormMode::softmax:
      return 1;
    case NormMode::cosine:
      return 2;
  }
  return 2;
}

}  // namespace

LossConfig loss_config(const ContrastiveConfig& c) {
  return {static_cast<double>(c.tau), static_cast<double>(c.lambda), c.within_modal_negatives,
          c.within_modal_positives};
}

PipelineConfig pipeline_config(const ModelConfig& cfg) {
  PipelineConfig p;
  p.visual = encoder_spec(cfg.visual);
  p.audio = encoder_spec(cfg.audio);
  p.transform_batch_norm = cfg.transform_norm == NormKind::batch;
  p.head_kernel = cfg.head_kernel;
  p.norm_mode = mode_code(cfg.pcf.mode);
  p.scales = cfg.pcf.scales;
  p.loss = loss_config(cfg.loss);
  return p;
}

std::size_t trainable_count(CmacModel& model) {
  std::size_t n = 0;
  for (Parameter* p : model.trainable_parameters()) n += p->tensor.numel();
  return n;
}

void check_micro_caps(CmacModel& model) {
  const std::size_t n = trainable_count(model);
  if (n > kMaxOracleParameters) {
    throw ContractError("oracle: micro-model has " + std::to_string(n) + " trainable parameters, cap is " +
                        std::to_string(kMaxOracleParameters));
  }
  const ModelConfig& cfg = model.config();
  for (const EncoderConfig* e : {&cfg.visual, &cfg.audio}) {
    const Shape out = encoder_output_shape(*e);
    for (std::size_t ax = 1; ax < out.size(); ++ax) {
      if (out[ax] > kMaxOracleGridAxis) {
        throw ContractError("oracle: feature grid " + shape_str(out) + " exceeds the 8-per-axis cap");
      }
    }
  }
}

ModelConfig micro_model_config(std::uint64_t seed) {
  ModelConfig m;
  m.visual.in_channels = 3;
  m.visual.input_grid = {2, 4, 4};
  m.visual.norm = NormKind::batch;
  m.visual.blocks = {{2, {1, 2, 2}, {1, 2, 2}, {0, 0, 0}, true}};
  m.audio.in_channels = 1;
  m.audio.input_grid = {4, 4};
  m.audio.norm = NormKind::batch;
  m.audio.blocks = {{2, {2, 2}, {2, 2}, {0, 0}, true}};
  m.filter_channels = 2;
  m.embed_dim = 2;
  m.identity_projection = false;
  m.head_kernel = 3;
  m.pcf = {NormMode::cosine, 2};
  m.bank_capacity = 16;
  m.seed = seed;
  return m;
}

ModelConfig random_micro_config(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x0c0f));
  ModelConfig m = micro_model_config(seed);
  const std::size_t c = 2 + rng.index(2);
  const bool wide = rng.uniform() < 0.5;
  m.visual.input_grid = {2, wide ? 6u : 4u, 4};
  m.visual.norm = rng.uniform() < 0.5 ? NormKind::batch : NormKind::identity;
  m.visual.blocks = {{c, {1, 2, 2}, {1, 2, 2}, {0, 0, 0}, true}};
  if (rng.uniform() < 0.5) m.visual.blocks.push_back({c, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, false});
  m.audio.input_grid = {wide ? 6u : 4u, 4};
  m.audio.norm = rng.uniform() < 0.5 ? NormKind::batch : NormKind::identity;
  m.audio.blocks = {{c, {2, 2}, {2, 2}, {0, 0}, true}};
  if (rng.uniform() < 0.5) m.audio.blocks.push_back({c, {1, 3}, {1, 1}, {0, 1}, true});
  m.transform_norm = rng.uniform() < 0.5 ? NormKind::batch : NormKind::identity;
  m.filter_channels = 2 + rng.index(2);
  m.embed_dim = 2 + rng.index(2);
  m.identity_projection = false;
  m.head_kernel = rng.uniform() < 0.5 ? 1 : 3;
  const NormMode modes[] = {NormMode::none, NormMode::softmax, NormMode::cosine};
  m.pcf = {modes[rng.index(3)], 1 + rng.index(2)};
  m.loss.tau = static_cast<Scalar>(rng.uniform(0.07, 0.5));
  m.loss.lambda = static_cast<Scalar>(rng.uniform(0.0, 2.0));
  m.loss.within_modal_negatives = rng.uniform() < 0.5;
  m.loss.within_modal_positives = rng.uniform() < 0.5;
  return m;
}

void randomize_state(CmacModel& model, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5eed));
  for (const NamedState& s : collect_state(model)) {
    if (!s.is_parameter) continue;
    const bool gamma = s.name.size() >= 5 && s.name.compare(s.name.size() - 5, 5, "gamma") == 0;
    for (Scalar& v : s.tensor->data()) v = static_cast<Scalar>(gamma ? rng.uniform(0.5, 1.5) : rng.uniform(-0.8, 0.8));
  }
}

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (Scalar& v : t.data()) v = static_cast<Scalar>(rng.uniform(-1, 1));
  return t;
}

Shape batch_shape(std::size_t n, const EncoderConfig& e) {
  Shape s{n, e.in_channels};
  s.insert(s.end(), e.input_grid.begin(), e.input_grid.end());
  return s;
}

}  // namespace

StepInput random_micro_input(const ModelConfig& cfg, std::size_t batch, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x1a7a));
  StepInput in;
  in.clips = random_tensor(batch_shape(batch, cfg.visual), rng);
  in.specs = random_tensor(batch_shape(batch, cfg.audio), rng);
  if (cfg.loss.within_modal_positives) {
    in.clips2 = random_tensor(batch_shape(batch, cfg.visual), rng);
    in.specs2 = random_tensor(batch_shape(batch, cfg.audio), rng);
  }
  return in;
}

PipelineInput pipeline_input(const StepInput& in, CmacModel& model) {
  PipelineInput p;
  p.clips = to_array(in.clips);
  p.specs = to_array(in.specs);
  p.clips2 = to_array(in.clips2);
  p.specs2 = to_array(in.specs2);
  p.bank_v = to_array(model.bank_v().snapshot());
  p.bank_a = to_array(model.bank_a().snapshot());
  return p;
}

void fill_banks(CmacModel& model, std::size_t rows, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xba4c));
  for (MemoryBank* bank : {&model.bank_v(), &model.bank_a()}) {
    const std::size_t d = bank->dim();
    Tensor t({rows, d});
    auto v = t.data();
    for (std::size_t r = 0; r < rows; ++r) {
      double sq = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const double x = rng.normal();
        v[r * d + j] = static_cast<Scalar>(x);
        sq += x * x;
      }
      const double norm = std::sqrt(sq);
      for (std::size_t j = 0; j < d; ++j) v[r * d + j] = static_cast<Scalar>(v[r * d + j] / norm);
    }
    bank->push(t);
  }
}

GradcheckReport gradcheck_model(CmacModel& model, const StepInput& in, double h, double floor) {
  std::vector<Parameter*> params = model.trainable_parameters();
  std::map<const TensorImpl*, std::string> names;
  for (const NamedState& s : collect_state(model)) names[s.tensor->impl().get()] = s.name;

  std::optional<Guidance> guidance;
  if (model.config().detach_guidance) {
    NoGradGuard ng;
    StepOutput base = model.forward(in, true);
    guidance = Guidance{base.s_v.detach(), base.s_a.detach()};
  }
  zero_grad(params);
  model.forward(in, true, guidance).loss.total.backward();

  GradcheckReport rep;
  std::vector<Scalar*> coords;
  for (Parameter* p : params) {
    const bool has = p->tensor.has_grad();
    auto g = has ? p->tensor.grad() : std::span<const Scalar>();
    auto d = p->tensor.data();
    const std::string& name = names[p->tensor.impl().get()];
    for (std::size_t i = 0; i < d.size(); ++i) {
      coords.push_back(d.data() + i);
      rep.entries.push_back({name + "[" + std::to_string(i) + "]", has ? static_cast<double>(g[i]) : 0.0, 0, 0});
    }
  }
  auto loss = [&]() {
    NoGradGuard ng;
    return static_cast<double>(model.forward(in, true, guidance).loss.total.item());
  };
  const std::vector<double> numeric = finite_diff_grad<Scalar>(loss, coords, h);
  rep.coordinates = coords.size();
  for (std::size_t i = 0; i < coords.size(); ++i) {
    GradcheckEntry& e = rep.entries[i];
    e.numeric = numeric[i];
    e.rel_err = relative_error(e.analytic, e.numeric, floor);
    if (e.rel_err >= rep.max_rel_err) {
      rep.max_rel_err = e.rel_err;
      rep.worst = e.name;
    }
  }
  return rep;
}

}  // namespace cmac::oracle
