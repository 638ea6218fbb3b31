#include "cmac/model.hpp"

#include "cmac/errors.hpp"
#include "cmac/ops.hpp"

namespace cmac {

void ModelConfig::validate() const {
  const Shape v = encoder_output_shape(visual);
  const Shape a = encoder_output_shape(audio);
  if (visual.input_grid.size() != 3) throw ConfigError("visual input grid must be T x H x W");
  if (audio.input_grid.size() != 2) throw ConfigError("audio input grid must be T x F");
  if (filter_channels == 0 || embed_dim == 0) throw ConfigError("filter_channels and embed_dim must be positive");
  if (identity_projection && filter_channels != embed_dim) {
    throw ConfigError("identity projection init needs filter_channels == embed_dim");
  }
  if (head_kernel % 2 == 0) throw ConfigError("head_kernel must be odd");
  if (!(target_momentum >= 0 && target_momentum <= 1)) throw ConfigError("target_momentum must lie in [0, 1]");
  loss.validate();
  if (pcf.scales == 0 || pcf.scales > 3) throw ConfigError("pyramid scales must be 1, 2 or 3");
  for (const Shape* s : {&v, &a}) {
    for (std::size_t ax = 1; ax < s->size(); ++ax) {
      if (((*s)[ax] >> (pcf.scales - 1)) == 0) {
        throw ConfigError("feature grid " + shape_str(*s) + " is too small for " + std::to_string(pcf.scales) +
                          " pyramid scales");
      }
    }
  }
}

Branch::Branch(const EncoderConfig& enc, std::size_t filter_channels, std::size_t embed_dim,
               NormKind transform_norm, Rng& rng)
    : encoder(enc, rng),
      transform(encoder.output_channels(), filter_channels, enc.input_grid.size(), transform_norm, rng),
      projection(filter_channels, embed_dim, rng) {}

void Branch::visit(StateVisitor& v, const std::string& prefix) {
  encoder.visit(v, prefix + "encoder.");
  transform.visit(v, prefix + "transform.");
  projection.visit(v, prefix + "projection.");
}

bool parse_projection_init(const std::string& s) {
  if (s == "identity") return true;
  if (s == "random") return false;
  throw ConfigError("unknown projection init '" + s + "' (expected identity|random)");
}

namespace {

MomentumPair<Branch> make_pair(const EncoderConfig& enc, const ModelConfig& cfg, Rng& rng) {
  Branch online(enc, cfg.filter_channels, cfg.embed_dim, cfg.transform_norm, rng);
  Branch target(enc, cfg.filter_channels, cfg.embed_dim, cfg.transform_norm, rng);
  if (cfg.identity_projection) online.projection.set_identity();
  return MomentumPair<Branch>(std::move(online), std::move(target), cfg.target_momentum);
}

const ModelConfig& checked(const ModelConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

CmacModel::CmacModel(ModelConfig cfg)
    : cfg_(checked(cfg)),
      rng_(derive_seed(cfg_.seed, 0x1417)),
      visual_(make_pair(cfg_.visual, cfg_, rng_)),
      audio_(make_pair(cfg_.audio, cfg_, rng_)),
      sal_v_(visual_.online.encoder.output_channels(), 3, cfg_.head_kernel, rng_),
      sal_a_(audio_.online.encoder.output_channels(), 2, cfg_.head_kernel, rng_),
      bank_v_(cfg_.bank_capacity, cfg_.embed_dim, Modality::visual),
      bank_a_(cfg_.bank_capacity, cfg_.embed_dim, Modality::audio) {}

CmacModel::Online CmacModel::encode_online(const Tensor& clips, const Tensor& specs, bool train) {
  if (clips.dim() != 5 || specs.dim() != 4 || clips.size(0) != specs.size(0)) {
    throw DimensionError("model: expected N x C x T x H x W clips and N x 1 x T x F spectrograms, got " +
                         shape_str(clips.shape()) + " and " + shape_str(specs.shape()));
  }
  Online o;
  o.feat_v = visual_.online.encoder.forward(clips, train);
  o.feat_a = audio_.online.encoder.forward(specs, train);
  o.vt = visual_.online.transform.forward(o.feat_v, train);
  o.at = audio_.online.transform.forward(o.feat_a, train);
  o.filters = make_filters(o.vt, o.at);
  return o;
}

Tensor CmacModel::target_embed(Branch& b, const Tensor& x, bool train) {
  NoGradGuard guard;
  Tensor feat = b.encoder.forward(x, train);
  Tensor kappa = global_avg_pool(b.transform.forward(feat, train), 2);
  return b.projection.forward(reshape(kappa, {kappa.size(0), kappa.size(1)}));
}

StepOutput CmacModel::forward(const StepInput& in, bool train, const std::optional<Guidance>& guidance) {
  const ContrastiveConfig& lc = cfg_.loss;
  Online o = encode_online(in.clips, in.specs, train);
  StepOutput out;
  out.feat_v = o.feat_v;
  out.feat_a = o.feat_a;
  out.kappa_v = o.filters.kappa_v;
  out.kappa_a = o.filters.kappa_a;
  GuidedAttention g = guided_attention(o.vt, o.at, o.filters, cfg_.pcf);
  out.s_v = g.s_v;
  out.s_a = g.s_a;
  out.s_hat_v = predict_attention(o.feat_v, sal_v_);
  out.s_hat_a = predict_attention(o.feat_a, sal_a_);
  out.z_v = visual_.online.projection.forward(o.filters.kappa_v);
  out.z_a = audio_.online.projection.forward(o.filters.kappa_a);
  out.key_v = target_embed(visual_.target, in.clips, train);
  out.key_a = target_embed(audio_.target, in.specs, train);

  ClInputs va, av;
  va.anchors = out.z_v;
  va.cross_keys = out.key_a;
  va.cross_bank = bank_a_.snapshot();
  // Batch peers are the online anchors, as in the loss definition; only the
  // banks hold target keys.
  va.same_keys = out.z_v;
  va.same_bank = bank_v_.snapshot();
  av.anchors = out.z_a;
  av.cross_keys = out.key_v;
  av.cross_bank = bank_v_.snapshot();
  av.same_keys = out.z_a;
  av.same_bank = bank_a_.snapshot();
  if (lc.within_modal_positives) {
    if (!in.clips2.defined() || !in.specs2.defined()) {
      throw ContractError("model: within-modal positives need a second clip and spectrogram per video");
    }
    va.same_positives = target_embed(visual_.target, in.clips2, train);
    av.same_positives = target_embed(audio_.target, in.specs2, train);
  }
  Tensor cl_va = cl_loss(va, lc);
  Tensor cl_av = cl_loss(av, lc);

  const Tensor& sv = guidance ? guidance->s_v : out.s_v;
  const Tensor& sa = guidance ? guidance->s_a : out.s_a;
  Tensor ac_v = attention_consistency_loss(sv, out.s_hat_v, cfg_.detach_guidance);
  Tensor ac_a = attention_consistency_loss(sa, out.s_hat_a, cfg_.detach_guidance);
  out.loss = total_loss(cl_va, cl_av, ac_v, ac_a, lc.lambda);
  return out;
}

StepOutput CmacModel::attention(const Tensor& clips, const Tensor& specs) {
  NoGradGuard guard;
  Online o = encode_online(clips, specs, false);
  GuidedAttention g = guided_attention(o.vt, o.at, o.filters, cfg_.pcf);
  StepOutput out;
  out.feat_v = o.feat_v;
  out.feat_a = o.feat_a;
  out.kappa_v = o.filters.kappa_v;
  out.kappa_a = o.filters.kappa_a;
  out.s_v = g.s_v;
  out.s_a = g.s_a;
  out.s_hat_v = predict_attention(o.feat_v, sal_v_);
  out.s_hat_a = predict_attention(o.feat_a, sal_a_);
  return out;
}

void CmacModel::push_banks(const StepOutput& out) {
  bank_v_.push(out.key_v);
  bank_a_.push(out.key_a);
}

void CmacModel::momentum_step() {
  visual_.update();
  audio_.update();
}

std::vector<Parameter*> CmacModel::trainable_parameters() {
  std::vector<Parameter*> out = collect_parameters(visual_.online);
  for (auto* p : collect_parameters(audio_.online)) out.push_back(p);
  for (auto* p : collect_parameters(sal_v_)) out.push_back(p);
  for (auto* p : collect_parameters(sal_a_)) out.push_back(p);
  return out;
}

std::vector<Parameter*> CmacModel::target_parameters() {
  std::vector<Parameter*> out = collect_parameters(visual_.target);
  for (auto* p : collect_parameters(audio_.target)) out.push_back(p);
  return out;
}

void CmacModel::visit(StateVisitor& v, const std::string& prefix) {
  visual_.online.visit(v, prefix + "visual.online.");
  visual_.target.visit(v, prefix + "visual.target.");
  audio_.online.visit(v, prefix + "audio.online.");
  audio_.target.visit(v, prefix + "audio.target.");
  sal_v_.visit(v, prefix + "saliency_v.");
  sal_a_.visit(v, prefix + "saliency_a.");
}

}  // namespace cmac
