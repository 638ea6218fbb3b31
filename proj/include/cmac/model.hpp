#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cmac/attention.hpp"
#include "cmac/contrastive.hpp"
#include "cmac/encoders.hpp"
#include "cmac/pcf.hpp"

namespace cmac {

// "identity" -> true, "random" -> false; anything else throws ConfigError.
bool parse_projection_init(const std::string& s);

struct ModelConfig {
  EncoderConfig visual = desk_visual_config();
  EncoderConfig audio = desk_audio_config();
  std::size_t filter_channels = 32;  // C_f
  std::size_t embed_dim = 32;        // D_e
  // Both projection heads start as the identity (needs C_f == D_e), so the
  // joint space starts out as the filter space the correlation runs in.
  bool identity_projection = true;
  NormKind transform_norm = NormKind::batch;
  std::size_t head_kernel = 3;
  PcfConfig pcf;
  ContrastiveConfig loss;
  bool detach_guidance = true;
  Scalar target_momentum = Scalar(0.999);
  std::size_t bank_capacity = 512;
  std::uint64_t seed = 0;

  // Throws ConfigError on any inconsistency (also checks the grid shapes).
  void validate() const;
};

// One modality's momentum-tracked path: encoder, transform g and projection.
struct Branch {
  ConvEncoder encoder;
  TransformHead transform;
  ProjectionHead projection;

  Branch(const EncoderConfig& enc, std::size_t filter_channels, std::size_t embed_dim, NormKind transform_norm,
         Rng& rng);
  void visit(StateVisitor& v, const std::string& prefix);
};

struct StepInput {
  Tensor clips;   // N x 3 x T x H x W
  Tensor specs;   // N x 1 x T~ x F
  Tensor clips2;  // second views, positives mode only
  Tensor specs2;
};

struct Guidance {
  Tensor s_v, s_a;
};

struct StepOutput {
  LossTerms loss;
  Tensor s_v, s_a;          // guided attention
  Tensor s_hat_v, s_hat_a;  // predicted attention
  Tensor kappa_v, kappa_a;  // online filters
  Tensor z_v, z_a;          // online embeddings (anchors)
  Tensor key_v, key_a;      // target embeddings, pushed to the banks after the step
  Tensor feat_v, feat_a;    // online encoder maps
};

class CmacModel {
 public:
  explicit CmacModel(ModelConfig cfg);
  CmacModel(const CmacModel&) = delete;
  CmacModel& operator=(const CmacModel&) = delete;

  // Full objective on one batch. `guidance` replaces the guided maps inside
  // the consistency terms (used for finite-difference checks).
  StepOutput forward(const StepInput& in, bool train, const std::optional<Guidance>& guidance = std::nullopt);

  // Guided and predicted maps without touching the banks or the loss.
  StepOutput attention(const Tensor& clips, const Tensor& specs);

  void push_banks(const StepOutput& out);
  void momentum_step();

  std::vector<Parameter*> trainable_parameters();
  std::vector<Parameter*> target_parameters();
  // Parameters and buffers of online, target and saliency modules (banks excluded).
  void visit(StateVisitor& v, const std::string& prefix = "");

  const ModelConfig& config() const { return cfg_; }
  MomentumPair<Branch>& visual() { return visual_; }
  MomentumPair<Branch>& audio() { return audio_; }
  SaliencyHead& saliency_v() { return sal_v_; }
  SaliencyHead& saliency_a() { return sal_a_; }
  MemoryBank& bank_v() { return bank_v_; }
  MemoryBank& bank_a() { return bank_a_; }

 private:
  struct Online {
    Tensor feat_v, feat_a, vt, at;
    FilterBank filters;
  };
  Online encode_online(const Tensor& clips, const Tensor& specs, bool train);
  Tensor target_embed(Branch& b, const Tensor& x, bool train);

  ModelConfig cfg_;
  Rng rng_;
  MomentumPair<Branch> visual_;
  MomentumPair<Branch> audio_;
  SaliencyHead sal_v_;
  SaliencyHead sal_a_;
  MemoryBank bank_v_;
  MemoryBank bank_a_;
};

}  // namespace cmac
