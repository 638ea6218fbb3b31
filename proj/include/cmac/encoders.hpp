#pragma once

#include <span>
#include <string>
#include <vector>

#include "cmac/layers.hpp"
#include "cmac/parameter.hpp"
#include "cmac/tensor.hpp"

namespace cmac {

struct ConvBlockSpec {
  std::size_t out_channels;
  std::vector<std::size_t> kernel;
  std::vector<std::size_t> stride;
  std::vector<std::size_t> padding;
  bool relu = true;
};

struct EncoderConfig {
  std::size_t in_channels = 0;
  Shape input_grid;  // T x H x W (visual) or T~ x F (audio)
  std::vector<ConvBlockSpec> blocks;
  NormKind norm = NormKind::batch;
};

// Desk-scale stacks: 3 x 8 x 32 x 32 -> C x 2 x 8 x 8 and 1 x 64 x 32 -> C x 8 x 4.
EncoderConfig desk_visual_config(std::size_t channels = 32, NormKind norm = NormKind::batch);
EncoderConfig desk_audio_config(std::size_t channels = 32, NormKind norm = NormKind::batch);

// Output shape (C x grid) implied by a config, without building the encoder.
// Throws ConfigError when any output grid axis is smaller than 2.
Shape encoder_output_shape(const EncoderConfig& cfg);

// Stack of conv + norm + ReLU blocks producing a grid feature map.
class ConvEncoder {
 public:
  ConvEncoder(EncoderConfig cfg, Rng& rng);
  ConvEncoder(const ConvEncoder&) = delete;
  ConvEncoder& operator=(const ConvEncoder&) = delete;
  ConvEncoder(ConvEncoder&&) = default;
  ConvEncoder& operator=(ConvEncoder&&) = default;

  // x: C x grid or N x C x grid; the result keeps the batch axis convention.
  Tensor forward(const Tensor& x, bool train);
  const EncoderConfig& config() const { return cfg_; }
  Shape output_shape() const { return out_shape_; }
  std::size_t output_channels() const { return out_shape_.front(); }

  // Zeroes the kernel and bias of the final block.
  void zero_final_block();
  void visit(StateVisitor& v, const std::string& prefix);

 private:
  struct Block {
    Conv conv;
    Norm norm;
    bool relu;
  };
  EncoderConfig cfg_;
  Shape out_shape_;
  std::vector<Block> blocks_;
};

// f_v: video clip (3 x T x H x W) -> C x T' x H' x W'.
using VisualEncoder = ConvEncoder;
// f_a: spectrogram (1 x T~ x F) -> C x T~' x F'.
using AudioEncoder = ConvEncoder;

// Build an encoder after checking the grid rank of its modality.
VisualEncoder make_visual_encoder(EncoderConfig cfg, Rng& rng);
AudioEncoder make_audio_encoder(EncoderConfig cfg, Rng& rng);

// Eval-mode (deterministic) encodings of a single input or a batch.
Tensor encode_visual(VisualEncoder& f_v, const Tensor& clip);
Tensor encode_audio(AudioEncoder& f_a, const Tensor& spec);

// target <- m * target + (1 - m) * online, elementwise. Parameter lists must
// align by name and shape.
void momentum_update(std::span<Parameter* const> target, std::span<Parameter* const> online, Scalar m);

// An online module and its slowly-moving target copy. The target never
// records gradients.
template <class Module>
struct MomentumPair {
  Module online;
  Module target;
  Scalar m;

  MomentumPair(Module on, Module tgt, Scalar momentum)
      : online(std::move(on)), target(std::move(tgt)), m(momentum) {
    copy_module_state(target, online);
    freeze(target);
  }

  void update() {
    auto t = collect_parameters(target);
    auto o = collect_parameters(online);
    momentum_update(t, o, m);
  }
};

}  // namespace cmac
