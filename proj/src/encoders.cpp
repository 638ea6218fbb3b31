#include "cmac/encoders.hpp"

#include <algorithm>

#include "cmac/errors.hpp"
#include "cmac/ops.hpp"

namespace cmac {

EncoderConfig desk_visual_config(std::size_t channels, NormKind norm) {
  const std::size_t hidden = std::max<std::size_t>(1, channels / 2);
  EncoderConfig cfg;
  cfg.in_channels = 3;
  cfg.input_grid = {8, 32, 32};
  cfg.norm = norm;
  cfg.blocks = {
      {hidden, {2, 2, 2}, {2, 2, 2}, {0, 0, 0}, true},
      {channels, {2, 2, 2}, {2, 2, 2}, {0, 0, 0}, true},
      {channels, {1, 3, 3}, {1, 1, 1}, {0, 1, 1}, true},
  };
  return cfg;
}

EncoderConfig desk_audio_config(std::size_t channels, NormKind norm) {
  const std::size_t hidden = std::max<std::size_t>(1, channels / 2);
  EncoderConfig cfg;
  cfg.in_channels = 1;
  cfg.input_grid = {64, 32};
  cfg.norm = norm;
  cfg.blocks = {
      {hidden, {3, 3}, {2, 2}, {1, 1}, true},
      {channels, {3, 3}, {2, 2}, {1, 1}, true},
      {channels, {3, 3}, {2, 2}, {1, 1}, true},
  };
  return cfg;
}

Shape encoder_output_shape(const EncoderConfig& cfg) {
  if (cfg.blocks.empty()) throw ConfigError("encoder needs at least one block");
  Shape grid = cfg.input_grid;
  std::size_t channels = cfg.in_channels;
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    const auto& blk = cfg.blocks[b];
    if (blk.kernel.size() != grid.size() || blk.stride.size() != grid.size() ||
        blk.padding.size() != grid.size()) {
      throw ConfigError("encoder block " + std::to_string(b) + " rank does not match input grid " +
                        shape_str(cfg.input_grid));
    }
    for (std::size_t ax = 0; ax < grid.size(); ++ax) {
      if (blk.stride[ax] == 0) throw ConfigError("encoder block " + std::to_string(b) + ": zero stride");
      const std::size_t padded = grid[ax] + 2 * blk.padding[ax];
      if (padded < blk.kernel[ax]) {
        throw ConfigError("encoder block " + std::to_string(b) + ": kernel exceeds grid axis " +
                          std::to_string(ax));
      }
      grid[ax] = (padded - blk.kernel[ax]) / blk.stride[ax] + 1;
    }
    channels = blk.out_channels;
  }
  for (std::size_t ax = 0; ax < grid.size(); ++ax) {
    if (grid[ax] < 2) {
      throw ConfigError("encoder output grid " + shape_str(grid) +
                        " must be at least 2 on every axis for correlation filtering");
    }
  }
  Shape out{channels};
  out.insert(out.end(), grid.begin(), grid.end());
  return out;
}

ConvEncoder::ConvEncoder(EncoderConfig cfg, Rng& rng)
    : cfg_(std::move(cfg)), out_shape_(encoder_output_shape(cfg_)) {
  std::size_t channels = cfg_.in_channels;
  for (const auto& spec : cfg_.blocks) {
    blocks_.push_back(Block{Conv(channels, spec.out_channels, spec.kernel, spec.stride, spec.padding, rng),
                            Norm(cfg_.norm, spec.out_channels), spec.relu});
    channels = spec.out_channels;
  }
}

Tensor ConvEncoder::forward(const Tensor& x, bool train) {
  const std::size_t rank = cfg_.input_grid.size();
  const bool batched = x.dim() == rank + 2;
  if (!batched && x.dim() != rank + 1) {
    throw DimensionError("encoder input " + shape_str(x.shape()) + " must be C x grid or N x C x grid with grid " +
                         shape_str(cfg_.input_grid));
  }
  const std::size_t off = batched ? 1 : 0;
  const Shape& s = x.shape();
  if (s[off] != cfg_.in_channels) {
    throw DimensionError("encoder input channel axis " + std::to_string(off) + " is " +
                         std::to_string(s[off]) + ", expected " + std::to_string(cfg_.in_channels));
  }
  for (std::size_t ax = 0; ax < rank; ++ax) {
    if (s[off + 1 + ax] != cfg_.input_grid[ax]) {
      throw DimensionError("encoder input axis " + std::to_string(off + 1 + ax) + " is " +
                           std::to_string(s[off + 1 + ax]) + ", expected " +
                           std::to_string(cfg_.input_grid[ax]));
    }
  }
  Tensor h = x;
  if (!batched) {
    Shape bs{1};
    bs.insert(bs.end(), s.begin(), s.end());
    h = reshape(h, bs);
  }
  for (auto& blk : blocks_) {
    h = blk.conv.forward(h);
    h = blk.norm.forward(h, train);
    if (blk.relu) h = relu(h);
  }
  if (!batched) h = reshape(h, out_shape_);
  return h;
}

void ConvEncoder::zero_final_block() {
  auto& last = blocks_.back().conv;
  for (Scalar& v : last.weight.tensor.data()) v = 0;
  for (Scalar& v : last.bias.tensor.data()) v = 0;
}

void ConvEncoder::visit(StateVisitor& v, const std::string& prefix) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = prefix + "block" + std::to_string(i) + ".";
    blocks_[i].conv.visit(v, p + "conv.");
    blocks_[i].norm.visit(v, p + "norm.");
  }
}

VisualEncoder make_visual_encoder(EncoderConfig cfg, Rng& rng) {
  if (cfg.input_grid.size() != 3) throw ConfigError("visual encoder expects a T x H x W input grid");
  return ConvEncoder(std::move(cfg), rng);
}

AudioEncoder make_audio_encoder(EncoderConfig cfg, Rng& rng) {
  if (cfg.input_grid.size() != 2) throw ConfigError("audio encoder expects a T x F input grid");
  return ConvEncoder(std::move(cfg), rng);
}

Tensor encode_visual(VisualEncoder& f_v, const Tensor& clip) {
  if (f_v.config().input_grid.size() != 3) throw ConfigError("encode_visual: not a visual encoder");
  return f_v.forward(clip, false);
}

Tensor encode_audio(AudioEncoder& f_a, const Tensor& spec) {
  if (f_a.config().input_grid.size() != 2) throw ConfigError("encode_audio: not an audio encoder");
  return f_a.forward(spec, false);
}

void momentum_update(std::span<Parameter* const> target, std::span<Parameter* const> online, Scalar m) {
  if (target.size() != online.size()) {
    throw DimensionError("momentum_update: " + std::to_string(target.size()) + " target vs " +
                         std::to_string(online.size()) + " online parameters");
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i]->tensor.shape() != online[i]->tensor.shape()) {
      throw DimensionError("momentum_update: shape mismatch for '" + target[i]->name + "' " +
                           shape_str(target[i]->tensor.shape()) + " vs " +
                           shape_str(online[i]->tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    auto t = target[i]->tensor.data();
    auto o = online[i]->tensor.data();
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = m * t[j] + (Scalar(1) - m) * o[j];
  }
}

}  // namespace cmac
