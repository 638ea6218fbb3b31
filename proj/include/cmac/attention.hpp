#pragma once

#include <string>

#include "cmac/layers.hpp"
#include "cmac/tensor.hpp"

namespace cmac {

// h_v / h_a: conv(C -> C/2, k) + ReLU + conv(C/2 -> 1, 1) over the feature
// grid. `kernel` is odd so the grid extent is preserved.
class SaliencyHead {
 public:
  SaliencyHead(std::size_t in_channels, std::size_t spatial_rank, std::size_t kernel, Rng& rng);

  // Raw logits: N x grid (or grid for an unbatched C x grid input).
  Tensor forward(const Tensor& feat) const;
  void zero_init();
  std::size_t in_channels() const { return hidden.in_channels(); }
  void visit(StateVisitor& v, const std::string& prefix);

  Conv hidden;
  Conv out;
};

// s_hat = sigmoid(h(feat)), values in (0, 1).
Tensor predict_attention(const Tensor& feat, const SaliencyHead& head);

// mean((s - s_hat)^2). With detach_guidance the target s is a constant.
Tensor attention_consistency_loss(const Tensor& s, const Tensor& s_hat, bool detach_guidance = true);

}  // namespace cmac
