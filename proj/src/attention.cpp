#include "cmac/attention.hpp"

#include <algorithm>

#include "cmac/errors.hpp"
#include "cmac/ops.hpp"

namespace cmac {

namespace {

Conv make_conv(std::size_t in, std::size_t out, std::size_t rank, std::size_t k, Rng& rng) {
  return Conv(in, out, std::vector<std::size_t>(rank, k), std::vector<std::size_t>(rank, 1),
              std::vector<std::size_t>(rank, k / 2), rng);
}

}  // namespace

SaliencyHead::SaliencyHead(std::size_t in_channels, std::size_t spatial_rank, std::size_t kernel, Rng& rng)
    : hidden(make_conv(in_channels, std::max<std::size_t>(1, in_channels / 2), spatial_rank, kernel, rng)),
      out(make_conv(std::max<std::size_t>(1, in_channels / 2), 1, spatial_rank, 1, rng)) {
  if (kernel % 2 == 0) throw ConfigError("saliency head kernel must be odd, got " + std::to_string(kernel));
}

Tensor SaliencyHead::forward(const Tensor& feat) const {
  const std::size_t rank = hidden.spatial_rank();
  const bool batched = feat.dim() == rank + 2;
  if (!batched && feat.dim() != rank + 1) {
    throw DimensionError("saliency head: feature map " + shape_str(feat.shape()) +
                         " is not (N x) C x grid of rank " + std::to_string(rank));
  }
  const std::size_t ch_axis = batched ? 1 : 0;
  if (feat.size(ch_axis) != in_channels()) {
    throw DimensionError("saliency head: channel axis " + std::to_string(ch_axis) + " has " +
                         std::to_string(feat.size(ch_axis)) + ", expected " + std::to_string(in_channels()));
  }
  Tensor h = feat;
  if (!batched) {
    Shape bs{1};
    bs.insert(bs.end(), feat.shape().begin(), feat.shape().end());
    h = reshape(h, bs);
  }
  h = out.forward(relu(hidden.forward(h)));
  // Drop the singleton channel axis (and the batch axis we added).
  Shape s;
  if (batched) s.push_back(h.size(0));
  s.insert(s.end(), h.shape().begin() + 2, h.shape().end());
  return reshape(h, s);
}

void SaliencyHead::zero_init() {
  for (Conv* c : {&hidden, &out}) {
    for (Scalar& v : c->weight.tensor.data()) v = 0;
    for (Scalar& v : c->bias.tensor.data()) v = 0;
  }
}

void SaliencyHead::visit(StateVisitor& v, const std::string& prefix) {
  hidden.visit(v, prefix + "hidden.");
  out.visit(v, prefix + "out.");
}

Tensor predict_attention(const Tensor& feat, const SaliencyHead& head) { return sigmoid(head.forward(feat)); }

Tensor attention_consistency_loss(const Tensor& s, const Tensor& s_hat, bool detach_guidance) {
  if (s.shape() != s_hat.shape()) {
    throw DimensionError("attention_consistency_loss: guided " + shape_str(s.shape()) + " vs predicted " +
                         shape_str(s_hat.shape()));
  }
  const Tensor target = detach_guidance ? s.detach() : s;
  Tensor d = sub(target, s_hat);
  return mean(mul(d, d));
}

}  // namespace cmac
