#pragma once

#include <string>

#include "cmac/layers.hpp"
#include "cmac/tensor.hpp"

// Adaptive cross-modal filters and pyramid correlation filtering.
//
// Shapes: feature maps are N x C x grid (or C x grid for a single item);
// filters are N x C_f (or C_f); attention maps are N x grid (or grid).
namespace cmac {

enum class NormMode { none, softmax, cosine };

std::string to_string(NormMode mode);
NormMode parse_norm_mode(const std::string& s);

struct PcfConfig {
  NormMode mode = NormMode::cosine;
  std::size_t scales = 2;
};

// g_v / g_a: pointwise conv to C_f channels followed by normalisation.
class TransformHead {
 public:
  TransformHead(std::size_t in_channels, std::size_t filter_channels, std::size_t spatial_rank,
                NormKind norm, Rng& rng);

  Tensor forward(const Tensor& feat, bool train);
  // Identity kernel, zero bias. Requires in_channels == filter_channels.
  void set_identity();
  std::size_t in_channels() const { return conv.in_channels(); }
  std::size_t filter_channels() const { return conv.out_channels(); }
  void visit(StateVisitor& v, const std::string& prefix);

  Conv conv;
  Norm norm;
};

// Applies g to a feature map; the grid extent is unchanged.
Tensor transform(const Tensor& featmap, TransformHead& g, bool train);

struct FilterBank {
  Tensor kappa_v;  // N x C_f, pooled transformed visual map
  Tensor kappa_a;  // N x C_f, pooled transformed audio map
};

// kappa = global average pool of each transformed map.
FilterBank make_filters(const Tensor& v_transformed, const Tensor& a_transformed);

// Per-position response of `filter` against the local feature vectors of an
// already-transformed map: cosine (in [-1, 1]) or raw dot product.
Tensor correlate(const Tensor& filter, const Tensor& featmap_t, bool cosine = true);

// Maps a raw response map into [0, 1]:
//   cosine:  (x + 1) / 2
//   softmax: softmax over all grid cells of each item
//   none:    clamp to [0, 1]
// `lead` is 1 for a batch (N x grid) and 0 for a single map.
Tensor normalize_response(const Tensor& raw, NormMode mode, std::size_t lead = 1);

// Responses at full resolution and at `scales - 1` successive halvings of the
// map, upsampled (nearest) back to the full grid and averaged.
Tensor pyramid_attention(const Tensor& filter, const Tensor& featmap_t, std::size_t scales,
                         NormMode mode);

struct GuidedAttention {
  Tensor s_v;  // audio filter over the transformed visual map
  Tensor s_a;  // visual filter over the transformed audio map
};

GuidedAttention guided_attention(const Tensor& v_transformed, const Tensor& a_transformed,
                                 const FilterBank& filters, const PcfConfig& cfg);

}  // namespace cmac
