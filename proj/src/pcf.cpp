#include "cmac/pcf.hpp"

#include "cmac/errors.hpp"
#include "cmac/ops.hpp"

namespace cmac {

std::string to_string(NormMode mode) {
  switch (mode) {
    case NormMode::none:
      return "none";
    case NormMode::softmax:
      return "softmax";
    case NormMode::cosine:
      return "cosine";
  }
  return "cosine";
}

NormMode parse_norm_mode(const std::string& s) {
  if (s == "none") return NormMode::none;
  if (s == "softmax") return NormMode::softmax;
  if (s == "cosine") return NormMode::cosine;
  throw ConfigError("unknown response normalisation '" + s + "' (expected none|softmax|cosine)");
}

TransformHead::TransformHead(std::size_t in_channels, std::size_t filter_channels,
                             std::size_t spatial_rank, NormKind norm_kind, Rng& rng)
    : conv(in_channels, filter_channels, std::vector<std::size_t>(spatial_rank, 1),
           std::vector<std::size_t>(spatial_rank, 1), std::vector<std::size_t>(spatial_rank, 0), rng),
      norm(norm_kind, filter_channels) {}

Tensor TransformHead::forward(const Tensor& feat, bool train) {
  const std::size_t rank = conv.spatial_rank();
  const bool batched = feat.dim() == rank + 2;
  if (!batched && feat.dim() != rank + 1) {
    throw DimensionError("transform: feature map " + shape_str(feat.shape()) + " is not (N x) C x grid of rank " +
                         std::to_string(rank));
  }
  const std::size_t ch_axis = batched ? 1 : 0;
  if (feat.size(ch_axis) != in_channels()) {
    throw DimensionError("transform: channel axis " + std::to_string(ch_axis) + " has " +
                         std::to_string(feat.size(ch_axis)) + ", expected " + std::to_string(in_channels()));
  }
  Tensor h = feat;
  if (!batched) {
    Shape bs{1};
    bs.insert(bs.end(), feat.shape().begin(), feat.shape().end());
    h = reshape(h, bs);
  }
  h = norm.forward(conv.forward(h), train);
  if (!batched) {
    Shape s(h.shape().begin() + 1, h.shape().end());
    h = reshape(h, s);
  }
  return h;
}

void TransformHead::set_identity() {
  if (in_channels() != filter_channels()) {
    throw ConfigError("identity transform needs equal input and filter channels");
  }
  auto w = conv.weight.tensor.data();
  std::fill(w.begin(), w.end(), Scalar(0));
  for (std::size_t c = 0; c < in_channels(); ++c) w[c * in_channels() + c] = 1;
  for (Scalar& b : conv.bias.tensor.data()) b = 0;
}

void TransformHead::visit(StateVisitor& v, const std::string& prefix) {
  conv.visit(v, prefix + "conv.");
  norm.visit(v, prefix + "norm.");
}

Tensor transform(const Tensor& featmap, TransformHead& g, bool train) { return g.forward(featmap, train); }

FilterBank make_filters(const Tensor& v_transformed, const Tensor& a_transformed) {
  // Visual grids have rank 3 and audio grids rank 2; one extra axis means a batch.
  auto pool = [](const Tensor& t, std::size_t grid_rank, const char* which) {
    if (t.dim() != grid_rank + 1 && t.dim() != grid_rank + 2) {
      throw DimensionError(std::string("make_filters: ") + which + " map " + shape_str(t.shape()) +
                           " is not (N x) C x grid with grid rank " + std::to_string(grid_rank));
    }
    const std::size_t lead = t.dim() - grid_rank;
    Tensor k = global_avg_pool(t, lead);
    Shape s(t.shape().begin(), t.shape().begin() + static_cast<std::ptrdiff_t>(lead));
    return reshape(k, s);
  };
  FilterBank fb{pool(v_transformed, 3, "visual"), pool(a_transformed, 2, "audio")};
  if (fb.kappa_v.shape().back() != fb.kappa_a.shape().back()) {
    throw DimensionError("make_filters: filter channels differ, visual " + shape_str(fb.kappa_v.shape()) +
                         " vs audio " + shape_str(fb.kappa_a.shape()));
  }
  return fb;
}

namespace {

// Lifts (filter [C], map [C x grid]) to a batch of one.
struct Batched {
  Tensor filter, map;
  bool lifted;
};

Batched lift(const Tensor& filter, const Tensor& map) {
  if (filter.dim() == 1) {
    Shape fs{1, filter.size(0)};
    Shape ms{1};
    ms.insert(ms.end(), map.shape().begin(), map.shape().end());
    return {reshape(filter, fs), reshape(map, ms), true};
  }
  return {filter, map, false};
}

Tensor drop_batch(const Tensor& t) {
  Shape s(t.shape().begin() + 1, t.shape().end());
  return reshape(t, s);
}

}  // namespace

Tensor correlate(const Tensor& filter, const Tensor& featmap_t, bool cosine) {
  Batched b = lift(filter, featmap_t);
  Tensor r = cosine ? cosine_response(b.filter, b.map) : dot_response(b.filter, b.map);
  return b.lifted ? drop_batch(r) : r;
}

Tensor normalize_response(const Tensor& raw, NormMode mode, std::size_t lead) {
  if (lead > 1) throw DimensionError("normalize_response: at most one leading item axis");
  switch (mode) {
    case NormMode::cosine:
      return scale(add_scalar(raw, Scalar(1)), Scalar(0.5));
    case NormMode::none:
      return clamp(raw, Scalar(0), Scalar(1));
    case NormMode::softmax: {
      // Softmax over every cell of one item.
      const std::size_t items = lead == 0 ? 1 : raw.size(0);
      const std::size_t cells = raw.numel() / items;
      Tensor flat = reshape(raw, {items, cells});
      return reshape(softmax(flat, 1), raw.shape());
    }
  }
  throw ConfigError("normalize_response: invalid mode");
}

Tensor pyramid_attention(const Tensor& filter, const Tensor& featmap_t, std::size_t scales,
                         NormMode mode) {
  if (scales == 0) throw ConfigError("pyramid_attention: scales must be >= 1");
  Batched b = lift(filter, featmap_t);
  const Shape grid(b.map.shape().begin() + 2, b.map.shape().end());
  for (std::size_t ax = 0; ax < grid.size(); ++ax) {
    if ((grid[ax] >> (scales - 1)) == 0) {
      throw ConfigError("pyramid_attention: grid " + shape_str(grid) + " cannot be halved " +
                        std::to_string(scales - 1) + " times (axis " + std::to_string(ax) + ")");
    }
  }
  const bool cosine = mode == NormMode::cosine;
  Tensor map = b.map;
  Tensor fused = normalize_response(correlate(b.filter, map, cosine), mode, 1);
  for (std::size_t s = 1; s < scales; ++s) {
    map = downsample_avg2(map, 2);
    Tensor coarse = normalize_response(correlate(b.filter, map, cosine), mode, 1);
    fused = add(fused, upsample_nearest(coarse, grid, 1));
  }
  if (scales > 1) fused = scale(fused, Scalar(1) / static_cast<Scalar>(scales));
  return b.lifted ? drop_batch(fused) : fused;
}

GuidedAttention guided_attention(const Tensor& v_transformed, const Tensor& a_transformed,
                                 const FilterBank& filters, const PcfConfig& cfg) {
  return {pyramid_attention(filters.kappa_a, v_transformed, cfg.scales, cfg.mode),
          pyramid_attention(filters.kappa_v, a_transformed, cfg.scales, cfg.mode)};
}

}  // namespace cmac
