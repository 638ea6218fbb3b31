#include "cmac/layers.hpp"

#include <algorithm>

#include "cmac/errors.hpp"
#include "cmac/ops.hpp"

namespace cmac {

std::string to_string(NormKind kind) { return kind == NormKind::batch ? "batch" : "identity"; }

NormKind parse_norm_kind(const std::string& s) {
  if (s == "batch") return NormKind::batch;
  if (s == "identity") return NormKind::identity;
  throw ConfigError("unknown feature normalisation '" + s + "' (expected batch|identity)");
}

Conv::Conv(std::size_t in_channels, std::size_t out_channels, std::vector<std::size_t> kernel,
           std::vector<std::size_t> stride, std::vector<std::size_t> padding, Rng& rng)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(std::move(kernel)),
      stride_(std::move(stride)),
      padding_(std::move(padding)) {
  const std::size_t rank = kernel_.size();
  if ((rank != 2 && rank != 3) || stride_.size() != rank || padding_.size() != rank) {
    throw ConfigError("Conv: kernel/stride/padding must all have 2 or 3 entries");
  }
  Shape wshape{out_channels_, in_channels_};
  std::size_t fan_in = in_channels_;
  for (auto k : kernel_) {
    wshape.push_back(k);
    fan_in *= k;
  }
  weight = Parameter("weight", kaiming_uniform(wshape, fan_in, rng));
  bias = Parameter("bias", Tensor::zeros({out_channels_}));
}

Tensor Conv::forward(const Tensor& x) const {
  if (spatial_rank() == 3) {
    return conv3d(x, weight.tensor, bias.tensor, {stride_[0], stride_[1], stride_[2]},
                  {padding_[0], padding_[1], padding_[2]});
  }
  return conv2d(x, weight.tensor, bias.tensor, {stride_[0], stride_[1]}, {padding_[0], padding_[1]});
}

Shape Conv::output_grid(const Shape& input_grid) const {
  if (input_grid.size() != spatial_rank()) {
    throw DimensionError("Conv: grid " + shape_str(input_grid) + " has wrong rank for a " +
                         std::to_string(spatial_rank()) + "-D kernel");
  }
  Shape out(input_grid.size());
  for (std::size_t ax = 0; ax < out.size(); ++ax) {
    const std::size_t padded = input_grid[ax] + 2 * padding_[ax];
    if (padded < kernel_[ax]) {
      throw DimensionError("Conv: kernel larger than padded input on grid axis " + std::to_string(ax));
    }
    out[ax] = (padded - kernel_[ax]) / stride_[ax] + 1;
  }
  return out;
}

void Conv::visit(StateVisitor& v, const std::string& prefix) {
  v.parameter(prefix + "weight", weight);
  v.parameter(prefix + "bias", bias);
}

Norm::Norm(NormKind kind, std::size_t channels) : kind_(kind) {
  if (kind_ == NormKind::batch) {
    gamma = Parameter("gamma", Tensor::ones({channels}));
    beta = Parameter("beta", Tensor::zeros({channels}));
    running_mean = Tensor::zeros({channels});
    running_var = Tensor::ones({channels});
  }
}

Tensor Norm::forward(const Tensor& x, bool train) {
  if (kind_ == NormKind::identity) return x;
  return batch_norm(x, gamma.tensor, beta.tensor, running_mean, running_var, train);
}

void Norm::visit(StateVisitor& v, const std::string& prefix) {
  if (kind_ == NormKind::identity) return;
  v.parameter(prefix + "gamma", gamma);
  v.parameter(prefix + "beta", beta);
  v.buffer(prefix + "running_mean", running_mean);
  v.buffer(prefix + "running_var", running_var);
}

Linear::Linear(std::size_t in_features, std::size_t out_features, Rng& rng) {
  weight = Parameter("weight", kaiming_uniform({out_features, in_features}, in_features, rng));
  bias = Parameter("bias", Tensor::zeros({out_features}));
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, weight.tensor, bias.tensor); }

void Linear::visit(StateVisitor& v, const std::string& prefix) {
  v.parameter(prefix + "weight", weight);
  v.parameter(prefix + "bias", bias);
}

void copy_state(const std::vector<NamedState>& dst, const std::vector<NamedState>& src) {
  if (dst.size() != src.size()) {
    throw DimensionError("copy_state: " + std::to_string(dst.size()) + " vs " +
                         std::to_string(src.size()) + " state tensors");
  }
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].name != src[i].name || dst[i].tensor->shape() != src[i].tensor->shape()) {
      throw DimensionError("copy_state: '" + dst[i].name + "' " + shape_str(dst[i].tensor->shape()) +
                           " vs '" + src[i].name + "' " + shape_str(src[i].tensor->shape()));
    }
    auto from = src[i].tensor->data();
    std::copy(from.begin(), from.end(), dst[i].tensor->data().begin());
  }
}

}  // namespace cmac
