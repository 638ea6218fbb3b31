#pragma once

#include <string>
#include <vector>

#include "cmac/parameter.hpp"
#include "cmac/tensor.hpp"

namespace cmac {

// Per-channel normalisation flavour used by every conv + norm pair.
//   batch:    batch statistics in train mode, running averages in eval mode.
//   identity: no normalisation at all (for tiny batches and ablations).
enum class NormKind { batch, identity };

std::string to_string(NormKind kind);
NormKind parse_norm_kind(const std::string& s);

// 2-D or 3-D convolution with bias; kernel/stride/padding have one entry per
// spatial axis.
class Conv {
 public:
  Conv(std::size_t in_channels, std::size_t out_channels, std::vector<std::size_t> kernel,
       std::vector<std::size_t> stride, std::vector<std::size_t> padding, Rng& rng);

  Tensor forward(const Tensor& x) const;
  Shape output_grid(const Shape& input_grid) const;
  void visit(StateVisitor& v, const std::string& prefix);

  std::size_t spatial_rank() const { return kernel_.size(); }
  std::size_t in_channels() const { return in_channels_; }
  std::size_t out_channels() const { return out_channels_; }

  Parameter weight;
  Parameter bias;

 private:
  std::size_t in_channels_, out_channels_;
  std::vector<std::size_t> kernel_, stride_, padding_;
};

class Norm {
 public:
  Norm(NormKind kind, std::size_t channels);

  Tensor forward(const Tensor& x, bool train);
  void visit(StateVisitor& v, const std::string& prefix);
  NormKind kind() const { return kind_; }

  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;

 private:
  NormKind kind_;
};

class Linear {
 public:
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void visit(StateVisitor& v, const std::string& prefix);

  Parameter weight;
  Parameter bias;
};

// Stops gradient tracking on every parameter of a module tree.
template <class Module>
void freeze(Module& m) {
  for (Parameter* p : collect_parameters(m)) {
    p->tensor.clear_grad();
    p->tensor.set_requires_grad(false);
  }
}

struct NamedState {
  std::string name;
  Tensor* tensor;
  bool is_parameter;
};

template <class Module>
std::vector<NamedState> collect_state(Module& m, const std::string& prefix = "") {
  struct Collector final : StateVisitor {
    std::vector<NamedState> out;
    void parameter(const std::string& n, Parameter& p) override { out.push_back({n, &p.tensor, true}); }
    void buffer(const std::string& n, Tensor& t) override { out.push_back({n, &t, false}); }
  } c;
  m.visit(c, prefix);
  return c.out;
}

// Copies every parameter value and buffer from `src` into the structurally
// identical `dst`. Throws DimensionError on any name or shape mismatch.
void copy_state(const std::vector<NamedState>& dst, const std::vector<NamedState>& src);

template <class Module>
void copy_module_state(Module& dst, Module& src) {
  copy_state(collect_state(dst), collect_state(src));
}

}  // namespace cmac
