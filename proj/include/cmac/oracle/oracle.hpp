#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

// Deliberately naive reference implementations for tests. Nothing in here
// calls the production tensor ops: values travel as plain row-major arrays of
// doubles and every kernel is written out as explicit loops.
namespace cmac::oracle {

struct Array {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Array() = default;
  explicit Array(std::vector<std::size_t> s, double fill = 0.0);
  Array(std::vector<std::size_t> s, std::vector<double> values);

  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }
};

// Raised when a loss function gives two different values for the same input.
class NondeterminismError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Central differences (f(x+h) - f(x-h)) / 2h for every coordinate. The
// coordinates are modified in place and restored bit-exactly afterwards.
template <class T>
std::vector<double> finite_diff_grad(const std::function<double()>& loss, const std::vector<T*>& coords,
                                     double h = 1e-5) {
  if (!(h > 0)) throw std::invalid_argument("finite_diff_grad: h must be positive");
  const double f0 = loss();
  const double f1 = loss();
  if (!(f0 == f1) && !(std::isnan(f0) && std::isnan(f1))) {
    throw NondeterminismError("finite_diff_grad: loss_fn returned " + std::to_string(f0) + " then " +
                              std::to_string(f1) + " for the same input");
  }
  std::vector<double> g(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    T* c = coords[i];
    const T keep = *c;
    *c = static_cast<T>(static_cast<double>(keep) + h);
    const double up = loss();
    *c = static_cast<T>(static_cast<double>(keep) - h);
    const double down = loss();
    *c = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// |a - b| / max(|a|, |b|, floor).
double relative_error(double a, double b, double floor = 1e-5);

// ---- loop kernels ---------------------------------------------------------

// x: N x Cin x T x H x W, k: Cout x Cin x kT x kH x kW, bias: [Cout] or empty.
Array conv3d_naive(const Array& x, const Array& k, const Array& bias, const std::vector<std::size_t>& stride,
                   const std::vector<std::size_t>& pad);
// x: N x Cin x H x W, k: Cout x Cin x kH x kW.
Array conv2d_naive(const Array& x, const Array& k, const Array& bias, const std::vector<std::size_t>& stride,
                   const std::vector<std::size_t>& pad);
// 1x1 convolution written as W (Cout x Cin) times the C x P matrix of each item.
Array pointwise_conv_matmul(const Array& x, const Array& w, const Array& bias);
// Train-mode batch norm over N x C x grid (biased variance, eps 1e-5).
Array batch_norm_train_naive(const Array& x, const Array& gamma, const Array& beta, double eps = 1e-5);
// N x C x grid -> N x C means.
Array global_avg_pool_naive(const Array& x);
double dot_naive(const double* x, const double* y, std::size_t n);
double cosine_naive(const double* x, const double* y, std::size_t n);
// filter N x C, map N x C x grid -> N x grid.
Array response_naive(const Array& filter, const Array& map, bool cosine);
// 0 = none (clamp), 1 = softmax over each item's cells, 2 = (x + 1) / 2.
Array normalize_naive(const Array& raw, int mode);
// 2x average pooling of every axis after the first `lead`; odd sizes floor.
Array downsample_naive(const Array& x, std::size_t lead);
// Nearest resampling of every axis after `lead` to `grid`.
Array upsample_naive(const Array& x, const std::vector<std::size_t>& grid, std::size_t lead);
// Full-resolution response plus `scales - 1` successive halvings, each
// normalised, upsampled and averaged.
Array pyramid_naive(const Array& filter, const Array& map, std::size_t scales, int mode);
// Rows divided by their L2 norm; rows with norm <= 1e-12 become zero.
Array l2_normalize_naive(const Array& x);
// x (N x In) W^T + b.
Array linear_naive(const Array& x, const Array& w, const Array& b);
double sigmoid_naive(double x);
// sum of squared differences over the element count.
double consistency_naive(const Array& s, const Array& s_hat);

// ---- losses ---------------------------------------------------------------

struct LossConfig {
  double tau = 0.07;
  double lambda = 1.5;
  bool within_modal_negatives = true;
  bool within_modal_positives = false;
};

// Rows are embeddings. Empty arrays mean "none". Same-modality batch peers
// are the anchors themselves (z_v for the visual direction).
struct LossBatch {
  Array z_v, z_a;          // anchors
  Array key_v, key_a;      // target keys, row n is the positive
  Array bank_v, bank_a;    // memory bank entries
  Array pos_v, pos_a;      // second views (positives mode)
  Array s_v, s_hat_v, s_a, s_hat_a;  // attention maps, any equal shapes
};

struct BruteLosses {
  double nce_va = 0, nce_av = 0;  // noise-contrastive loss per direction
  double nce_sym = 0;             // nce_va + nce_av
  double cl_va = 0, cl_av = 0;    // remoulded loss per direction
  double ac_v = 0, ac_a = 0;
  double total = 0;               // cl_va + cl_av + lambda (ac_v + ac_a)
};

BruteLosses brute_force_losses(const LossBatch& batch, const LossConfig& cfg);

// ---- monolithic forward ---------------------------------------------------

struct BlockSpec {
  std::size_t out_channels = 0;
  std::vector<std::size_t> kernel, stride, padding;
  bool relu = true;
};

struct EncoderSpec {
  std::size_t in_channels = 0;
  std::vector<std::size_t> grid;
  std::vector<BlockSpec> blocks;
  bool batch_norm = true;
};

struct PipelineConfig {
  EncoderSpec visual, audio;
  bool transform_batch_norm = true;
  std::size_t head_kernel = 3;
  int norm_mode = 2;
  std::size_t scales = 2;
  LossConfig loss;
};

// Flat parameter values keyed by the model's dotted state names, e.g.
// "visual.online.encoder.block0.conv.weight".
using ParamMap = std::map<std::string, Array>;

struct PipelineInput {
  Array clips, specs;    // N x C x grid
  Array clips2, specs2;  // second views (positives mode)
  Array bank_v, bank_a;  // K x D, possibly empty
};

struct PipelineOutput {
  Array s_v, s_a, s_hat_v, s_hat_a;
  Array z_v, z_a, key_v, key_a;
  BruteLosses loss;
};

// Train-mode forward pass and full objective written in one place.
PipelineOutput naive_reference_pipeline(const PipelineConfig& cfg, const ParamMap& params, const PipelineInput& in);

}  // namespace cmac::oracle
