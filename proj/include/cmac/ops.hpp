#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cmac/tensor.hpp"

// Differentiable tensor operations. Every op records a backward node when
// grad mode is on and at least one input requires grad.
//
// Layout conventions: "lead" is the number of leading axes that are kept
// as-is by pooling/resampling ops (1 for C x grid, 2 for N x C x grid).
namespace cmac {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar s);
Tensor add_scalar(const Tensor& a, Scalar s);
Tensor exp(const Tensor& a);
// Natural log with the input clamped at >= 1e-30.
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor clamp(const Tensor& a, Scalar lo, Scalar hi);
Tensor softmax(const Tensor& a, std::size_t axis);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Sums the last axis away.
Tensor sum_last(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
// Concatenates 2-D tensors with equal column counts along rows.
Tensor concat_rows(const std::vector<Tensor>& parts);

// [M x K] * [K x N]
Tensor matmul(const Tensor& a, const Tensor& b);
// x: [N x In], weight: [Out x In], bias: [Out] or undefined -> [N x Out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Cross-correlation (no kernel flip). Input is C x T x H x W or
// N x C x T x H x W; kernel is Cout x Cin x kT x kH x kW; bias is [Cout] or
// undefined.
Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::array<std::size_t, 3> stride, std::array<std::size_t, 3> padding);
// As conv3d with one fewer spatial axis.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::array<std::size_t, 2> stride, std::array<std::size_t, 2> padding);

// Mean over every axis after `lead`; the reduced axes are kept as size 1.
Tensor global_avg_pool(const Tensor& a, std::size_t lead = 1);
// 2x average pooling on every axis after `lead`; odd sizes floor (the last
// slice is dropped).
Tensor downsample_avg2(const Tensor& a, std::size_t lead = 1);
// Nearest-neighbour resampling of the axes after `lead` to `grid`. Index i
// reads source min(i * src / dst, src - 1).
Tensor upsample_nearest(const Tensor& a, const Shape& grid, std::size_t lead = 1);

// Per-channel normalisation of x (N x C x grid). In train mode the batch
// statistics (biased variance) normalise x and update the running buffers;
// in eval mode the running buffers are used.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool train, Scalar momentum = Scalar(0.1),
                  Scalar eps = Scalar(1e-5));

inline constexpr Scalar kCosineEps = Scalar(1e-12);

// dot(x, y) / max(|x| |y|, eps) for two equal-length vectors; returns a scalar.
// Gradient is zeroed when either vector is exactly zero.
Tensor cosine_similarity(const Tensor& x, const Tensor& y);
// filter: N x C, feat: N x C x grid -> N x grid of per-position cosines.
Tensor cosine_response(const Tensor& filter, const Tensor& feat);
// filter: N x C, feat: N x C x grid -> N x grid of per-position dot products.
Tensor dot_response(const Tensor& filter, const Tensor& feat);

// Rows scaled to unit L2 norm. Rows with norm <= 1e-12 map to zero with zero
// gradient.
Tensor l2_normalize_rows(const Tensor& x);

// Row-wise log(sum(exp(x))) over the entries whose mask byte is nonzero
// (all entries when mask is empty). x: N x M -> [N].
Tensor logsumexp_rows(const Tensor& x, const std::vector<std::uint8_t>& mask = {});

}  // namespace cmac
