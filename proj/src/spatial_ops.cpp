#include <algorithm>
#include <cmath>

#include "cmac/ops.hpp"
#include "gemm.hpp"
#include "op_support.hpp"

namespace cmac {

using detail::attach;
using detail::grad_sink;
using detail::tracks;

namespace {

// Convolution geometry in 3-D form; 2-D convolutions use t = kt = 1.
struct ConvGeom {
  std::size_t n, cin, t, h, w;
  std::size_t cout, kt, kh, kw;
  std::size_t st, sh, sw, pt, ph, pw;
  std::size_t ot, oh, ow;

  std::size_t rows() const { return cin * kt * kh * kw; }  // im2col rows (K)
  std::size_t cols() const { return ot * oh * ow; }        // im2col cols (P)
  std::size_t in_sample() const { return cin * t * h * w; }
  bool pointwise() const {
    return kt == 1 && kh == 1 && kw == 1 && st == 1 && sh == 1 && sw == 1 && pt == 0 && ph == 0 &&
           pw == 0;
  }
};

std::size_t out_extent(const char* op, const char* axis, std::size_t in, std::size_t k,
                       std::size_t stride, std::size_t pad) {
  if (stride == 0) throw DimensionError(std::string(op) + ": stride on " + axis + " must be positive");
  if (in + 2 * pad < k) {
    throw DimensionError(std::string(op) + ": kernel extent " + std::to_string(k) + " exceeds padded " +
                         axis + " extent " + std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - k) / stride + 1;
}

void im2col(const ConvGeom& g, const Scalar* x, Scalar* col) {
  const std::size_t p_count = g.cols();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t a = 0; a < g.kt; ++a)
      for (std::size_t b = 0; b < g.kh; ++b)
        for (std::size_t d = 0; d < g.kw; ++d, ++row) {
          Scalar* dst = col + row * p_count;
          for (std::size_t ot = 0; ot < g.ot; ++ot) {
            const std::ptrdiff_t it = static_cast<std::ptrdiff_t>(ot * g.st + a) - static_cast<std::ptrdiff_t>(g.pt);
            for (std::size_t oh = 0; oh < g.oh; ++oh, dst += g.ow) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.sh + b) - static_cast<std::ptrdiff_t>(g.ph);
              if (it < 0 || it >= static_cast<std::ptrdiff_t>(g.t) || ih < 0 ||
                  ih >= static_cast<std::ptrdiff_t>(g.h)) {
                std::fill(dst, dst + g.ow, Scalar(0));
                continue;
              }
              const Scalar* src = x + ((c * g.t + it) * g.h + ih) * g.w;
              for (std::size_t ow = 0; ow < g.ow; ++ow) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.sw + d) - static_cast<std::ptrdiff_t>(g.pw);
                dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) ? Scalar(0) : src[iw];
              }
            }
          }
        }
}

void col2im_add(const ConvGeom& g, const Scalar* col, Scalar* x) {
  const std::size_t p_count = g.cols();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t a = 0; a < g.kt; ++a)
      for (std::size_t b = 0; b < g.kh; ++b)
        for (std::size_t d = 0; d < g.kw; ++d, ++row) {
          const Scalar* src = col + row * p_count;
          for (std::size_t ot = 0; ot < g.ot; ++ot) {
            const std::ptrdiff_t it = static_cast<std::ptrdiff_t>(ot * g.st + a) - static_cast<std::ptrdiff_t>(g.pt);
            for (std::size_t oh = 0; oh < g.oh; ++oh, src += g.ow) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.sh + b) - static_cast<std::ptrdiff_t>(g.ph);
              if (it < 0 || it >= static_cast<std::ptrdiff_t>(g.t) || ih < 0 ||
                  ih >= static_cast<std::ptrdiff_t>(g.h))
                continue;
              Scalar* dst = x + ((c * g.t + it) * g.h + ih) * g.w;
              for (std::size_t ow = 0; ow < g.ow; ++ow) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.sw + d) - static_cast<std::ptrdiff_t>(g.pw);
                if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.w)) dst[iw] += src[ow];
              }
            }
          }
        }
}

Tensor conv_core(const char* op, const Tensor& input, const Tensor& kernel, const Tensor& bias,
                 const ConvGeom& g, Shape out_shape) {
  const std::size_t K = g.rows(), P = g.cols();
  const bool track = tracks({&input, &kernel, &bias});
  const bool pointwise = g.pointwise();
  auto x = input.data();
  auto w = kernel.data();

  std::vector<Scalar> out(g.n * g.cout * P, Scalar(0));
  std::vector<Scalar> cols;
  if (!pointwise) cols.resize((track ? g.n : 1) * K * P);
  for (std::size_t s = 0; s < g.n; ++s) {
    const Scalar* col;
    if (pointwise) {
      col = x.data() + s * g.in_sample();
    } else {
      Scalar* buf = cols.data() + (track ? s * K * P : 0);
      im2col(g, x.data() + s * g.in_sample(), buf);
      col = buf;
    }
    Scalar* y = out.data() + s * g.cout * P;
    if (bias.defined())
      for (std::size_t co = 0; co < g.cout; ++co) std::fill(y + co * P, y + (co + 1) * P, bias.data()[co]);
    detail::gemm(false, false, g.cout, P, K, 1, w.data(), K, col, P, 1, y, P);
  }

  Tensor r(std::move(out_shape), std::move(out));
  if (track) {
    std::shared_ptr<TensorImpl> bi = bias.defined() ? bias.impl() : nullptr;
    attach(r, op, {&input, &kernel, &bias},
           [xi = input.impl(), wi = kernel.impl(), bi, g, cols = std::move(cols), pointwise, K,
            P](std::span<const Scalar> gy) {
             Scalar* gx = grad_sink(xi);
             Scalar* gw = grad_sink(wi);
             Scalar* gb = grad_sink(bi);
             std::vector<Scalar> dcol(gx && !pointwise ? K * P : 0);
             for (std::size_t s = 0; s < g.n; ++s) {
               const Scalar* col =
                   pointwise ? xi->data.data() + s * g.in_sample() : cols.data() + s * K * P;
               const Scalar* gys = gy.data() + s * g.cout * P;
               if (gw) detail::gemm(false, true, g.cout, K, P, 1, gys, P, col, P, 1, gw, K);
               if (gb) {
                 for (std::size_t co = 0; co < g.cout; ++co) {
                   Scalar acc = 0;
                   for (std::size_t p = 0; p < P; ++p) acc += gys[co * P + p];
                   gb[co] += acc;
                 }
               }
               if (gx) {
                 Scalar* target = pointwise ? gx + s * g.in_sample() : dcol.data();
                 detail::gemm(true, false, K, P, g.cout, 1, wi->data.data(), K, gys, P, pointwise ? 1 : 0, target, P);
                 if (!pointwise) col2im_add(g, dcol.data(), gx + s * g.in_sample());
               }
             }
           });
  }
  return r;
}

void check_bias(const char* op, const Tensor& bias, std::size_t cout) {
  if (bias.defined() && bias.shape() != Shape{cout}) {
    throw DimensionError(std::string(op) + ": bias shape " + shape_str(bias.shape()) +
                         " does not match kernel output channels (axis 0) = " + std::to_string(cout));
  }
}

std::string channel_mismatch(const char* op, std::size_t input_axis, std::size_t have, std::size_t want) {
  return std::string(op) + ": input channel axis " + std::to_string(input_axis) + " has " +
         std::to_string(have) + " but kernel axis 1 expects " + std::to_string(want);
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::array<std::size_t, 3> stride, std::array<std::size_t, 3> padding) {
  const bool batched = input.dim() == 5;
  if (!batched && input.dim() != 4) {
    throw DimensionError("conv3d: input must be C x T x H x W or N x C x T x H x W, got " +
                         shape_str(input.shape()));
  }
  detail::require_rank("conv3d", kernel, 5, "kernel");
  const Shape& s = input.shape();
  const std::size_t off = batched ? 1 : 0;
  ConvGeom g{};
  g.n = batched ? s[0] : 1;
  g.cin = s[off];
  g.t = s[off + 1];
  g.h = s[off + 2];
  g.w = s[off + 3];
  const Shape& k = kernel.shape();
  if (k[1] != g.cin) throw DimensionError(channel_mismatch("conv3d", off, g.cin, k[1]));
  g.cout = k[0];
  g.kt = k[2];
  g.kh = k[3];
  g.kw = k[4];
  g.st = stride[0];
  g.sh = stride[1];
  g.sw = stride[2];
  g.pt = padding[0];
  g.ph = padding[1];
  g.pw = padding[2];
  g.ot = out_extent("conv3d", "T", g.t, g.kt, g.st, g.pt);
  g.oh = out_extent("conv3d", "H", g.h, g.kh, g.sh, g.ph);
  g.ow = out_extent("conv3d", "W", g.w, g.kw, g.sw, g.pw);
  check_bias("conv3d", bias, g.cout);
  Shape out = batched ? Shape{g.n, g.cout, g.ot, g.oh, g.ow} : Shape{g.cout, g.ot, g.oh, g.ow};
  return conv_core("conv3d", input, kernel, bias, g, std::move(out));
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::array<std::size_t, 2> stride, std::array<std::size_t, 2> padding) {
  const bool batched = input.dim() == 4;
  if (!batched && input.dim() != 3) {
    throw DimensionError("conv2d: input must be C x H x W or N x C x H x W, got " +
                         shape_str(input.shape()));
  }
  detail::require_rank("conv2d", kernel, 4, "kernel");
  const Shape& s = input.shape();
  const std::size_t off = batched ? 1 : 0;
  ConvGeom g{};
  g.n = batched ? s[0] : 1;
  g.cin = s[off];
  g.t = 1;
  g.h = s[off + 1];
  g.w = s[off + 2];
  const Shape& k = kernel.shape();
  if (k[1] != g.cin) throw DimensionError(channel_mismatch("conv2d", off, g.cin, k[1]));
  g.cout = k[0];
  g.kt = 1;
  g.kh = k[2];
  g.kw = k[3];
  g.st = 1;
  g.sh = stride[0];
  g.sw = stride[1];
  g.pt = 0;
  g.ph = padding[0];
  g.pw = padding[1];
  g.ot = 1;
  g.oh = out_extent("conv2d", "H", g.h, g.kh, g.sh, g.ph);
  g.ow = out_extent("conv2d", "W", g.w, g.kw, g.sw, g.pw);
  check_bias("conv2d", bias, g.cout);
  Shape out = batched ? Shape{g.n, g.cout, g.oh, g.ow} : Shape{g.cout, g.oh, g.ow};
  return conv_core("conv2d", input, kernel, bias, g, std::move(out));
}

Tensor global_avg_pool(const Tensor& a, std::size_t lead) {
  const Shape& s = a.shape();
  if (s.size() <= lead) {
    throw DimensionError("global_avg_pool: need at least one axis after the first " +
                         std::to_string(lead) + ", got " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < lead; ++i) outer *= s[i];
  for (std::size_t i = lead; i < s.size(); ++i) inner *= s[i];
  if (inner == 0) throw DimensionError("global_avg_pool: empty spatial extent in " + shape_str(s));
  Shape out_shape(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(lead));
  out_shape.resize(s.size(), 1);
  auto x = a.data();
  std::vector<Scalar> out(outer);
  for (std::size_t o = 0; o < outer; ++o) {
    Scalar acc = 0;
    for (std::size_t i = 0; i < inner; ++i) acc += x[o * inner + i];
    out[o] = acc / static_cast<Scalar>(inner);
  }
  Tensor r(std::move(out_shape), std::move(out));
  if (tracks({&a})) {
    attach(r, "global_avg_pool", {&a}, [ai = a.impl(), outer, inner](std::span<const Scalar> g) {
      Scalar* ga = grad_sink(ai);
      const Scalar inv = Scalar(1) / static_cast<Scalar>(inner);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) ga[o * inner + i] += g[o] * inv;
    });
  }
  return r;
}

namespace {

// Maps every output cell of a resampling op to its source cells. Each output
// value is the mean of its source list.
struct Resample {
  std::vector<std::size_t> offsets;  // flattened source indices, per output cell
  std::size_t per_cell = 0;
};

// Enumerates the multi-index of a grid in row-major order.
template <class F>
void for_each_index(const Shape& grid, F f) {
  const std::size_t total = numel(grid);
  std::vector<std::size_t> idx(grid.size(), 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    f(idx);
    for (std::size_t ax = grid.size(); ax-- > 0;) {
      if (++idx[ax] < grid[ax]) break;
      idx[ax] = 0;
    }
  }
}

std::size_t flat_index(const std::vector<std::size_t>& idx, const Shape& grid) {
  std::size_t f = 0;
  for (std::size_t ax = 0; ax < grid.size(); ++ax) f = f * grid[ax] + idx[ax];
  return f;
}

Tensor apply_resample(const char* op, const Tensor& a, std::size_t lead, const Shape& in_grid,
                      const Shape& out_grid, Resample plan) {
  const Shape& s = a.shape();
  std::size_t outer = 1;
  for (std::size_t i = 0; i < lead; ++i) outer *= s[i];
  const std::size_t in_cells = numel(in_grid), out_cells = numel(out_grid);
  const Scalar inv = Scalar(1) / static_cast<Scalar>(plan.per_cell);
  auto x = a.data();
  std::vector<Scalar> out(outer * out_cells);
  for (std::size_t o = 0; o < outer; ++o) {
    const Scalar* src = x.data() + o * in_cells;
    for (std::size_t c = 0; c < out_cells; ++c) {
      Scalar acc = 0;
      for (std::size_t j = 0; j < plan.per_cell; ++j) acc += src[plan.offsets[c * plan.per_cell + j]];
      out[o * out_cells + c] = acc * inv;
    }
  }
  Shape out_shape(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(lead));
  out_shape.insert(out_shape.end(), out_grid.begin(), out_grid.end());
  Tensor r(std::move(out_shape), std::move(out));
  if (tracks({&a})) {
    attach(r, op, {&a},
           [ai = a.impl(), plan = std::move(plan), outer, in_cells, out_cells, inv](
               std::span<const Scalar> g) {
             Scalar* ga = grad_sink(ai);
             for (std::size_t o = 0; o < outer; ++o)
               for (std::size_t c = 0; c < out_cells; ++c) {
                 const Scalar v = g[o * out_cells + c] * inv;
                 for (std::size_t j = 0; j < plan.per_cell; ++j)
                   ga[o * in_cells + plan.offsets[c * plan.per_cell + j]] += v;
               }
           });
  }
  return r;
}

}  // namespace

Tensor downsample_avg2(const Tensor& a, std::size_t lead) {
  const Shape& s = a.shape();
  if (s.size() <= lead) {
    throw DimensionError("downsample_avg2: no axes after the first " + std::to_string(lead) +
                         " in " + shape_str(s));
  }
  Shape in_grid(s.begin() + static_cast<std::ptrdiff_t>(lead), s.end());
  Shape out_grid = in_grid;
  for (std::size_t ax = 0; ax < out_grid.size(); ++ax) {
    out_grid[ax] /= 2;
    if (out_grid[ax] == 0) {
      throw DimensionError("downsample_avg2: axis " + std::to_string(lead + ax) + " of " +
                           shape_str(s) + " is too small to halve");
    }
  }
  const std::size_t rank = in_grid.size();
  Resample plan;
  plan.per_cell = std::size_t{1} << rank;
  plan.offsets.reserve(numel(out_grid) * plan.per_cell);
  std::vector<std::size_t> src(rank);
  for_each_index(out_grid, [&](const std::vector<std::size_t>& idx) {
    for (std::size_t corner = 0; corner < plan.per_cell; ++corner) {
      for (std::size_t ax = 0; ax < rank; ++ax) src[ax] = 2 * idx[ax] + ((corner >> (rank - 1 - ax)) & 1u);
      plan.offsets.push_back(flat_index(src, in_grid));
    }
  });
  return apply_resample("downsample_avg2", a, lead, in_grid, out_grid, std::move(plan));
}

Tensor upsample_nearest(const Tensor& a, const Shape& grid, std::size_t lead) {
  const Shape& s = a.shape();
  if (s.size() != lead + grid.size()) {
    throw DimensionError("upsample_nearest: " + shape_str(s) + " has no grid of rank " +
                         std::to_string(grid.size()) + " after " + std::to_string(lead) + " axes");
  }
  Shape in_grid(s.begin() + static_cast<std::ptrdiff_t>(lead), s.end());
  for (std::size_t ax = 0; ax < grid.size(); ++ax) {
    if (in_grid[ax] == 0 || grid[ax] == 0) {
      throw DimensionError("upsample_nearest: empty grid axis " + std::to_string(lead + ax));
    }
  }
  Resample plan;
  plan.per_cell = 1;
  plan.offsets.reserve(numel(grid));
  std::vector<std::size_t> src(grid.size());
  for_each_index(grid, [&](const std::vector<std::size_t>& idx) {
    for (std::size_t ax = 0; ax < grid.size(); ++ax)
      src[ax] = std::min(idx[ax] * in_grid[ax] / grid[ax], in_grid[ax] - 1);
    plan.offsets.push_back(flat_index(src, in_grid));
  });
  return apply_resample("upsample_nearest", a, lead, in_grid, grid, std::move(plan));
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool train, Scalar momentum, Scalar eps) {
  const Shape& s = x.shape();
  if (s.size() < 3) throw DimensionError("batch_norm: expected N x C x grid, got " + shape_str(s));
  const std::size_t n = s[0], c = s[1];
  std::size_t cells = 1;
  for (std::size_t i = 2; i < s.size(); ++i) cells *= s[i];
  for (const Tensor* p : {&gamma, &beta, static_cast<const Tensor*>(&running_mean), static_cast<const Tensor*>(&running_var)}) {
    if (p->shape() != Shape{c}) {
      throw DimensionError("batch_norm: per-channel tensor " + shape_str(p->shape()) +
                           " does not match channel axis 1 = " + std::to_string(c));
    }
  }
  const std::size_t count = n * cells;
  auto xd = x.data();
  std::vector<Scalar> mu(c), inv_std(c);
  if (train) {
    if (count < 2) throw DimensionError("batch_norm: train mode needs more than one value per channel");
    for (std::size_t ch = 0; ch < c; ++ch) {
      Scalar acc = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < cells; ++i) acc += xd[(b * c + ch) * cells + i];
      const Scalar m = acc / static_cast<Scalar>(count);
      Scalar var = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < cells; ++i) {
          const Scalar d = xd[(b * c + ch) * cells + i] - m;
          var += d * d;
        }
      var /= static_cast<Scalar>(count);
      mu[ch] = m;
      inv_std[ch] = Scalar(1) / std::sqrt(var + eps);
      auto rm = running_mean.data();
      auto rv = running_var.data();
      rm[ch] = (Scalar(1) - momentum) * rm[ch] + momentum * m;
      rv[ch] = (Scalar(1) - momentum) * rv[ch] +
               momentum * var * static_cast<Scalar>(count) / static_cast<Scalar>(count - 1);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = running_mean.data()[ch];
      inv_std[ch] = Scalar(1) / std::sqrt(running_var.data()[ch] + eps);
    }
  }

  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<Scalar> xhat(xd.size()), out(xd.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < cells; ++i) {
        const std::size_t idx = (b * c + ch) * cells + i;
        xhat[idx] = (xd[idx] - mu[ch]) * inv_std[ch];
        out[idx] = gd[ch] * xhat[idx] + bd[ch];
      }
  Tensor r(s, std::move(out));
  if (tracks({&x, &gamma, &beta})) {
    attach(r, "batch_norm", {&x, &gamma, &beta},
           [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), xhat = std::move(xhat),
            inv_std = std::move(inv_std), n, c, cells, count, train](std::span<const Scalar> g) {
             Scalar* gx = grad_sink(xi);
             Scalar* gg = grad_sink(gi);
             Scalar* gb = grad_sink(bi);
             for (std::size_t ch = 0; ch < c; ++ch) {
               Scalar sum_g = 0, sum_gx = 0;
               for (std::size_t b = 0; b < n; ++b)
                 for (std::size_t i = 0; i < cells; ++i) {
                   const std::size_t idx = (b * c + ch) * cells + i;
                   sum_g += g[idx];
                   sum_gx += g[idx] * xhat[idx];
                 }
               if (gg) gg[ch] += sum_gx;
               if (gb) gb[ch] += sum_g;
               if (!gx) continue;
               const Scalar k = gi->data[ch] * inv_std[ch];
               if (train) {
                 const Scalar inv_count = Scalar(1) / static_cast<Scalar>(count);
                 for (std::size_t b = 0; b < n; ++b)
                   for (std::size_t i = 0; i < cells; ++i) {
                     const std::size_t idx = (b * c + ch) * cells + i;
                     gx[idx] += k * (g[idx] - sum_g * inv_count - xhat[idx] * sum_gx * inv_count);
                   }
               } else {
                 for (std::size_t b = 0; b < n; ++b)
                   for (std::size_t i = 0; i < cells; ++i) {
                     const std::size_t idx = (b * c + ch) * cells + i;
                     gx[idx] += k * g[idx];
                   }
               }
             }
           });
  }
  return r;
}

}  // namespace cmac
