#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cmac/oracle/oracle.hpp"

namespace cmac::oracle {

namespace {

std::size_t product(const std::vector<std::size_t>& s, std::size_t from = 0) {
  std::size_t p = 1;
  for (std::size_t i = from; i < s.size(); ++i) p *= s[i];
  return p;
}

void need(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("oracle: " + what);
}

// Unravels a flat index over `grid` into per-axis coordinates.
std::vector<std::size_t> unravel(std::size_t flat, const std::vector<std::size_t>& grid) {
  std::vector<std::size_t> idx(grid.size());
  for (std::size_t ax = grid.size(); ax-- > 0;) {
    idx[ax] = flat % grid[ax];
    flat /= grid[ax];
  }
  return idx;
}

std::size_t ravel(const std::vector<std::size_t>& idx, const std::vector<std::size_t>& grid) {
  std::size_t flat = 0;
  for (std::size_t ax = 0; ax < grid.size(); ++ax) flat = flat * grid[ax] + idx[ax];
  return flat;
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  need(in + 2 * p >= k, "kernel larger than padded input");
  return (in + 2 * p - k) / s + 1;
}

}  // namespace

Array::Array(std::vector<std::size_t> s, double fill) : shape(std::move(s)), v(product(shape), fill) {}

Array::Array(std::vector<std::size_t> s, std::vector<double> values) : shape(std::move(s)), v(std::move(values)) {
  need(v.size() == product(shape), "array data does not match its shape");
}

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

Array conv3d_naive(const Array& x, const Array& k, const Array& bias, const std::vector<std::size_t>& stride,
                   const std::vector<std::size_t>& pad) {
  need(x.shape.size() == 5 && k.shape.size() == 5 && x.shape[1] == k.shape[1], "conv3d shapes");
  const std::size_t n = x.shape[0], ci = x.shape[1], T = x.shape[2], H = x.shape[3], W = x.shape[4];
  const std::size_t co = k.shape[0], kt = k.shape[2], kh = k.shape[3], kw = k.shape[4];
  const std::size_t To = conv_out(T, kt, stride[0], pad[0]);
  const std::size_t Ho = conv_out(H, kh, stride[1], pad[1]);
  const std::size_t Wo = conv_out(W, kw, stride[2], pad[2]);
  Array y({n, co, To, Ho, Wo});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t t = 0; t < To; ++t)
        for (std::size_t h = 0; h < Ho; ++h)
          for (std::size_t w = 0; w < Wo; ++w) {
            double acc = bias.empty() ? 0.0 : bias[o];
            for (std::size_t c = 0; c < ci; ++c)
              for (std::size_t dt = 0; dt < kt; ++dt)
                for (std::size_t dh = 0; dh < kh; ++dh)
                  for (std::size_t dw = 0; dw < kw; ++dw) {
                    const long it = static_cast<long>(t * stride[0] + dt) - static_cast<long>(pad[0]);
                    const long ih = static_cast<long>(h * stride[1] + dh) - static_cast<long>(pad[1]);
                    const long iw = static_cast<long>(w * stride[2] + dw) - static_cast<long>(pad[2]);
                    if (it < 0 || ih < 0 || iw < 0 || it >= static_cast<long>(T) || ih >= static_cast<long>(H) ||
                        iw >= static_cast<long>(W))
                      continue;
                    acc += x[(((b * ci + c) * T + it) * H + ih) * W + iw] *
                           k[(((o * ci + c) * kt + dt) * kh + dh) * kw + dw];
                  }
            y[(((b * co + o) * To + t) * Ho + h) * Wo + w] = acc;
          }
  return y;
}

Array conv2d_naive(const Array& x, const Array& k, const Array& bias, const std::vector<std::size_t>& stride,
                   const std::vector<std::size_t>& pad) {
  need(x.shape.size() == 4 && k.shape.size() == 4 && x.shape[1] == k.shape[1], "conv2d shapes");
  const std::size_t n = x.shape[0], ci = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::size_t co = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  const std::size_t Ho = conv_out(H, kh, stride[0], pad[0]);
  const std::size_t Wo = conv_out(W, kw, stride[1], pad[1]);
  Array y({n, co, Ho, Wo});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t h = 0; h < Ho; ++h)
        for (std::size_t w = 0; w < Wo; ++w) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t dh = 0; dh < kh; ++dh)
              for (std::size_t dw = 0; dw < kw; ++dw) {
                const long ih = static_cast<long>(h * stride[0] + dh) - static_cast<long>(pad[0]);
                const long iw = static_cast<long>(w * stride[1] + dw) - static_cast<long>(pad[1]);
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) || iw >= static_cast<long>(W)) continue;
                acc += x[((b * ci + c) * H + ih) * W + iw] * k[((o * ci + c) * kh + dh) * kw + dw];
              }
          y[((b * co + o) * Ho + h) * Wo + w] = acc;
        }
  return y;
}

Array pointwise_conv_matmul(const Array& x, const Array& w, const Array& bias) {
  need(x.shape.size() >= 3, "pointwise input must be N x C x grid");
  const std::size_t n = x.shape[0], ci = x.shape[1], cells = product(x.shape, 2);
  const std::size_t co = w.shape[0];
  need(product(w.shape, 1) == ci, "pointwise weight does not match input channels");
  std::vector<std::size_t> shape = x.shape;
  shape[1] = co;
  Array y(shape);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t p = 0; p < cells; ++p) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (std::size_t c = 0; c < ci; ++c) acc += w[o * ci + c] * x[(b * ci + c) * cells + p];
        y[(b * co + o) * cells + p] = acc;
      }
  return y;
}

Array batch_norm_train_naive(const Array& x, const Array& gamma, const Array& beta, double eps) {
  const std::size_t n = x.shape[0], c = x.shape[1], cells = product(x.shape, 2);
  Array y(x.shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < cells; ++p) s += x[(b * c + ch) * cells + p];
    const double mean = s / static_cast<double>(n * cells);
    double ss = 0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < cells; ++p) {
        const double d = x[(b * c + ch) * cells + p] - mean;
        ss += d * d;
      }
    const double var = ss / static_cast<double>(n * cells);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < cells; ++p) {
        const std::size_t i = (b * c + ch) * cells + p;
        y[i] = (x[i] - mean) * inv * gamma[ch] + beta[ch];
      }
  }
  return y;
}

Array global_avg_pool_naive(const Array& x) {
  const std::size_t n = x.shape[0], c = x.shape[1], cells = product(x.shape, 2);
  need(cells > 0, "pooling over an empty grid");
  Array y({n, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0;
      for (std::size_t p = 0; p < cells; ++p) s += x[(b * c + ch) * cells + p];
      y[b * c + ch] = s / static_cast<double>(cells);
    }
  return y;
}

double dot_naive(const double* x, const double* y, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

double cosine_naive(const double* x, const double* y, std::size_t n) {
  double nx = 0, ny = 0;
  for (std::size_t i = 0; i < n; ++i) {
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  return dot_naive(x, y, n) / std::max(std::sqrt(nx) * std::sqrt(ny), 1e-12);
}

Array response_naive(const Array& filter, const Array& map, bool cosine) {
  const std::size_t n = map.shape[0], c = map.shape[1], cells = product(map.shape, 2);
  need(filter.shape.size() == 2 && filter.shape[0] == n && filter.shape[1] == c, "filter does not match map");
  std::vector<std::size_t> shape{n};
  shape.insert(shape.end(), map.shape.begin() + 2, map.shape.end());
  Array y(shape);
  std::vector<double> local(c);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < cells; ++p) {
      for (std::size_t ch = 0; ch < c; ++ch) local[ch] = map[(b * c + ch) * cells + p];
      const double* f = filter.v.data() + b * c;
      y[b * cells + p] = cosine ? cosine_naive(f, local.data(), c) : dot_naive(f, local.data(), c);
    }
  return y;
}

Array normalize_naive(const Array& raw, int mode) {
  Array y = raw;
  const std::size_t n = raw.shape[0], cells = product(raw.shape, 1);
  for (std::size_t b = 0; b < n; ++b) {
    if (mode == 1) {
      double hi = -INFINITY;
      for (std::size_t p = 0; p < cells; ++p) hi = std::max(hi, raw[b * cells + p]);
      double z = 0;
      for (std::size_t p = 0; p < cells; ++p) z += std::exp(raw[b * cells + p] - hi);
      for (std::size_t p = 0; p < cells; ++p) y[b * cells + p] = std::exp(raw[b * cells + p] - hi) / z;
    } else {
      for (std::size_t p = 0; p < cells; ++p) {
        const double r = raw[b * cells + p];
        y[b * cells + p] = mode == 2 ? (r + 1) * 0.5 : std::min(1.0, std::max(0.0, r));
      }
    }
  }
  return y;
}

Array downsample_naive(const Array& x, std::size_t lead) {
  const std::vector<std::size_t> in_grid(x.shape.begin() + static_cast<long>(lead), x.shape.end());
  std::vector<std::size_t> out_grid = in_grid;
  for (auto& g : out_grid) {
    g /= 2;
    need(g > 0, "axis too small to halve");
  }
  std::vector<std::size_t> shape(x.shape.begin(), x.shape.begin() + static_cast<long>(lead));
  shape.insert(shape.end(), out_grid.begin(), out_grid.end());
  Array y(shape);
  const std::size_t items = product(shape) / product(out_grid), rank = in_grid.size();
  const std::size_t in_cells = product(in_grid), out_cells = product(out_grid), corners = std::size_t{1} << rank;
  for (std::size_t it = 0; it < items; ++it)
    for (std::size_t o = 0; o < out_cells; ++o) {
      const auto idx = unravel(o, out_grid);
      double s = 0;
      for (std::size_t corner = 0; corner < corners; ++corner) {
        std::vector<std::size_t> src(rank);
        for (std::size_t ax = 0; ax < rank; ++ax) src[ax] = 2 * idx[ax] + ((corner >> ax) & 1u);
        s += x[it * in_cells + ravel(src, in_grid)];
      }
      y[it * out_cells + o] = s / static_cast<double>(corners);
    }
  return y;
}

Array upsample_naive(const Array& x, const std::vector<std::size_t>& grid, std::size_t lead) {
  const std::vector<std::size_t> in_grid(x.shape.begin() + static_cast<long>(lead), x.shape.end());
  need(in_grid.size() == grid.size(), "upsample rank");
  std::vector<std::size_t> shape(x.shape.begin(), x.shape.begin() + static_cast<long>(lead));
  shape.insert(shape.end(), grid.begin(), grid.end());
  Array y(shape);
  const std::size_t items = product(shape) / product(grid), in_cells = product(in_grid), out_cells = product(grid);
  for (std::size_t it = 0; it < items; ++it)
    for (std::size_t o = 0; o < out_cells; ++o) {
      auto idx = unravel(o, grid);
      for (std::size_t ax = 0; ax < grid.size(); ++ax)
        idx[ax] = std::min(idx[ax] * in_grid[ax] / grid[ax], in_grid[ax] - 1);
      y[it * out_cells + o] = x[it * in_cells + ravel(idx, in_grid)];
    }
  return y;
}

Array pyramid_naive(const Array& filter, const Array& map, std::size_t scales, int mode) {
  need(scales >= 1, "pyramid needs at least one scale");
  const std::vector<std::size_t> grid(map.shape.begin() + 2, map.shape.end());
  std::vector<Array> levels;
  Array m = map;
  for (std::size_t s = 0; s < scales; ++s) {
    if (s > 0) m = downsample_naive(m, 2);
    Array r = normalize_naive(response_naive(filter, m, mode == 2), mode);
    levels.push_back(s == 0 ? r : upsample_naive(r, grid, 1));
  }
  if (scales == 1) return levels[0];
  Array out = levels[0];
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0;
    for (const auto& l : levels) s += l[i];
    out[i] = s / static_cast<double>(scales);
  }
  return out;
}

Array l2_normalize_naive(const Array& x) {
  const std::size_t n = x.shape[0], d = x.shape[1];
  Array y(x.shape);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += x[r * d + j] * x[r * d + j];
    const double norm = std::sqrt(s);
    if (norm <= 1e-12) continue;
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] = x[r * d + j] / norm;
  }
  return y;
}

Array linear_naive(const Array& x, const Array& w, const Array& b) {
  const std::size_t n = x.shape[0], in = x.shape[1], out = w.shape[0];
  need(w.shape[1] == in, "linear weight does not match input");
  Array y({n, out});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b.empty() ? 0.0 : b[o];
      for (std::size_t i = 0; i < in; ++i) acc += x[r * in + i] * w[o * in + i];
      y[r * out + o] = acc;
    }
  return y;
}

double sigmoid_naive(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double consistency_naive(const Array& s, const Array& s_hat) {
  need(s.shape == s_hat.shape, "consistency maps differ in shape");
  double acc = 0;
  for (std::size_t i = 0; i < s.size(); ++i) acc += (s[i] - s_hat[i]) * (s[i] - s_hat[i]);
  return acc / static_cast<double>(s.size());
}

namespace {

const Array& param(const ParamMap& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw std::out_of_range("oracle: missing parameter '" + name + "'");
  return it->second;
}

Array conv_any(const Array& x, const Array& k, const Array& b, const std::vector<std::size_t>& stride,
               const std::vector<std::size_t>& pad) {
  return x.shape.size() == 5 ? conv3d_naive(x, k, b, stride, pad) : conv2d_naive(x, k, b, stride, pad);
}

Array relu_naive(Array x) {
  for (double& v : x.v) v = v > 0 ? v : 0.0;
  return x;
}

Array encoder_naive(const EncoderSpec& spec, const ParamMap& p, const std::string& prefix, const Array& x) {
  Array h = x;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const BlockSpec& blk = spec.blocks[i];
    const std::string bp = prefix + "block" + std::to_string(i) + ".";
    h = conv_any(h, param(p, bp + "conv.weight"), param(p, bp + "conv.bias"), blk.stride, blk.padding);
    if (spec.batch_norm) h = batch_norm_train_naive(h, param(p, bp + "norm.gamma"), param(p, bp + "norm.beta"));
    if (blk.relu) h = relu_naive(std::move(h));
  }
  return h;
}

Array transform_naive(const PipelineConfig& cfg, const ParamMap& p, const std::string& prefix, const Array& feat) {
  Array t = pointwise_conv_matmul(feat, param(p, prefix + "conv.weight"), param(p, prefix + "conv.bias"));
  if (cfg.transform_batch_norm) t = batch_norm_train_naive(t, param(p, prefix + "norm.gamma"), param(p, prefix + "norm.beta"));
  return t;
}

Array project_naive(const ParamMap& p, const std::string& prefix, const Array& kappa) {
  return l2_normalize_naive(linear_naive(kappa, param(p, prefix + "fc.weight"), param(p, prefix + "fc.bias")));
}

Array embed_naive(const PipelineConfig& cfg, const EncoderSpec& spec, const ParamMap& p, const std::string& prefix,
                  const Array& x) {
  Array t = transform_naive(cfg, p, prefix + "transform.", encoder_naive(spec, p, prefix + "encoder.", x));
  return project_naive(p, prefix + "projection.", global_avg_pool_naive(t));
}

Array saliency_naive(const PipelineConfig& cfg, const ParamMap& p, const std::string& prefix, const Array& feat) {
  const std::size_t rank = feat.shape.size() - 2, k = cfg.head_kernel;
  const std::vector<std::size_t> ones(rank, 1), half(rank, k / 2), zero(rank, 0);
  Array h = relu_naive(conv_any(feat, param(p, prefix + "hidden.weight"), param(p, prefix + "hidden.bias"), ones, half));
  Array o = conv_any(h, param(p, prefix + "out.weight"), param(p, prefix + "out.bias"), ones, zero);
  std::vector<std::size_t> shape{o.shape[0]};
  shape.insert(shape.end(), o.shape.begin() + 2, o.shape.end());
  Array s(shape);
  for (std::size_t i = 0; i < o.size(); ++i) s[i] = sigmoid_naive(o[i]);
  return s;
}

}  // namespace

PipelineOutput naive_reference_pipeline(const PipelineConfig& cfg, const ParamMap& p, const PipelineInput& in) {
  need(in.clips.shape.size() == 5 && in.specs.shape.size() == 4 && in.clips.shape[0] == in.specs.shape[0],
       "pipeline inputs must be N x C x T x H x W and N x 1 x T x F");
  PipelineOutput out;

  const Array feat_v = encoder_naive(cfg.visual, p, "visual.online.encoder.", in.clips);
  const Array feat_a = encoder_naive(cfg.audio, p, "audio.online.encoder.", in.specs);
  const Array vt = transform_naive(cfg, p, "visual.online.transform.", feat_v);
  const Array at = transform_naive(cfg, p, "audio.online.transform.", feat_a);
  const Array kappa_v = global_avg_pool_naive(vt);
  const Array kappa_a = global_avg_pool_naive(at);

  out.s_v = pyramid_naive(kappa_a, vt, cfg.scales, cfg.norm_mode);
  out.s_a = pyramid_naive(kappa_v, at, cfg.scales, cfg.norm_mode);
  out.s_hat_v = saliency_naive(cfg, p, "saliency_v.", feat_v);
  out.s_hat_a = saliency_naive(cfg, p, "saliency_a.", feat_a);

  out.z_v = project_naive(p, "visual.online.projection.", kappa_v);
  out.z_a = project_naive(p, "audio.online.projection.", kappa_a);
  out.key_v = embed_naive(cfg, cfg.visual, p, "visual.target.", in.clips);
  out.key_a = embed_naive(cfg, cfg.audio, p, "audio.target.", in.specs);

  LossBatch lb;
  lb.z_v = out.z_v;
  lb.z_a = out.z_a;
  lb.key_v = out.key_v;
  lb.key_a = out.key_a;
  lb.bank_v = in.bank_v;
  lb.bank_a = in.bank_a;
  if (cfg.loss.within_modal_positives) {
    lb.pos_v = embed_naive(cfg, cfg.visual, p, "visual.target.", in.clips2);
    lb.pos_a = embed_naive(cfg, cfg.audio, p, "audio.target.", in.specs2);
  }
  lb.s_v = out.s_v;
  lb.s_hat_v = out.s_hat_v;
  lb.s_a = out.s_a;
  lb.s_hat_a = out.s_hat_a;
  out.loss = brute_force_losses(lb, cfg.loss);
  return out;
}

}  // namespace cmac::oracle
