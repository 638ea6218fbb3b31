#include <algorithm>
#include <cmath>

#include "cmac/ops.hpp"
#include "op_support.hpp"

namespace cmac {

using detail::attach;
using detail::grad_sink;
using detail::tracks;

Tensor cosine_similarity(const Tensor& x, const Tensor& y) {
  detail::require_rank("cosine_similarity", x, 1, "x");
  detail::require_same_shape("cosine_similarity", x, y);
  auto a = x.data();
  auto b = y.data();
  Scalar dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  const Scalar d = std::max(na * nb, kCosineEps);
  Tensor r = Tensor::scalar(dot / d);
  if (tracks({&x, &y})) {
    attach(r, "cosine_similarity", {&x, &y},
           [xi = x.impl(), yi = y.impl(), dot, na, nb, d](std::span<const Scalar> g) {
             if (na == 0 || nb == 0) return;
             const auto& a = xi->data;
             const auto& b = yi->data;
             // Below the floor the denominator is a constant.
             const Scalar d2 = na * nb > kCosineEps ? d * d : INFINITY;
             if (Scalar* ga = grad_sink(xi))
               for (std::size_t i = 0; i < a.size(); ++i)
                 ga[i] += g[0] * (b[i] / d - dot * nb * (a[i] / na) / d2);
             if (Scalar* gb = grad_sink(yi))
               for (std::size_t i = 0; i < b.size(); ++i)
                 gb[i] += g[0] * (a[i] / d - dot * na * (b[i] / nb) / d2);
           });
  }
  return r;
}

namespace {

struct ResponseGeom {
  std::size_t n, c, cells;
  Shape out_shape;
};

ResponseGeom response_geom(const char* op, const Tensor& filter, const Tensor& feat) {
  detail::require_rank(op, filter, 2, "filter");
  const Shape& s = feat.shape();
  if (s.size() < 3) throw DimensionError(std::string(op) + ": feature map must be N x C x grid, got " + shape_str(s));
  if (s[0] != filter.size(0)) {
    throw DimensionError(std::string(op) + ": batch axis 0 differs, filter " +
                         shape_str(filter.shape()) + " vs feature map " + shape_str(s));
  }
  if (s[1] != filter.size(1)) {
    throw DimensionError(std::string(op) + ": channel mismatch, filter axis 1 = " +
                         std::to_string(filter.size(1)) + " vs feature axis 1 = " + std::to_string(s[1]));
  }
  ResponseGeom g{s[0], s[1], 1, {}};
  g.out_shape.push_back(s[0]);
  for (std::size_t i = 2; i < s.size(); ++i) {
    g.cells *= s[i];
    g.out_shape.push_back(s[i]);
  }
  return g;
}

}  // namespace

Tensor cosine_response(const Tensor& filter, const Tensor& feat) {
  const ResponseGeom geo = response_geom("cosine_response", filter, feat);
  const std::size_t n = geo.n, c = geo.c, cells = geo.cells;
  auto f = filter.data();
  auto x = feat.data();
  std::vector<Scalar> filter_norm(n), feat_norm(n * cells, Scalar(0)), dots(n * cells, Scalar(0));
  for (std::size_t b = 0; b < n; ++b) {
    Scalar nf = 0;
    for (std::size_t ch = 0; ch < c; ++ch) nf += f[b * c + ch] * f[b * c + ch];
    filter_norm[b] = std::sqrt(nf);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const Scalar fv = f[b * c + ch];
      const Scalar* xrow = x.data() + (b * c + ch) * cells;
      for (std::size_t p = 0; p < cells; ++p) {
        dots[b * cells + p] += fv * xrow[p];
        feat_norm[b * cells + p] += xrow[p] * xrow[p];
      }
    }
  }
  std::vector<Scalar> out(n * cells);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < cells; ++p) {
      Scalar& nx = feat_norm[b * cells + p];
      nx = std::sqrt(nx);
      out[b * cells + p] = dots[b * cells + p] / std::max(filter_norm[b] * nx, kCosineEps);
    }
  Tensor r(geo.out_shape, std::move(out));
  if (tracks({&filter, &feat})) {
    attach(r, "cosine_response", {&filter, &feat},
           [fi = filter.impl(), xi = feat.impl(), filter_norm = std::move(filter_norm),
            feat_norm = std::move(feat_norm), dots = std::move(dots), n, c,
            cells](std::span<const Scalar> g) {
             Scalar* gf = grad_sink(fi);
             Scalar* gx = grad_sink(xi);
             const auto& f = fi->data;
             const auto& x = xi->data;
             for (std::size_t b = 0; b < n; ++b) {
               const Scalar nf = filter_norm[b];
               if (nf == 0) continue;
               for (std::size_t p = 0; p < cells; ++p) {
                 const Scalar nx = feat_norm[b * cells + p];
                 if (nx == 0) continue;
                 const Scalar d = std::max(nf * nx, kCosineEps);
                 const Scalar gp = g[b * cells + p];
                 const Scalar common = nf * nx > kCosineEps ? gp * dots[b * cells + p] / (d * d) : Scalar(0);
                 for (std::size_t ch = 0; ch < c; ++ch) {
                   const Scalar fv = f[b * c + ch];
                   const Scalar xv = x[(b * c + ch) * cells + p];
                   if (gf) gf[b * c + ch] += gp * xv / d - common * nx * fv / nf;
                   if (gx) gx[(b * c + ch) * cells + p] += gp * fv / d - common * nf * xv / nx;
                 }
               }
             }
           });
  }
  return r;
}

Tensor dot_response(const Tensor& filter, const Tensor& feat) {
  const ResponseGeom geo = response_geom("dot_response", filter, feat);
  const std::size_t n = geo.n, c = geo.c, cells = geo.cells;
  auto f = filter.data();
  auto x = feat.data();
  std::vector<Scalar> out(n * cells, Scalar(0));
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const Scalar fv = f[b * c + ch];
      const Scalar* xrow = x.data() + (b * c + ch) * cells;
      for (std::size_t p = 0; p < cells; ++p) out[b * cells + p] += fv * xrow[p];
    }
  Tensor r(geo.out_shape, std::move(out));
  if (tracks({&filter, &feat})) {
    attach(r, "dot_response", {&filter, &feat},
           [fi = filter.impl(), xi = feat.impl(), n, c, cells](std::span<const Scalar> g) {
             Scalar* gf = grad_sink(fi);
             Scalar* gx = grad_sink(xi);
             for (std::size_t b = 0; b < n; ++b)
               for (std::size_t ch = 0; ch < c; ++ch) {
                 const Scalar fv = fi->data[b * c + ch];
                 const Scalar* xrow = xi->data.data() + (b * c + ch) * cells;
                 Scalar acc = 0;
                 for (std::size_t p = 0; p < cells; ++p) {
                   acc += g[b * cells + p] * xrow[p];
                   if (gx) gx[(b * c + ch) * cells + p] += g[b * cells + p] * fv;
                 }
                 if (gf) gf[b * c + ch] += acc;
               }
           });
  }
  return r;
}

Tensor l2_normalize_rows(const Tensor& x) {
  detail::require_rank("l2_normalize_rows", x, 2, "input");
  const std::size_t n = x.size(0), d = x.size(1);
  auto xd = x.data();
  std::vector<Scalar> norms(n), out(n * d, Scalar(0));
  for (std::size_t r = 0; r < n; ++r) {
    Scalar acc = 0;
    for (std::size_t j = 0; j < d; ++j) acc += xd[r * d + j] * xd[r * d + j];
    norms[r] = std::sqrt(acc);
    if (norms[r] > kCosineEps)
      for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xd[r * d + j] / norms[r];
  }
  Tensor y(x.shape(), std::move(out));
  if (tracks({&x})) {
    TensorImpl* yo = y.impl().get();
    attach(y, "l2_normalize_rows", {&x},
           [xi = x.impl(), yo, norms = std::move(norms), n, d](std::span<const Scalar> g) {
             Scalar* gx = grad_sink(xi);
             const auto& yd = yo->data;
             for (std::size_t r = 0; r < n; ++r) {
               if (norms[r] <= kCosineEps) continue;
               Scalar proj = 0;
               for (std::size_t j = 0; j < d; ++j) proj += yd[r * d + j] * g[r * d + j];
               for (std::size_t j = 0; j < d; ++j)
                 gx[r * d + j] += (g[r * d + j] - yd[r * d + j] * proj) / norms[r];
             }
           });
  }
  return y;
}

Tensor logsumexp_rows(const Tensor& x, const std::vector<std::uint8_t>& mask) {
  detail::require_rank("logsumexp_rows", x, 2, "input");
  const std::size_t n = x.size(0), m = x.size(1);
  if (!mask.empty() && mask.size() != n * m) {
    throw DimensionError("logsumexp_rows: mask holds " + std::to_string(mask.size()) +
                         " entries for input " + shape_str(x.shape()));
  }
  auto xd = x.data();
  auto included = [&mask](std::size_t idx) { return mask.empty() || mask[idx] != 0; };
  std::vector<Scalar> out(n), row_max(n);
  for (std::size_t r = 0; r < n; ++r) {
    bool any = false;
    Scalar mx = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!included(r * m + j)) continue;
      mx = any ? std::max(mx, xd[r * m + j]) : xd[r * m + j];
      any = true;
    }
    if (!any) throw ContractError("logsumexp_rows: row " + std::to_string(r) + " has no entries");
    Scalar acc = 0;
    for (std::size_t j = 0; j < m; ++j)
      if (included(r * m + j)) acc += std::exp(xd[r * m + j] - mx);
    row_max[r] = mx;
    out[r] = mx + std::log(acc);
  }
  Tensor y(Shape{n}, std::move(out));
  if (tracks({&x})) {
    TensorImpl* yo = y.impl().get();
    attach(y, "logsumexp_rows", {&x}, [xi = x.impl(), yo, mask, n, m](std::span<const Scalar> g) {
      Scalar* gx = grad_sink(xi);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < m; ++j) {
          if (!mask.empty() && mask[r * m + j] == 0) continue;
          gx[r * m + j] += g[r] * std::exp(xi->data[r * m + j] - yo->data[r]);
        }
    });
  }
  return y;
}

}  // namespace cmac
