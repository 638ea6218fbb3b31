#include "cmac/ops.hpp"

#include <algorithm>
#include <cmath>

#include "op_support.hpp"

namespace cmac {

using detail::attach;
using detail::grad_sink;
using detail::tracks;

namespace {

constexpr Scalar kFloor = Scalar(1e-30);

template <class F>
Tensor unary(const char*, const Tensor& a, F f) {
  std::vector<Scalar> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return Tensor(a.shape(), std::move(out));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  auto x = a.data();
  auto y = b.data();
  std::vector<Scalar> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  Tensor r(a.shape(), std::move(out));
  if (tracks({&a, &b})) {
    attach(r, "add", {&a, &b}, [ai = a.impl(), bi = b.impl()](std::span<const Scalar> g) {
      if (Scalar* ga = grad_sink(ai))
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      if (Scalar* gb = grad_sink(bi))
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    });
  }
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  auto x = a.data();
  auto y = b.data();
  std::vector<Scalar> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  Tensor r(a.shape(), std::move(out));
  if (tracks({&a, &b})) {
    attach(r, "sub", {&a, &b}, [ai = a.impl(), bi = b.impl()](std::span<const Scalar> g) {
      if (Scalar* ga = grad_sink(ai))
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      if (Scalar* gb = grad_sink(bi))
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
  }
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  auto x = a.data();
  auto y = b.data();
  std::vector<Scalar> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  Tensor r(a.shape(), std::move(out));
  if (tracks({&a, &b})) {
    attach(r, "mul", {&a, &b}, [ai = a.impl(), bi = b.impl()](std::span<const Scalar> g) {
      if (Scalar* ga = grad_sink(ai))
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
      if (Scalar* gb = grad_sink(bi))
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
    });
  }
  return r;
}

Tensor scale(const Tensor& a, Scalar s) {
  Tensor r = unary("scale", a, [s](Scalar v) { return v * s; });
  if (tracks({&a})) {
    attach(r, "scale", {&a}, [ai = a.impl(), s](std::span<const Scalar> g) {
      Scalar* ga = grad_sink(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
  }
  return r;
}

Tensor add_scalar(const Tensor& a, Scalar s) {
  Tensor r = unary("add_scalar", a, [s](Scalar v) { return v + s; });
  if (tracks({&a})) {
    attach(r, "add_scalar", {&a}, [ai = a.impl()](std::span<const Scalar> g) {
      Scalar* ga = grad_sink(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return r;
}

Tensor exp(const Tensor& a) {
  Tensor r = unary("exp", a, [](Scalar v) { return std::exp(v); });
  if (tracks({&a})) {
    TensorImpl* out = r.impl().get();
    attach(r, "exp", {&a}, [ai = a.impl(), out](std::span<const Scalar> g) {
      Scalar* ga = grad_sink(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * out->data[i];
    });
  }
  return r;
}

Tensor log(const Tensor& a) {
  Tensor r = unary("log", a, [](Scalar v) { return std::log(std::max(v, kFloor)); });
  if (tracks({&a})) {
    attach(r, "log", {&a}, [ai = a.impl()](std::span<const Scalar> g) {
      Scalar* ga = grad_sink(ai);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const Scalar x = ai->data[i];
        if (x > kFloor) ga[i] += g[i] / x;
      }
    });
  }
  return r;
}

Tensor sigmoid(const Tensor& a) {
  Tensor r = unary("sigmoid", a, [](Scalar v) {
    if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
  if (tracks({&a})) {
    TensorImpl* out = r.impl().get();
    attach(r, "sigmoid", {&a}, [ai = a.impl(), out](std::span<const Scalar> g) {
      Scalar* ga = grad_sink(ai);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const Scalar y = out->data[i];
        ga[i] += g[i] * y * (Scalar(1) - y);
      }
    });
  }
  return r;
}

Tensor relu(const Tensor& a) {
  Tensor r = unary("relu", a, [](Scalar v) { return v > 0 ? v : Scalar(0); });
  if (tracks({&a})) {
    attach(r, "relu", {&a}, [ai = a.impl()](std::span<const Scalar> g) {
      Scalar* ga = grad_sink(ai);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (ai->data[i] > 0) ga[i] += g[i];
    });
  }
  return r;
}

Tensor clamp(const Tensor& a, Scalar lo, Scalar hi) {
  Tensor r = unary("clamp", a, [lo, hi](Scalar v) { return std::clamp(v, lo, hi); });
  if (tracks({&a})) {
    attach(r, "clamp", {&a}, [ai = a.impl(), lo, hi](std::span<const Scalar> g) {
      Scalar* ga = grad_sink(ai);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const Scalar x = ai->data[i];
        if (x >= lo && x <= hi) ga[i] += g[i];
      }
    });
  }
  return r;
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  auto x = a.data();
  std::vector<Scalar> y(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      Scalar mx = x[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, x[base + k * inner]);
      Scalar total = 0;
      for (std::size_t k = 0; k < len; ++k) {
        const Scalar e = std::exp(x[base + k * inner] - mx);
        y[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) y[base + k * inner] /= total;
    }
  }
  Tensor r(s, std::move(y));
  if (tracks({&a})) {
    TensorImpl* out = r.impl().get();
    attach(r, "softmax", {&a},
           [ai = a.impl(), out, outer, inner, len](std::span<const Scalar> g) {
             Scalar* ga = grad_sink(ai);
             const auto& y = out->data;
             for (std::size_t o = 0; o < outer; ++o) {
               for (std::size_t in = 0; in < inner; ++in) {
                 const std::size_t base = o * len * inner + in;
                 Scalar dot = 0;
                 for (std::size_t k = 0; k < len; ++k) dot += g[base + k * inner] * y[base + k * inner];
                 for (std::size_t k = 0; k < len; ++k) {
                   const std::size_t idx = base + k * inner;
                   ga[idx] += y[idx] * (g[idx] - dot);
                 }
               }
             }
           });
  }
  return r;
}

Tensor sum(const Tensor& a) {
  Scalar total = 0;
  for (Scalar v : a.data()) total += v;
  Tensor r = Tensor::scalar(total);
  if (tracks({&a})) {
    attach(r, "sum", {&a}, [ai = a.impl()](std::span<const Scalar> g) {
      Scalar* ga = grad_sink(ai);
      for (std::size_t i = 0; i < ai->data.size(); ++i) ga[i] += g[0];
    });
  }
  return r;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.numel()));
}

Tensor sum_last(const Tensor& a) {
  if (a.dim() == 0) throw DimensionError("sum_last: scalar input has no last axis");
  Shape s = a.shape();
  const std::size_t len = s.back();
  s.pop_back();
  const std::size_t rows = numel(s);
  auto x = a.data();
  std::vector<Scalar> out(rows, Scalar(0));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < len; ++k) out[r] += x[r * len + k];
  Tensor r(s, std::move(out));
  if (tracks({&a})) {
    attach(r, "sum_last", {&a}, [ai = a.impl(), rows, len](std::span<const Scalar> g) {
      Scalar* ga = grad_sink(ai);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < len; ++k) ga[r * len + k] += g[r];
    });
  }
  return r;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  }
  Tensor r(std::move(shape), std::vector<Scalar>(a.data().begin(), a.data().end()));
  if (tracks({&a})) {
    attach(r, "reshape", {&a}, [ai = a.impl()](std::span<const Scalar> g) {
      Scalar* ga = grad_sink(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return r;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts.front().dim() == 2 ? parts.front().size(1) : 0;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.dim() != 2 || p.size(1) != cols) {
      throw DimensionError("concat_rows: column axis mismatch, " + shape_str(p.shape()) +
                           " vs width " + std::to_string(cols));
    }
    rows += p.size(0);
  }
  std::vector<Scalar> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor r(Shape{rows, cols}, std::move(out));

  bool any = false;
  for (const auto& p : parts) any = any || tracks({&p});
  if (any) {
    auto node = std::make_shared<Node>();
    node->op = "concat_rows";
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const auto& p : parts) {
      impls.push_back(p.impl());
      if (p.requires_grad()) node->inputs.push_back(p.impl());
    }
    node->backward = [impls](std::span<const Scalar> g) {
      std::size_t offset = 0;
      for (const auto& impl : impls) {
        if (Scalar* gp = grad_sink(impl))
          for (std::size_t i = 0; i < impl->data.size(); ++i) gp[i] += g[offset + i];
        offset += impl->data.size();
      }
    };
    r.impl()->requires_grad = true;
    r.impl()->node = std::move(node);
  }
  return r;
}

namespace {

// c[M x N] += a[M x K] * b[K x N]
void gemm_nn(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    Scalar* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Scalar av = a[i * k + p];
      const Scalar* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank("matmul", a, 2, "left operand");
  detail::require_rank("matmul", b, 2, "right operand");
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) {
    throw DimensionError("matmul: left axis 1 (" + std::to_string(k) + ") != right axis 0 (" +
                         std::to_string(b.size(0)) + ")");
  }
  std::vector<Scalar> out(m * n, Scalar(0));
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tensor r(Shape{m, n}, std::move(out));
  if (tracks({&a, &b})) {
    attach(r, "matmul", {&a, &b}, [ai = a.impl(), bi = b.impl(), m, k, n](std::span<const Scalar> g) {
      if (Scalar* ga = grad_sink(ai)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            Scalar acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bi->data[p * n + j];
            ga[i * k + p] += acc;
          }
      }
      if (Scalar* gb = grad_sink(bi)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const Scalar av = ai->data[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
          }
      }
    });
  }
  return r;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  detail::require_rank("linear", x, 2, "input");
  detail::require_rank("linear", weight, 2, "weight");
  const std::size_t n = x.size(0), in = x.size(1), out_dim = weight.size(0);
  if (weight.size(1) != in) {
    throw DimensionError("linear: input axis 1 (" + std::to_string(in) + ") != weight axis 1 (" +
                         std::to_string(weight.size(1)) + ")");
  }
  if (bias.defined() && bias.shape() != Shape{out_dim}) {
    throw DimensionError("linear: bias shape " + shape_str(bias.shape()) + " != [" +
                         std::to_string(out_dim) + "]");
  }
  auto xd = x.data();
  auto wd = weight.data();
  std::vector<Scalar> out(n * out_dim);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < out_dim; ++o) {
      Scalar acc = bias.defined() ? bias.data()[o] : Scalar(0);
      for (std::size_t i = 0; i < in; ++i) acc += xd[r * in + i] * wd[o * in + i];
      out[r * out_dim + o] = acc;
    }
  Tensor y(Shape{n, out_dim}, std::move(out));
  if (tracks({&x, &weight, &bias})) {
    std::shared_ptr<TensorImpl> bi = bias.defined() ? bias.impl() : nullptr;
    attach(y, "linear", {&x, &weight, &bias},
           [xi = x.impl(), wi = weight.impl(), bi, n, in, out_dim](std::span<const Scalar> g) {
             if (Scalar* gx = grad_sink(xi))
               for (std::size_t r = 0; r < n; ++r)
                 for (std::size_t o = 0; o < out_dim; ++o) {
                   const Scalar go = g[r * out_dim + o];
                   for (std::size_t i = 0; i < in; ++i) gx[r * in + i] += go * wi->data[o * in + i];
                 }
             if (Scalar* gw = grad_sink(wi))
               for (std::size_t r = 0; r < n; ++r)
                 for (std::size_t o = 0; o < out_dim; ++o) {
                   const Scalar go = g[r * out_dim + o];
                   for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += go * xi->data[r * in + i];
                 }
             if (Scalar* gb = grad_sink(bi))
               for (std::size_t r = 0; r < n; ++r)
                 for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g[r * out_dim + o];
           });
  }
  return y;
}

}  // namespace cmac
