#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <span>
#include <functional>
#include <string>
#include <vector>

#include "cmac/ops.hpp"
#include "cmac/oracle/oracle.hpp"
#include "cmac/parameter.hpp"
#include "cmac/tensor.hpp"

namespace cmac::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(shape);
  for (Scalar& v : t.data()) v = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

// Values at least `gap` away from zero, for ops with a kink there.
inline Tensor away_from_zero(const Shape& shape, Rng& rng, double gap = 0.05) {
  Tensor t(shape);
  for (Scalar& v : t.data()) {
    const double m = rng.uniform(gap, 1.0);
    v = static_cast<Scalar>(rng.uniform() < 0.5 ? -m : m);
  }
  return t;
}

inline double max_abs_diff(std::span<const Scalar> a, std::span<const Scalar> b) {
  double worst = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return worst;
}

inline double max_abs_diff(const oracle::Array& a, const Tensor& t) {
  if (a.shape != t.shape()) return INFINITY;
  double worst = 0;
  auto d = t.data();
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - static_cast<double>(d[i])));
  return worst;
}

// Checks d/dx of sum(w * f(inputs)) for random fixed weights w against
// central differences over every input coordinate. Returns the largest
// relative error.
inline double op_gradient_error(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                std::vector<Tensor> inputs, Rng& rng) {
  for (Tensor& t : inputs) t.set_requires_grad(true);
  Tensor out = f(inputs);
  const Tensor w = random_tensor(out.shape(), rng);
  sum(mul(out, w)).backward();

  std::vector<Scalar*> coords;
  std::vector<double> analytic;
  for (Tensor& t : inputs) {
    auto d = t.data();
    const bool has = t.has_grad();
    for (std::size_t i = 0; i < d.size(); ++i) {
      coords.push_back(d.data() + i);
      analytic.push_back(has ? static_cast<double>(t.grad()[i]) : 0.0);
    }
  }
  auto loss = [&] {
    NoGradGuard ng;
    const Tensor y = f(inputs);
    double s = 0;
    auto yd = y.data();
    auto wd = w.data();
    for (std::size_t i = 0; i < yd.size(); ++i) s += static_cast<double>(yd[i]) * static_cast<double>(wd[i]);
    return s;
  };
  const std::vector<double> numeric = oracle::finite_diff_grad<Scalar>(loss, coords);
  double worst = 0;
  for (std::size_t i = 0; i < numeric.size(); ++i)
    worst = std::max(worst, oracle::relative_error(analytic[i], numeric[i]));
  return worst;
}

struct OpCase {
  std::string name;
  // Builds random inputs for one instance.
  std::function<std::vector<Tensor>(Rng&)> inputs;
  std::function<Tensor(const std::vector<Tensor>&)> fn;
};

// Every differentiable primitive, with input generators that keep clear of
// kinks (relu, clamp) and of log's domain edge.
inline std::vector<OpCase> differentiable_ops() {
  std::vector<OpCase> ops;
  auto one = [](Shape s) { return [s](Rng& r) { return std::vector<Tensor>{random_tensor(s, r)}; }; };
  auto two = [](Shape s) {
    return [s](Rng& r) { return std::vector<Tensor>{random_tensor(s, r), random_tensor(s, r)}; };
  };
  ops.push_back({"add", two({3, 4}), [](auto& x) { return add(x[0], x[1]); }});
  ops.push_back({"sub", two({3, 4}), [](auto& x) { return sub(x[0], x[1]); }});
  ops.push_back({"mul", two({3, 4}), [](auto& x) { return mul(x[0], x[1]); }});
  ops.push_back({"scale", one({5}), [](auto& x) { return scale(x[0], Scalar(-1.7)); }});
  ops.push_back({"add_scalar", one({5}), [](auto& x) { return add_scalar(x[0], Scalar(0.3)); }});
  ops.push_back({"exp", one({2, 3}), [](auto& x) { return exp(x[0]); }});
  ops.push_back({"log", [](Rng& r) { return std::vector<Tensor>{random_tensor({2, 3}, r, 0.2, 2.0)}; },
                 [](auto& x) { return log(x[0]); }});
  ops.push_back({"sigmoid", one({2, 3}), [](auto& x) { return sigmoid(x[0]); }});
  ops.push_back({"relu", [](Rng& r) { return std::vector<Tensor>{away_from_zero({2, 5}, r)}; },
                 [](auto& x) { return relu(x[0]); }});
  ops.push_back({"clamp",
                 [](Rng& r) {
                   // Below, inside and above [0, 1], each at least 0.05 from an edge.
                   Tensor t = away_from_zero({2, 6}, r);
                   auto d = t.data();
                   for (std::size_t i = 0; i < d.size(); ++i) {
                     const Scalar m = std::abs(d[i]);
                     d[i] = i % 3 == 0 ? -m : i % 3 == 1 ? Scalar(0.25) + m / 2 : 1 + m;
                   }
                   return std::vector<Tensor>{t};
                 },
                 [](auto& x) { return clamp(x[0], Scalar(0), Scalar(1)); }});
  ops.push_back({"softmax_axis1", one({3, 4}), [](auto& x) { return softmax(x[0], 1); }});
  ops.push_back({"softmax_axis0", one({3, 4}), [](auto& x) { return softmax(x[0], 0); }});
  ops.push_back({"sum", one({2, 3}), [](auto& x) { return sum(x[0]); }});
  ops.push_back({"mean", one({2, 3}), [](auto& x) { return mean(x[0]); }});
  ops.push_back({"sum_last", one({2, 3, 2}), [](auto& x) { return sum_last(x[0]); }});
  ops.push_back({"reshape", one({2, 6}), [](auto& x) { return reshape(x[0], {3, 4}); }});
  ops.push_back({"concat_rows",
                 [](Rng& r) { return std::vector<Tensor>{random_tensor({2, 3}, r), random_tensor({1, 3}, r)}; },
                 [](auto& x) { return concat_rows({x[0], x[1]}); }});
  ops.push_back({"matmul",
                 [](Rng& r) { return std::vector<Tensor>{random_tensor({3, 4}, r), random_tensor({4, 2}, r)}; },
                 [](auto& x) { return matmul(x[0], x[1]); }});
  ops.push_back({"linear",
                 [](Rng& r) {
                   return std::vector<Tensor>{random_tensor({3, 4}, r), random_tensor({2, 4}, r),
                                              random_tensor({2}, r)};
                 },
                 [](auto& x) { return linear(x[0], x[1], x[2]); }});
  ops.push_back({"conv3d",
                 [](Rng& r) {
                   return std::vector<Tensor>{random_tensor({2, 2, 3, 4, 4}, r), random_tensor({2, 2, 2, 2, 3}, r),
                                              random_tensor({2}, r)};
                 },
                 [](auto& x) { return conv3d(x[0], x[1], x[2], {1, 2, 1}, {0, 1, 1}); }});
  ops.push_back({"conv2d",
                 [](Rng& r) {
                   return std::vector<Tensor>{random_tensor({2, 2, 5, 4}, r), random_tensor({3, 2, 3, 3}, r),
                                              random_tensor({3}, r)};
                 },
                 [](auto& x) { return conv2d(x[0], x[1], x[2], {2, 1}, {1, 1}); }});
  ops.push_back({"global_avg_pool", one({2, 3, 2, 3}), [](auto& x) { return global_avg_pool(x[0], 2); }});
  ops.push_back({"downsample_avg2", one({2, 2, 5, 4}), [](auto& x) { return downsample_avg2(x[0], 2); }});
  ops.push_back({"upsample_nearest", one({2, 2, 3}), [](auto& x) { return upsample_nearest(x[0], {4, 7}, 1); }});
  ops.push_back({"batch_norm",
                 [](Rng& r) {
                   return std::vector<Tensor>{random_tensor({3, 2, 2, 2}, r), random_tensor({2}, r, 0.5, 1.5),
                                              random_tensor({2}, r)};
                 },
                 [](auto& x) {
                   Tensor rm = Tensor::zeros({2}), rv = Tensor::ones({2});
                   return batch_norm(x[0], x[1], x[2], rm, rv, true);
                 }});
  ops.push_back({"cosine_similarity", two({6}), [](auto& x) { return cosine_similarity(x[0], x[1]); }});
  ops.push_back({"cosine_response",
                 [](Rng& r) { return std::vector<Tensor>{random_tensor({2, 3}, r), random_tensor({2, 3, 2, 3}, r)}; },
                 [](auto& x) { return cosine_response(x[0], x[1]); }});
  ops.push_back({"dot_response",
                 [](Rng& r) { return std::vector<Tensor>{random_tensor({2, 3}, r), random_tensor({2, 3, 4}, r)}; },
                 [](auto& x) { return dot_response(x[0], x[1]); }});
  ops.push_back({"l2_normalize_rows", one({3, 4}), [](auto& x) { return l2_normalize_rows(x[0]); }});
  ops.push_back({"logsumexp_rows_masked", one({3, 4}), [](auto& x) {
                   return logsumexp_rows(x[0], {1, 0, 1, 1, 0, 1, 1, 1, 1, 1, 0, 0});
                 }});
  return ops;
}

}  // namespace cmac::testing
