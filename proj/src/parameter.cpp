#include "cmac/parameter.hpp"

#include <cmath>
#include <numbers>

#include "cmac/errors.hpp"

namespace cmac {

void zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->tensor.zero_grad();
}

void sgd_step(std::span<Parameter* const> params, Scalar lr, Scalar weight_decay, Scalar momentum) {
  for (Parameter* p : params) {
    if (!p->tensor.has_grad()) throw ContractError("sgd_step: parameter '" + p->name + "' has no grad");
  }
  for (Parameter* p : params) {
    auto w = p->tensor.data();
    auto g = p->tensor.grad();
    auto& buf = p->momentum_buffer;
    if (buf.empty()) buf.assign(w.size(), Scalar(0));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const Scalar d = g[i] + weight_decay * w[i];
      buf[i] = momentum * buf[i] + d;
      w[i] -= lr * buf[i];
    }
  }
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  h = mix(h ^ a);
  h = mix(h ^ b);
  h = mix(h ^ c);
  return h;
}

Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t(shape);
  for (Scalar& v : t.data()) v = static_cast<Scalar>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace cmac
