#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cmac/tensor.hpp"

namespace cmac {

struct Parameter {
  std::string name;
  Tensor tensor;                         // leaf, requires_grad = true
  std::vector<Scalar> momentum_buffer;   // empty until the first sgd_step

  Parameter() = default;
  Parameter(std::string n, Tensor t) : name(std::move(n)), tensor(std::move(t)) {
    tensor.set_requires_grad(true);
  }
};

// Receives every parameter and buffer of a module tree with its dotted name.
class StateVisitor {
 public:
  virtual ~StateVisitor() = default;
  virtual void parameter(const std::string& name, Parameter& p) = 0;
  virtual void buffer(const std::string& name, Tensor& t) = 0;
};

template <class Module>
std::vector<Parameter*> collect_parameters(Module& m, const std::string& prefix = "") {
  struct Collector final : StateVisitor {
    std::vector<Parameter*> out;
    void parameter(const std::string&, Parameter& p) override { out.push_back(&p); }
    void buffer(const std::string&, Tensor&) override {}
  } c;
  m.visit(c, prefix);
  return c.out;
}

void zero_grad(std::span<Parameter* const> params);

// Classic momentum SGD: d = g + wd * w; buf = momentum * buf + d; w -= lr * buf.
// Reads grads without modifying them. Throws ContractError naming the first
// parameter without a populated grad.
void sgd_step(std::span<Parameter* const> params, Scalar lr, Scalar weight_decay, Scalar momentum);

// Seeded generator with portable uniform/normal draws (independent of the
// standard library's distribution implementations).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Mixes a base seed with stream identifiers (splitmix64 finaliser).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

// Kaiming-uniform fan-in initialisation for ReLU networks: U(-b, b), b = sqrt(6 / fan_in).
Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng);

}  // namespace cmac
