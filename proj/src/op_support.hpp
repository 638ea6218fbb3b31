#pragma once

// Internal helpers shared by the op translation units.

#include <initializer_list>
#include <string>

#include "cmac/errors.hpp"
#include "cmac/tensor.hpp"

namespace cmac::detail {

using BackwardFn = std::function<void(std::span<const Scalar>)>;

inline bool tracks(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Turns `out` into a graph node over `inputs`.
inline void attach(Tensor& out, const char* op, std::initializer_list<const Tensor*> inputs,
                   BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->op = op;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) node->inputs.push_back(t->impl());
  }
  node->backward = std::move(fn);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
}

// Gradient accumulator of an input, or null when it does not take gradients.
inline Scalar* grad_sink(const std::shared_ptr<TensorImpl>& t) {
  if (!t || !t->requires_grad) return nullptr;
  if (t->grad.empty()) t->grad.assign(t->data.size(), Scalar{0});
  return t->grad.data();
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline void require_rank(const char* op, const Tensor& a, std::size_t rank, const char* what) {
  if (a.dim() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got " + shape_str(a.shape()));
  }
}

}  // namespace cmac::detail
