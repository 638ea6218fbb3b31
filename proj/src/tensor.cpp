#include "cmac/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "cmac/errors.hpp"

namespace cmac {

namespace {
thread_local bool g_grad_enabled = true;

const std::shared_ptr<TensorImpl>& checked(const std::shared_ptr<TensorImpl>& impl) {
  if (!impl) throw ContractError("operation on an undefined tensor");
  return impl;
}
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, Scalar fill) : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(cmac::numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<Scalar> data) : impl_(std::make_shared<TensorImpl>()) {
  if (cmac::numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " elements");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

const Shape& Tensor::shape() const { return checked(impl_)->shape; }

std::size_t Tensor::size(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_)->data.size(); }

std::span<Scalar> Tensor::data() { return checked(impl_)->data; }
std::span<const Scalar> Tensor::data() const { return checked(impl_)->data; }

Scalar Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return checked(impl_)->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractError("requires_grad can only be changed on leaf tensors");
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return checked(impl_)->node == nullptr; }
const Node* Tensor::node() const { return checked(impl_)->node.get(); }

bool Tensor::has_grad() const { return !checked(impl_)->grad.empty(); }
std::span<const Scalar> Tensor::grad() const { return checked(impl_)->grad; }

std::span<Scalar> Tensor::mutable_grad() {
  auto& g = checked(impl_)->grad;
  if (g.empty()) g.assign(impl_->data.size(), Scalar{0});
  return g;
}

void Tensor::zero_grad() { checked(impl_)->grad.assign(impl_->data.size(), Scalar{0}); }
void Tensor::clear_grad() { checked(impl_)->grad.clear(); }

Tensor Tensor::detach() const {
  return Tensor(shape(), std::vector<Scalar>(impl_->data.begin(), impl_->data.end()));
}

void Tensor::backward() const {
  const auto& root = checked(impl_);
  if (root->data.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(root->shape));
  }
  if (!root->requires_grad) {
    throw ContractError("backward() on a loss that does not depend on any tensor requiring grad");
  }

  // Post-order DFS gives a topological order (inputs before outputs).
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node && next < t->node->inputs.size()) {
      TensorImpl* in = t->node->inputs[next++].get();
      if (in->requires_grad && seen.insert(in).second) stack.push_back({in, 0});
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  for (TensorImpl* t : order) {
    if (t->node) t->grad.assign(t->data.size(), Scalar{0});
  }
  if (root->grad.empty()) root->grad.assign(1, Scalar{0});
  root->grad[0] += Scalar{1};

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    if (!t->node) continue;
    t->node->backward(t->grad);
    t->grad.clear();
    t->grad.shrink_to_fit();
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace cmac
