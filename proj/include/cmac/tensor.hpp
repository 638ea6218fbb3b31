#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cmac {

#ifdef CMAC_FLOAT32
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

// One recorded operation in the backward graph. `backward` receives the
// gradient of the op's output and accumulates into the grads of `inputs`.
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(std::span<const Scalar>)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;  // empty when absent
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves
};

// Dense row-major tensor with optional reverse-mode graph linkage.
//
// Copies are shallow: two Tensor values may refer to the same storage, the
// way a handle does. Use clone() or detach() for an independent buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = 0);
  Tensor(Shape shape, std::vector<Scalar> data);

  static Tensor zeros(const Shape& shape) { return Tensor(shape, Scalar{0}); }
  static Tensor ones(const Shape& shape) { return Tensor(shape, Scalar{1}); }
  static Tensor full(const Shape& shape, Scalar v) { return Tensor(shape, v); }
  static Tensor scalar(Scalar v) { return Tensor(Shape{}, v); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<Scalar> data();
  std::span<const Scalar> data() const;
  Scalar item() const;
  Scalar operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;
  const Node* node() const;

  bool has_grad() const;
  std::span<const Scalar> grad() const;
  std::span<Scalar> mutable_grad();  // allocates zeros when absent
  void zero_grad();
  void clear_grad();

  // Fresh storage, no graph, requires_grad=false.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  // Reverse-mode sweep from this scalar. Leaf grads accumulate across calls.
  void backward() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace cmac
