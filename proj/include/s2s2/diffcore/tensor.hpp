#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace s2s2 {

using Shape = std::vector<std::size_t>;

/// Raised when an operation produces NaN or Inf.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
void check_finite(std::span<const T> values, const char* op) {
  for (const T v : values) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + ": non-finite value in output");
  }
}

}  // namespace detail

/// Dense row-major array with optional reverse-mode gradient tracking.
///
/// A Tensor is a shared handle: copies refer to the same node. Values are
/// fixed once an op has produced them; only leaf parameters are mutated, and
/// only by an optimizer or a gradient checker.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (shape_numel(shape) != data.size()) {
      throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " holds " +
                                  std::to_string(shape_numel(shape)) + " values, got " +
                                  std::to_string(data.size()));
    }
    detail::check_finite<T>(data, "Tensor");
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> data() const { return node_->value; }
  /// Mutable access for leaf parameters (optimizer updates, grad checks).
  std::span<T> mutable_data() { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient of the last backward pass; zeros if none reached this tensor.
  std::span<const T> grad() const { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
  }

  T operator[](std::size_t i) const { return node_->value[i]; }

  /// Same values, no gradient history.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  template <class U>
  Tensor<U> cast(bool requires_grad = false) const {
    return Tensor<U>(shape(), std::vector<U>(node_->value.begin(), node_->value.end()), requires_grad);
  }

  const NodePtr& node() const noexcept { return node_; }

  /// Builds the result of an op. `backward` is installed only when some
  /// parent requires a gradient.
  static Tensor from_op(Shape shape, std::vector<T> value, std::vector<NodePtr> parents, const char* op,
                        std::function<void(detail::Node<T>& out)> backward) {
    detail::check_finite<T>(value, op);
    Tensor out;
    out.node_ = std::make_shared<detail::Node<T>>();
    out.node_->shape = std::move(shape);
    out.node_->value = std::move(value);
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (any) {
      out.node_->requires_grad = true;
      out.node_->parents = std::move(parents);
      detail::Node<T>* self = out.node_.get();
      out.node_->backward = [self, fn = std::move(backward)]() { fn(*self); };
    }
    return out;
  }

 private:
  NodePtr node_;
};

/// Reverse-mode pass from a scalar loss. Gradients accumulate into every
/// tensor that requires them; leaf gradients are not cleared first.
template <class T>
void backward(const Tensor<T>& loss, T seed = T(1)) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  using NodeT = detail::Node<T>;
  if (!loss.requires_grad()) return;

  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are transient; only leaves keep accumulating.
  for (NodeT* n : order) {
    if (n->backward) n->grad.clear();
  }
  loss.node()->grad_buffer()[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->backward && !n->grad.empty()) n->backward();
  }
}

}  // namespace s2s2
