#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dlab/error.hpp"

namespace dlab {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Graph vertex. Leaves (inputs, parameters) have no parents.
template <typename Scalar>
struct Node {
  Shape shape;
  Array<Scalar> value;
  Array<Scalar> grad;  // empty when absent
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Receives d(loss)/d(this) and accumulates into the parents.
  std::function<void(const Array<Scalar>&)> backward_fn;

  void accumulate(const Array<Scalar>& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

/// Dense row-major n-d array with an optional gradient slot.
///
/// A Tensor is a cheap handle; copies share the underlying node. Values
/// produced by operations are never modified afterwards. Parameters are the
/// exception: optimizers update their values in place between graph builds.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor from_values(Shape shape, Array<Scalar> values, bool requires_grad = false) {
    if (shape_size(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_string(shape) + " does not hold " +
                       std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<Node<Scalar>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const Index n = shape_size(shape);
    return from_values(std::move(shape), Array<Scalar>::Zero(n), requires_grad);
  }

  static Tensor full(Shape shape, Scalar v, bool requires_grad = false) {
    const Index n = shape_size(shape);
    return from_values(std::move(shape), Array<Scalar>::Constant(n, v), requires_grad);
  }

  static Tensor scalar(Scalar v, bool requires_grad = false) {
    return from_values({}, Array<Scalar>::Constant(1, v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
  Index size() const { return node_->value.size(); }

  const Array<Scalar>& value() const { return node_->value; }
  /// In-place access for optimizers and running statistics.
  Array<Scalar>& mutable_value() const { return node_->value; }
  const Scalar* data() const { return node_->value.data(); }

  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Array<Scalar>& grad() const { return node_->grad; }
  void zero_grad() const { node_->grad.resize(0); }

  const std::string& op() const { return node_->op; }
  const NodePtr& node() const { return node_; }

  /// Same values, no history.
  Tensor detach() const { return from_values(shape(), value(), false); }

 private:
  NodePtr node_;
};

/// Creates an op result. When recording is off or no input needs a gradient
/// the result is a plain constant and `backward` is dropped.
template <typename Scalar, typename Backward>
Tensor<Scalar> make_result(std::string op, Shape shape, Array<Scalar> value,
                           std::initializer_list<Tensor<Scalar>> inputs, Backward&& backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->op = std::move(op);
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::forward<Backward>(backward);
  }
  return Tensor<Scalar>(std::move(node));
}

/// Reverse-mode sweep from a scalar loss.
///
/// Gradients accumulate into every reachable node that requires them;
/// parameters keep accumulating across calls until zero_grad(). Graphs are
/// built fresh by each forward pass; intermediate gradients are reset here so
/// a graph may be swept more than once.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<Scalar>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->parents.empty()) n->grad.resize(0);
  }
  loss.node()->accumulate(Array<Scalar>::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(n->grad);
  }
}

}  // namespace dlab
