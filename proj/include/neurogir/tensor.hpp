#pragma once

// Dense tensors with a dynamic reverse-mode graph.
//
// A Tensor is a cheap shared handle onto a Node. Ops build new nodes and, when
// any input requires a gradient, record the inputs plus a closure that pushes
// the node's gradient back onto them. Layout is row-major with the last axis
// fastest, so a (B, C, D, H, W) volume has width contiguous.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace neurogir {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph recording for its lifetime (inference, label preprocessing).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool consumed = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static Tensor full(Shape shape, T value) {
    auto node = std::make_shared<Node<T>>();
    node->data.assign(numel(shape), value);
    node->shape = std::move(shape);
    return Tensor(std::move(node));
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    if (numel(shape) != values.size()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    return Tensor(std::move(node));
  }

  static Tensor scalar(T value) { return from({}, {value}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& values() & { return node_->data; }
  const std::vector<T>& values() const& { return node_->data; }
  // By value on temporaries, so `for (x : f().values())` never dangles.
  std::vector<T> values() && { return node_->data; }

  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag = true) {
    node_->requires_grad = flag;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient view; zeros when nothing has been accumulated.
  std::span<const T> grad() const { return node_->grad_buffer(); }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }
  void clear_grad() { node_->grad.clear(); }

  const std::string& op() const { return node_->op; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  /// Fresh leaf holding a copy of the values.
  Tensor detach() const { return from(shape(), node_->data); }

  void backward();

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T>
void check_finite(std::string_view op, const std::vector<T>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << "non-finite value " << values[i] << " produced by " << op << " at index " << i;
      throw NonFiniteError(os.str());
    }
  }
}

}  // namespace detail

/// Wraps freshly computed output values into a tensor and records the
/// backward closure when any input participates in differentiation.
template <typename T>
Tensor<T> make_result(std::string_view op, Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> inputs, std::function<void(Node<T>&)> backward_fn) {
  detail::check_finite(op, values);
  auto node = std::make_shared<Node<T>>();
  node->op = std::string(op);
  node->shape = std::move(shape);
  node->data = std::move(values);
  if (grad_enabled()) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor<T>& t) { return t.defined() && t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (auto& in : inputs) node->inputs.push_back(in.node_ptr());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor<T>(std::move(node));
}

/// Gradient buffer of an op input, or nullptr when that input needs none.
template <typename T>
std::vector<T>* input_grad(Node<T>& self, std::size_t index) {
  auto& in = self.inputs.at(index);
  if (!in || !in->requires_grad) return nullptr;
  return &in->grad_buffer();
}

template <typename T>
void Tensor<T>::backward() {
  if (size() != 1) throw GraphError("backward() needs a scalar loss, got shape " + shape_str(shape()));
  if (node_->consumed) throw GraphError("backward() already ran on this loss; rebuild the graph first");
  if (!node_->requires_grad) throw GraphError("backward() on a detached graph: loss does not depend on any parameter");

  // Iterative post-order DFS gives a topological order (inputs before users).
  // `order` owns the nodes so releasing a user's input list keeps them alive.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack{{node_, 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->inputs.size()) {
      std::shared_ptr<Node<T>> child = top.first->inputs[top.second++];
      if (child && child->requires_grad && !child->is_leaf() && seen.insert(child.get()).second) {
        stack.emplace_back(std::move(child), 0);
      }
      continue;
    }
    order.push_back(std::move(top.first));
    stack.pop_back();
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = it->get();
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    // Interior buffers are released once consumed; leaves keep their grads.
    n->backward_fn = nullptr;
    n->inputs.clear();
    n->consumed = true;
    if (n != node_.get()) n->grad.clear();
  }
}

}  // namespace neurogir
