// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensor with reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Operations in ops.hpp create
// new nodes that remember their inputs and a backward closure; backward()
// linearizes the reachable graph into a Tape and replays it in reverse.

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
#include <unordered_map>
#include <utility>
#include <vector>

namespace tmdc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible shapes handed to an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside an operation's mathematical domain (e.g. log of x <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced or supplied; the message names the producing op.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the differentiation graph (non-scalar loss, detached loss).
class GraphError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
  bool is_leaf() const { return !backward; }
};

inline thread_local bool grad_mode_enabled = true;

inline void check_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by '") + op + "'");
    }
  }
}

}  // namespace detail

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_enabled; }

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimension sizes must be positive, got " + to_string(shape));
    }
    if (tmdc::numel(shape) != values.size()) {
      throw DimensionError("tensor of shape " + to_string(shape) + " needs " + std::to_string(tmdc::numel(shape)) +
                           " values, got " + std::to_string(values.size()));
    }
    detail::check_finite(values, "constant");
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return Tensor(shape, std::vector<double>(tmdc::numel(shape), 0.0), requires_grad);
  }
  static Tensor full(const Shape& shape, double v, bool requires_grad = false) {
    return Tensor(shape, std::vector<double>(tmdc::numel(shape), v), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) { return Tensor(Shape{}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  /// Size of axis `axis`; negative values count from the end.
  std::size_t dim(int axis) const {
    const int n = static_cast<int>(ndim());
    const int a = axis < 0 ? axis + n : axis;
    if (a < 0 || a >= n) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
    return node_->shape[static_cast<std::size_t>(a)];
  }

  std::span<const double> data() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  /// Writable view of a leaf's storage. Only for parameter initialization and
  /// optimizer updates; never for values that already fed a recorded op.
  std::span<double> mutable_data() {
    if (!node_->is_leaf()) throw GraphError("mutable_data() on non-leaf tensor produced by '" + std::string(node_->op) + "'");
    return node_->value;
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; empty span when nothing has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  std::vector<double> grad_or_zero() const {
    return has_grad() ? node_->grad : std::vector<double>(numel(), 0.0);
  }
  /// Resets the gradient to an allocated all-zero buffer.
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }
  void clear_grad() { node_->grad.clear(); }

  const char* op() const { return node_->op; }
  bool is_leaf() const { return node_->is_leaf(); }

  /// Value copy with no graph history.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Builds a result node, recording `backward` only when some input needs grad.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                          std::initializer_list<const Tensor*> inputs, std::function<void(Node&)> backward) {
  check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_mode_enabled) {
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const Tensor* t : inputs) node->inputs.push_back(t->node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

inline Tensor make_result(const char* op, Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backward) {
  check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_mode_enabled) {
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) node->inputs.push_back(t.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

}  // namespace detail

/// Topologically ordered record of the operations reachable from a root.
class Tape {
 public:
  struct Entry {
    detail::Node* node;
    std::vector<std::size_t> inputs;  // indices of earlier entries
  };

  static Tape record(const Tensor& root) {
    Tape tape;
    std::unordered_map<detail::Node*, std::size_t> index;
    // Iterative post-order DFS: a node is emitted after all of its inputs.
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next == 0 && index.count(node)) {
        stack.pop_back();
        continue;
      }
      if (next < node->inputs.size()) {
        detail::Node* in = node->inputs[next++].get();
        if (!index.count(in) && in->requires_grad) stack.emplace_back(in, 0);
        continue;
      }
      Entry e{node, {}};
      for (const auto& in : node->inputs) {
        auto it = index.find(in.get());
        if (it != index.end()) e.inputs.push_back(it->second);
      }
      index.emplace(node, tape.entries_.size());
      tape.entries_.push_back(std::move(e));
      stack.pop_back();
    }
    return tape;
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  /// Seeds the last entry with d(root)/d(root) = 1 and runs every backward
  /// closure in reverse order. Interior gradients restart from zero; leaf
  /// gradients accumulate.
  void replay_backward() const {
    if (entries_.empty()) return;
    for (const Entry& e : entries_) {
      if (!e.node->is_leaf()) e.node->grad.assign(e.node->value.size(), 0.0);
    }
    entries_.back().node->grad_buffer()[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->node->is_leaf()) it->node->backward(*it->node);
    }
  }

 private:
  std::vector<Entry> entries_;
};

/// Populates grad on every requires_grad leaf reachable from `loss`.
inline void backward(const Tensor& loss) {
  if (!loss.defined()) throw GraphError("backward() on undefined tensor");
  if (loss.numel() != 1) throw GraphError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) throw GraphError("backward() on a loss detached from every differentiable leaf");
  Tape::record(loss).replay_backward();
}

}  // namespace tmdc
