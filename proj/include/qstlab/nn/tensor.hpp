#pragma once

// Minimal reverse-mode automatic differentiation over dense real tensors.
//
// A Tensor is a shared handle to a graph node. Operations (nn/ops.hpp) build
// new nodes whose backward closure accumulates into their parents' gradient
// buffers; Tensor::backward() runs the closures in reverse topological order.
// Leaf tensors created with requires_grad = true act as trainable parameters
// and keep their gradient until zero_grad().

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "qstlab/errors.hpp"

namespace qstlab::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ')';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false,
                            std::string name = {}) {
    if (shape_size(shape) != values.size()) {
      throw ShapeError("tensor " + name + ": shape " + shape_str(shape) + " does not hold " +
                       std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    node->name = std::move(name);
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false, std::string name = {}) {
    const std::size_t n = shape_size(shape);
    return from_values(std::move(shape), std::vector<double>(n, 0.0), requires_grad, std::move(name));
  }

  static Tensor scalar(double v) { return from_values({1}, {v}); }

  // Result node of an operation; requires_grad is inherited from the parents.
  static Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& parents,
                            std::string op, std::function<void(detail::Node&)> backward) {
    Tensor out = from_values(std::move(shape), std::move(values), false, std::move(op));
    for (const auto& p : parents) {
      if (p.defined() && p.requires_grad()) out.node_->requires_grad = true;
    }
    if (out.node_->requires_grad) {
      for (const auto& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  const std::string& name() const { return node_->name; }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  // Gradient buffer (zeros if nothing has been accumulated yet).
  std::span<const double> grad() const { return node_->grad_buffer(); }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  // Same values, no history.
  Tensor detach() const { return from_values(shape(), node_->value, false, node_->name); }

  void backward() {
    if (size() != 1) throw ShapeError("backward() needs a scalar, got " + shape_str(shape()));
    if (!requires_grad()) return;
    std::vector<detail::Node*> order;
    topological_order(order);
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
  }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  // Post-order DFS without recursion; RNN graphs can be thousands of nodes deep.
  void topological_order(std::vector<detail::Node*>& order) const {
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        detail::Node* p = n->parents[next++].get();
        if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<detail::Node> node_;
};

}  // namespace qstlab::nn
