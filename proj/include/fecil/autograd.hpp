#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "fecil/tensor.hpp"

namespace fecil {

// One vertex of the reverse-mode tape. Leaves are parameters or inputs;
// interior nodes carry the closure that pushes `grad` into their parents.
template <typename T>
struct Node {
  BasicTensor<T> value;
  std::optional<BasicTensor<T>> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  BasicTensor<T>& grad_buffer() {
    if (!grad) grad.emplace(value.shape(), T{0});
    return *grad;
  }
};

bool grad_enabled();

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(BasicTensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var from_node(std::shared_ptr<Node<T>> node) {
    Var v;
    v.node_ = std::move(node);
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  const BasicTensor<T>& value() const { return node_->value; }
  BasicTensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->leaf) throw std::logic_error("requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
    if (!on) node_->grad.reset();
  }

  const std::optional<BasicTensor<T>>& grad() const { return node_->grad; }
  std::optional<BasicTensor<T>>& mutable_grad() { return node_->grad; }
  void zero_grad() { node_->grad.reset(); }

  /// Fresh leaf holding a deep copy of the value.
  Var clone() const { return Var(node_->value, node_->requires_grad); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Records an interior node. When no parent needs a gradient (or recording
/// is disabled) the result is a constant leaf and `backward_fn` is dropped.
template <typename T>
Var<T> make_op(BasicTensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->leaf = false;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>::from_node(std::move(node));
}

/// Reverse sweep from a scalar root. Interior nodes are released afterwards,
/// so the same graph cannot be swept twice.
template <typename T>
void backward(const Var<T>& root) {
  Node<T>* r = root.node();
  if (r == nullptr) throw std::invalid_argument("backward on undefined variable");
  if (r->consumed) throw std::logic_error("backward called twice on the same graph without a new forward pass");
  if (r->value.size() != 1) {
    throw ShapeError("backward root must be scalar, got shape " + shape_str(r->value.shape()));
  }
  if (!r->requires_grad) throw std::logic_error("backward root does not depend on any trainable tensor");

  std::vector<Node<T>*> order;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  // `consumed` doubles as the visited mark; leaves are never pushed.
  stack.emplace_back(r, 0);
  r->consumed = true;
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && !p->leaf && !p->consumed) {
        p->consumed = true;
        stack.emplace_back(p, 0);
      }
      continue;
    }
    order.push_back(n);
    stack.pop_back();
  }

  r->grad.emplace(r->value.shape(), T{1});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->grad) n->backward_fn(*n);
  }
  for (Node<T>* n : order) {
    if (n->leaf) continue;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.reset();
  }
}

}  // namespace fecil
