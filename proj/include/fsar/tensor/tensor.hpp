#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fsar/tensor/ndarray.hpp"

namespace fsar {

inline thread_local bool g_grad_enabled = true;

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
  ~NoGradGuard() { g_grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
struct Node {
  NdArray<T> value;
  NdArray<T> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `grad` and accumulates into parents that require grad.
  std::function<void(Node&)> backward;

  NdArray<T>& grad_ref() {
    if (!has_grad) {
      grad = NdArray<T>(value.shape());
      has_grad = true;
    }
    return grad;
  }
};

/// Handle to a value in the differentiable compute graph. Copies share the
/// underlying node; the graph behind a result lives as long as the result.
template <class T>
class Tensor {
 public:
  using scalar_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;

  explicit Tensor(NdArray<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor parameter(NdArray<T> value) { return Tensor(std::move(value), true); }

  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t ndim() const { return node_->value.ndim(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(int axis) const { return node_->value.dim(axis); }

  const NdArray<T>& value() const { return node_->value; }
  /// In-place access for optimizers and parameter surgery. Never call on a
  /// tensor whose graph is still awaiting backward.
  NdArray<T>& mutable_value() { return node_->value; }
  T item() const { return node_->value.item(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->has_grad; }
  const NdArray<T>& grad() const {
    if (!node_->has_grad) throw ContractError("tensor has no gradient");
    return node_->grad;
  }
  void zero_grad() {
    node_->has_grad = false;
    node_->grad = NdArray<T>();
  }

  const NodePtr& node() const noexcept { return node_; }

  /// Reverse-mode sweep seeded with ones; the tensor must hold one element.
  void backward() const {
    if (size() != 1) throw DimensionError("backward() needs a scalar, got " + shape_str(shape()));
    backward(NdArray<T>(shape(), T{1}));
  }

  void backward(const NdArray<T>& seed) const {
    if (seed.shape() != shape()) {
      throw DimensionError("seed " + shape_str(seed.shape()) + " vs output " + shape_str(shape()));
    }
    if (!node_->requires_grad) throw ContractError("backward() on a tensor that does not require grad");

    // Iterative post-order DFS gives a topological order; each node visited once.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<T>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }

    auto& g = node_->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward && n->has_grad) n->backward(*n);
    }
  }

 private:
  NodePtr node_;
};

/// Wraps a freshly computed value as an op result. Parents and the backward
/// closure are kept only if recording is on and some input requires grad.
template <class T>
Tensor<T> make_result(NdArray<T> value, std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const Tensor<T>* t : inputs) needs = needs || t->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const Tensor<T>* t : inputs) node->parents.push_back(t->node());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <class T>
Tensor<T> make_result(NdArray<T> value, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

}  // namespace fsar
