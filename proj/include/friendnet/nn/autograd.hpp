#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "friendnet/tensor.hpp"

namespace friendnet::nn {

/// One value in the reverse-mode graph. Leaves have no backward function;
/// parameters are leaves with requires_grad set.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

/// Graph recording is on by default; NoGradGuard turns it off for a scope on
/// the current thread.
bool grad_enabled() noexcept;

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
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  [[nodiscard]] bool defined() const noexcept { return static_cast<bool>(node_); }
  [[nodiscard]] const Tensor<T>& value() const { return node_->value; }
  /// Writes bypass the graph; only use on leaves (parameters, inputs).
  [[nodiscard]] Tensor<T>& mutable_value() { return node_->value; }
  [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }

  [[nodiscard]] bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  [[nodiscard]] bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  [[nodiscard]] const Tensor<T>& grad() const { return node_->grad; }
  /// Gradient buffer, allocated as zeros on first use.
  Tensor<T>& grad_buffer() {
    if (node_->grad.empty()) node_->grad = Tensor<T>(node_->value.shape());
    return node_->grad;
  }
  void zero_grad() { node_->grad = Tensor<T>(); }

  /// Backpropagates from a scalar. Interior nodes are released afterwards so
  /// only leaf gradients survive.
  void backward();

  /// Same value, cut from the graph.
  [[nodiscard]] Var detach() const { return Var(node_->value, false); }

  [[nodiscard]] Node<T>* node() const noexcept { return node_.get(); }
  [[nodiscard]] const std::shared_ptr<Node<T>>& shared() const noexcept { return node_; }

  static Var from_node(std::shared_ptr<Node<T>> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds an op result. The backward function receives the result node and
/// must accumulate into its parents with accumulate_grad(). When no parent
/// needs a gradient (or recording is off) the result is a plain leaf.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward_fn);

/// Adds g into the parent's gradient buffer if the parent wants one.
template <typename T>
void accumulate_grad(const std::shared_ptr<Node<T>>& parent, const Tensor<T>& g);

/// Gradient buffer of a parent node, zero-initialized on first access.
template <typename T>
Tensor<T>& grad_slot(const std::shared_ptr<Node<T>>& parent);

}  // namespace friendnet::nn
