#include "friendnet/nn/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace friendnet::nn {
namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) {
      if (p.defined()) node->parents.push_back(p.shared());
    }
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T>& grad_slot(const std::shared_ptr<Node<T>>& parent) {
  if (parent->grad.empty()) parent->grad = Tensor<T>(parent->value.shape());
  return parent->grad;
}

template <typename T>
void accumulate_grad(const std::shared_ptr<Node<T>>& parent, const Tensor<T>& g) {
  if (!parent || !parent->requires_grad) return;
  if (parent->grad.empty()) {
    parent->grad = g;
    return;
  }
  if (parent->grad.shape() != g.shape()) {
    throw std::logic_error("accumulate_grad: shape " + g.shape().str() + " vs " + parent->grad.shape().str());
  }
  T* dst = parent->grad.data();
  const T* src = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

template <typename T>
void Var<T>::backward() {
  if (!node_) throw std::logic_error("backward on undefined Var");
  if (node_->value.size() != 1) throw std::logic_error("backward requires a scalar, got " + shape().str());
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad = Tensor<T>(node_->value.shape(), T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (Node<T>* n : order) {
    if (n->backward_fn) {
      n->backward_fn = nullptr;
      n->parents.clear();
      if (n != node_.get()) n->grad = Tensor<T>();
    }
  }
}

template class Var<float>;
template class Var<double>;
template Var<float> make_result(Tensor<float>, std::vector<Var<float>>, std::function<void(Node<float>&)>);
template Var<double> make_result(Tensor<double>, std::vector<Var<double>>, std::function<void(Node<double>&)>);
template void accumulate_grad(const std::shared_ptr<Node<float>>&, const Tensor<float>&);
template void accumulate_grad(const std::shared_ptr<Node<double>>&, const Tensor<double>&);
template Tensor<float>& grad_slot(const std::shared_ptr<Node<float>>&);
template Tensor<double>& grad_slot(const std::shared_ptr<Node<double>>&);

}  // namespace friendnet::nn
