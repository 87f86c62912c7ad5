#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "friendnet/nn/autograd.hpp"
#include "friendnet/nn/ops.hpp"
#include "friendnet/rng.hpp"

namespace friendnet::nn {

/// Owner of named parameters, buffers and child modules. Modules are pinned
/// in memory (no copy, no move) so parents can keep plain references to the
/// children they register.
template <typename T>
class Module {
 public:
  struct NamedParameter {
    std::string name;
    Var<T>* var;
  };
  struct NamedBuffer {
    std::string name;
    Tensor<T>* tensor;
  };

  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  /// Depth-first, in registration order; names are dot-joined paths.
  [[nodiscard]] std::vector<NamedParameter> parameters() const {
    std::vector<NamedParameter> out;
    collect_parameters("", out);
    return out;
  }
  [[nodiscard]] std::vector<NamedBuffer> buffers() const {
    std::vector<NamedBuffer> out;
    collect_buffers("", out);
    return out;
  }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.var->value().size();
    return n;
  }

  void set_training(bool on) {
    training_ = on;
    for (auto& [name, child] : children_) child->set_training(on);
  }
  [[nodiscard]] bool training() const noexcept { return training_; }

  void zero_grad() {
    for (auto& p : parameters()) p.var->zero_grad();
  }
  void set_requires_grad(bool on) {
    for (auto& p : parameters()) p.var->set_requires_grad(on);
  }

 protected:
  Var<T>& register_parameter(std::string name, Tensor<T> init) {
    params_.emplace_back(std::move(name), std::make_unique<Var<T>>(std::move(init), true));
    return *params_.back().second;
  }
  Tensor<T>& register_buffer(std::string name, Tensor<T> init) {
    buffers_.emplace_back(std::move(name), std::make_unique<Tensor<T>>(std::move(init)));
    return *buffers_.back().second;
  }
  template <typename M, typename... Args>
  M& register_module(std::string name, Args&&... args) {
    auto child = std::make_unique<M>(std::forward<Args>(args)...);
    M& ref = *child;
    children_.emplace_back(std::move(name), std::move(child));
    return ref;
  }

 private:
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) const {
    for (const auto& [name, var] : params_) out.push_back({prefix + name, var.get()});
    for (const auto& [name, child] : children_) child->collect_parameters(prefix + name + ".", out);
  }
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) const {
    for (const auto& [name, t] : buffers_) out.push_back({prefix + name, t.get()});
    for (const auto& [name, child] : children_) child->collect_buffers(prefix + name + ".", out);
  }

  bool training_ = true;
  std::vector<std::pair<std::string, std::unique_ptr<Var<T>>>> params_;
  std::vector<std::pair<std::string, std::unique_ptr<Tensor<T>>>> buffers_;
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, Rng& rng, ConvSpec spec = {}, bool with_bias = true);

  Var<T> forward(const Var<T>& x) const { return conv2d(x, weight_, bias_ ? *bias_ : Var<T>(), spec_); }

  Var<T>& weight() noexcept { return weight_; }
  Var<T>* bias() noexcept { return bias_; }
  [[nodiscard]] int in_channels() const noexcept { return in_; }
  [[nodiscard]] int out_channels() const noexcept { return out_; }

  /// Sets weights and bias to constants (zero-init of projections, forced tests).
  void fill(T weight_value, T bias_value);

 private:
  int in_;
  int out_;
  ConvSpec spec_;
  Var<T>& weight_;
  Var<T>* bias_ = nullptr;
};

template <typename T>
class BatchNorm2d : public Module<T> {
 public:
  explicit BatchNorm2d(int channels, T momentum = T(0.1), T eps = T(1e-5));

  Var<T> forward(const Var<T>& x) {
    return batch_norm(x, gamma_, beta_, running_mean_, running_var_, this->training(), momentum_, eps_);
  }

 private:
  T momentum_;
  T eps_;
  Var<T>& gamma_;
  Var<T>& beta_;
  Tensor<T>& running_mean_;
  Tensor<T>& running_var_;
};

}  // namespace friendnet::nn
