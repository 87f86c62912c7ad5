#pragma once

#include <vector>

#include "friendnet/nn/autograd.hpp"

namespace friendnet::nn {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay Adam. Parameters that received no gradient in a
/// step are left untouched, moments included.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Var<T>*> params, AdamWOptions options = {});

  void step(double lr);
  [[nodiscard]] long steps_taken() const noexcept { return steps_; }

 private:
  std::vector<Var<T>*> params_;
  AdamWOptions opt_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long steps_ = 0;
};

/// Cosine annealing from `initial` at step 0 to `floor` at step total_steps - 1.
double cosine_lr(long step, long total_steps, double initial, double floor);

}  // namespace friendnet::nn
