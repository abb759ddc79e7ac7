#pragma once

#include <cmath>
#include <unordered_map>

#include "params.hpp"

namespace mvs {

// Adam with bias correction; moment slots are created lazily and only
// for trainable parameters.
template <typename T>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                         double weight_decay = 0.0)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  std::size_t step_count() const { return step_; }

  void step(ParamStore<T>& params, double lr) {
    ++step_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (auto& p : params.items()) {
      if (!p.trainable) continue;
      auto& node = *p.var;
      if (!node.grad.numel()) continue;  // parameter unused this step
      auto& slot = slots_[&node];
      if (slot.m.numel() != node.value.numel()) {
        slot.m = Tensor<T>(node.value.shape());
        slot.v = Tensor<T>(node.value.shape());
      }
      for (std::size_t i = 0; i < node.value.numel(); ++i) {
        double g = static_cast<double>(node.grad[i]);
        if (weight_decay_ != 0.0) g += weight_decay_ * static_cast<double>(node.value[i]);
        double m = beta1_ * static_cast<double>(slot.m[i]) + (1.0 - beta1_) * g;
        double v = beta2_ * static_cast<double>(slot.v[i]) + (1.0 - beta2_) * g * g;
        slot.m[i] = static_cast<T>(m);
        slot.v[i] = static_cast<T>(v);
        double update = (m / bc1) / (std::sqrt(v / bc2) + eps_);
        node.value[i] -= static_cast<T>(lr * update);
      }
    }
  }

 private:
  struct Slot {
    Tensor<T> m, v;
  };
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t step_ = 0;
  std::unordered_map<Node<T>*, Slot> slots_;
};

}  // namespace mvs
