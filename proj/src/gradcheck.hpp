#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "params.hpp"

namespace mvs {

template <typename T>
struct GradCheckResult {
  T max_rel_error = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  T analytic = 0;
  T numeric = 0;
};

// Central-difference check of the reverse-mode gradient for every
// trainable scalar in the store. loss_builder must rebuild the graph from
// the current parameter values and return the scalar loss node; it is the
// oracle's only interface to the model, so it must be deterministic.
template <typename T>
GradCheckResult<T> grad_check(const std::function<Var<T>()>& loss_builder,
                              ParamStore<T>& params, T eps) {
  require(eps >= T(1e-6) && eps <= T(1e-4), "grad_check: eps must lie in [1e-6, 1e-4]");

  Var<T> root = loss_builder();
  {
    Var<T> again = loss_builder();
    if (root->value[0] != again->value[0])
      throw std::runtime_error("grad_check: loss function is non-deterministic");
  }
  params.zero_grad();
  backward(root);

  GradCheckResult<T> result;
  for (auto& p : params.items()) {
    if (!p.trainable) continue;
    Tensor<T> analytic = p.var->grad.numel() ? p.var->grad : Tensor<T>(p.var->value.shape());
    for (std::size_t i = 0; i < p.var->value.numel(); ++i) {
      T saved = p.var->value[i];
      p.var->value[i] = saved + eps;
      T f_plus = loss_builder()->value[0];
      p.var->value[i] = saved - eps;
      T f_minus = loss_builder()->value[0];
      p.var->value[i] = saved;

      T numeric = (f_plus - f_minus) / (T(2) * eps);
      T a = analytic[i];
      T denom = std::max(std::max(std::abs(a), std::abs(numeric)), T(1e-8));
      T rel = std::abs(a - numeric) / denom;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p.name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace mvs
