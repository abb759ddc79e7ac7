#pragma once

#include <cmath>

#include "autodiff.hpp"

namespace mvs {

// The temperature is learned as log(1/tau), clamped after every
// optimizer step so tau never drops below kMinTau.
constexpr double kInitialTau = 0.07;
constexpr double kMinTau = 0.01;

inline double initial_logit_scale() { return std::log(1.0 / kInitialTau); }
inline double max_logit_scale() { return std::log(1.0 / kMinTau); }

template <typename T>
void clamp_logit_scale(const Var<T>& logit_scale) {
  T cap = static_cast<T>(max_logit_scale());
  if (logit_scale->value[0] > cap) logit_scale->value[0] = cap;
}

// Asymmetric InfoNCE: mean over rows i of -log softmax(<a_i, b_k>/tau)
// at k=i. `inv_tau` is a (possibly learnable) scalar holding 1/tau.
template <typename T>
Var<T> info_nce(const Var<T>& a, const Var<T>& b, const Var<T>& inv_tau) {
  std::size_t n = a->value.rows();
  require(n >= 1, "info_nce: empty batch");
  require(b->value.rows() == n, "info_nce: batch size mismatch");
  require(a->value.cols() == b->value.cols(), "info_nce: embedding dim mismatch");
  auto logits = scale_by(matmul_bt(a, b), inv_tau);  // [N, N]
  auto logp = log_softmax_rows(logits);
  return scale(mean_all(take_diag(logp)), T(-1));
}

template <typename T>
Var<T> info_nce(const Var<T>& a, const Var<T>& b, T tau) {
  require(tau > 0, "info_nce: tau must be positive");
  return info_nce(a, b, constant(Tensor<T>::scalar(T(1) / tau)));
}

// Four-term combined objective: (S->T, T->S, S->I, I->S) averaged, each
// term already averaged over the batch.
template <typename T>
Var<T> full_loss(const Var<T>& f_shape, const Var<T>& f_image, const Var<T>& f_text,
                 const Var<T>& inv_tau) {
  require(f_shape->value.rows() == f_image->value.rows() &&
              f_shape->value.rows() == f_text->value.rows(),
          "full_loss: batch size mismatch");
  auto st = info_nce(f_shape, f_text, inv_tau);
  auto ts = info_nce(f_text, f_shape, inv_tau);
  auto si = info_nce(f_shape, f_image, inv_tau);
  auto is = info_nce(f_image, f_shape, inv_tau);
  return scale(add(add(st, ts), add(si, is)), T(0.25));
}

template <typename T>
Var<T> full_loss(const Var<T>& f_shape, const Var<T>& f_image, const Var<T>& f_text, T tau) {
  require(tau > 0, "full_loss: tau must be positive");
  return full_loss(f_shape, f_image, f_text, constant(Tensor<T>::scalar(T(1) / tau)));
}

}  // namespace mvs
