#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "sum.hpp"
#include "tensor.hpp"

namespace mvs {

// Define-by-run reverse-mode graph. Each op allocates a Node whose
// backward closure scatters the node's gradient into its parents.
// Nodes whose inputs all have requires_grad=false are created detached
// (no parents, no closure), so frozen submodels cost nothing on the
// backward pass.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on demand, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward;

  explicit Node(Tensor<T> v) : value(std::move(v)) {}

  void ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor<T>(value.shape());
  }
  void zero_grad() {
    if (grad.numel()) grad.fill(T(0));
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(Tensor<T> v) {
  return std::make_shared<Node<T>>(std::move(v));
}

template <typename T>
Var<T> leaf(Tensor<T> v, bool requires_grad = true) {
  auto n = std::make_shared<Node<T>>(std::move(v));
  n->requires_grad = requires_grad;
  return n;
}

namespace detail {

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backward) {
  bool needs = false;
  for (const auto& p : parents)
    if (p && p->requires_grad) needs = true;
  auto n = std::make_shared<Node<T>>(std::move(value));
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return n;
}

template <typename T>
void accumulate(const Var<T>& p, const Tensor<T>& delta) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  T* g = p->grad.data();
  const T* d = delta.data();
  for (std::size_t i = 0; i < delta.numel(); ++i) g[i] += d[i];
}

}  // namespace detail

// Runs reverse-mode accumulation from a scalar root. Gradients add into
// whatever is already in each node's grad slot; call zero_grad on the
// parameters between steps.
template <typename T>
void backward(const Var<T>& root) {
  require(root->value.numel() == 1, "backward: root must be scalar");
  if (!root->requires_grad) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // iterative post-order DFS
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx].get();
      ++idx;
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.numel()) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise / structural ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a->value.same_shape(b->value),
          "add: shape mismatch " + shape_str(a->value.shape()) + " vs " + shape_str(b->value.shape()));
  Tensor<T> out(a->value.shape());
  const T *pa = a->value.data(), *pb = b->value.data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = pa[i] + pb[i];
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    detail::accumulate(a, n.grad);
    detail::accumulate(b, n.grad);
  });
}

// x[M,N] + row[N] broadcast over rows (bias add)
template <typename T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& row) {
  std::size_t n = x->value.cols();
  require(row->value.numel() == n, "add_rowvec: width mismatch");
  std::size_t m = x->value.numel() / n;
  Tensor<T> out(x->value.shape());
  const T* r = row->value.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* xi = x->value.data() + i * n;
    T* oi = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) oi[j] = xi[j] + r[j];
  }
  return detail::make_op<T>(std::move(out), {x, row}, [x, row, m, n](Node<T>& nd) {
    detail::accumulate(x, nd.grad);
    if (row->requires_grad) {
      row->ensure_grad();
      T* rg = row->grad.data();
      for (std::size_t i = 0; i < m; ++i) {
        const T* g = nd.grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) rg[j] += g[j];
      }
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < n.grad.numel(); ++i) b->grad[i] += n.grad[i] * a->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T c) {
  Tensor<T> out(x->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] * c;
  return detail::make_op<T>(std::move(out), {x}, [x, c](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < n.grad.numel(); ++i) x->grad[i] += n.grad[i] * c;
  });
}

// y = x * s where s is a scalar variable (e.g. the learned logit scale)
template <typename T>
Var<T> scale_by(const Var<T>& x, const Var<T>& s) {
  require(s->value.numel() == 1, "scale_by: scale must be scalar");
  T sv = s->value[0];
  Tensor<T> out(x->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] * sv;
  return detail::make_op<T>(std::move(out), {x, s}, [x, s, sv](Node<T>& n) {
    if (x->requires_grad) {
      x->ensure_grad();
      for (std::size_t i = 0; i < n.grad.numel(); ++i) x->grad[i] += n.grad[i] * sv;
    }
    if (s->requires_grad) {
      s->ensure_grad();
      CompensatedSum<T> acc;
      for (std::size_t i = 0; i < n.grad.numel(); ++i) acc.add(n.grad[i] * x->value[i]);
      s->grad[0] += acc.value();
    }
  });
}

template <typename T>
Var<T> exp_elem(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(x->value[i]);
  return detail::make_op<T>(std::move(out), {x}, [x](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < n.grad.numel(); ++i) x->grad[i] += n.grad[i] * n.value[i];
  });
}

template <typename T>
T normal_cdf(T v) {
  return T(0.5) * (T(1) + std::erf(v * T(0.7071067811865475244)));
}

// Exact GELU, x * Phi(x) with the error-function CDF.
template <typename T>
Var<T> gelu(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    T v = x->value[i];
    out[i] = v * normal_cdf(v);
  }
  return detail::make_op<T>(std::move(out), {x}, [x](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    constexpr T inv_sqrt_2pi = T(0.3989422804014326779);
    for (std::size_t i = 0; i < n.grad.numel(); ++i) {
      T v = x->value[i];
      T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      x->grad[i] += n.grad[i] * (normal_cdf(v) + v * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  std::size_t m = a->value.rows(), k = a->value.cols();
  require(b->value.rows() == k, "matmul: inner dimension mismatch " +
                                    shape_str(a->value.shape()) + " x " + shape_str(b->value.shape()));
  std::size_t n = b->value.cols();
  Tensor<T> out({m, n});
  gemm_nn_acc(a->value.data(), b->value.data(), out.data(), m, k, n);
  return detail::make_op<T>(std::move(out), {a, b}, [a, b, m, k, n](Node<T>& nd) {
    if (a->requires_grad) {
      a->ensure_grad();  // dA += dC * B^T
      gemm_nt_acc(nd.grad.data(), b->value.data(), a->grad.data(), m, n, k);
    }
    if (b->requires_grad) {
      b->ensure_grad();  // dB += A^T * dC
      gemm_tn_acc(a->value.data(), nd.grad.data(), b->grad.data(), k, m, n);
    }
  });
}

// A[M,K] * B[N,K]^T, used for similarity/attention-score matrices
template <typename T>
Var<T> matmul_bt(const Var<T>& a, const Var<T>& b) {
  std::size_t m = a->value.rows(), k = a->value.cols();
  require(b->value.cols() == k, "matmul_bt: inner dimension mismatch");
  std::size_t n = b->value.rows();
  Tensor<T> out({m, n});
  gemm_nt_acc(a->value.data(), b->value.data(), out.data(), m, k, n);
  return detail::make_op<T>(std::move(out), {a, b}, [a, b, m, k, n](Node<T>& nd) {
    if (a->requires_grad) {
      a->ensure_grad();  // dA += dC * B
      gemm_nn_acc(nd.grad.data(), b->value.data(), a->grad.data(), m, n, k);
    }
    if (b->requires_grad) {
      b->ensure_grad();  // dB += dC^T * A
      gemm_tn_acc(nd.grad.data(), a->value.data(), b->grad.data(), n, m, k);
    }
  });
}

// ---------------------------------------------------------------------------
// row/column structure
// ---------------------------------------------------------------------------

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t count) {
  std::size_t n = x->value.cols();
  require(begin + count <= x->value.rows(), "slice_rows: out of range");
  Tensor<T> out({count, n});
  std::copy(x->value.data() + begin * n, x->value.data() + (begin + count) * n, out.data());
  return detail::make_op<T>(std::move(out), {x}, [x, begin, n](Node<T>& nd) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    std::size_t cnt = nd.grad.rows();
    for (std::size_t i = 0; i < cnt; ++i) {
      T* g = x->grad.data() + (begin + i) * n;
      const T* d = nd.grad.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) g[j] += d[j];
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_rows: empty input");
  std::size_t n = parts[0]->value.cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p->value.cols() == n, "concat_rows: width mismatch");
    total += p->value.rows();
  }
  Tensor<T> out({total, n});
  std::size_t r = 0;
  for (const auto& p : parts) {
    std::copy(p->value.data(), p->value.data() + p->value.numel(), out.data() + r * n);
    r += p->value.rows();
  }
  return detail::make_op<T>(std::move(out), parts, [parts, n](Node<T>& nd) {
    std::size_t r = 0;
    for (const auto& p : parts) {
      std::size_t rows = p->value.rows();
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t i = 0; i < rows; ++i) {
          T* g = p->grad.data() + i * n;
          const T* d = nd.grad.data() + (r + i) * n;
          for (std::size_t j = 0; j < n; ++j) g[j] += d[j];
        }
      }
      r += rows;
    }
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t count) {
  std::size_t m = x->value.rows(), n = x->value.cols();
  require(begin + count <= n, "slice_cols: out of range");
  Tensor<T> out({m, count});
  for (std::size_t i = 0; i < m; ++i)
    std::copy(x->value.row_ptr(i) + begin, x->value.row_ptr(i) + begin + count, out.row_ptr(i));
  return detail::make_op<T>(std::move(out), {x}, [x, begin, m, n](Node<T>& nd) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    std::size_t count = nd.grad.cols();
    for (std::size_t i = 0; i < m; ++i) {
      T* g = x->grad.data() + i * n + begin;
      const T* d = nd.grad.row_ptr(i);
      for (std::size_t j = 0; j < count; ++j) g[j] += d[j];
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_cols: empty input");
  std::size_t m = parts[0]->value.rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p->value.rows() == m, "concat_cols: height mismatch");
    total += p->value.cols();
  }
  Tensor<T> out({m, total});
  std::size_t c = 0;
  for (const auto& p : parts) {
    std::size_t w = p->value.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy(p->value.row_ptr(i), p->value.row_ptr(i) + w, out.data() + i * total + c);
    c += w;
  }
  return detail::make_op<T>(std::move(out), parts, [parts, m, total](Node<T>& nd) {
    std::size_t c = 0;
    for (const auto& p : parts) {
      std::size_t w = p->value.cols();
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          T* g = p->grad.row_ptr(i);
          const T* d = nd.grad.data() + i * total + c;
          for (std::size_t j = 0; j < w; ++j) g[j] += d[j];
        }
      }
      c += w;
    }
  });
}

// y[i] = x[idx[i]]; duplicate indices accumulate on backward
// (this is also the embedding lookup)
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<std::size_t> idx) {
  std::size_t n = x->value.cols();
  for (std::size_t i : idx) require(i < x->value.rows(), "gather_rows: index out of range");
  Tensor<T> out({idx.size(), n});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(x->value.row_ptr(idx[i]), x->value.row_ptr(idx[i]) + n, out.row_ptr(i));
  return detail::make_op<T>(std::move(out), {x}, [x, idx = std::move(idx), n](Node<T>& nd) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      T* g = x->grad.row_ptr(idx[i]);
      const T* d = nd.grad.row_ptr(i);
      for (std::size_t j = 0; j < n; ++j) g[j] += d[j];
    }
  });
}

// x[L,N] repeated m times along rows
template <typename T>
Var<T> tile_rows(const Var<T>& x, std::size_t m) {
  std::size_t l = x->value.rows(), n = x->value.cols();
  Tensor<T> out({l * m, n});
  for (std::size_t t = 0; t < m; ++t)
    std::copy(x->value.data(), x->value.data() + l * n, out.data() + t * l * n);
  return detail::make_op<T>(std::move(out), {x}, [x, l, m, n](Node<T>& nd) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t t = 0; t < m; ++t) {
      const T* d = nd.grad.data() + t * l * n;
      T* g = x->grad.data();
      for (std::size_t i = 0; i < l * n; ++i) g[i] += d[i];
    }
  });
}

// ---------------------------------------------------------------------------
// reductions and normalizations
// ---------------------------------------------------------------------------

template <typename T>
Var<T> mean_rows(const Var<T>& x) {
  std::size_t m = x->value.rows(), n = x->value.cols();
  require(m >= 1, "mean_rows: empty input");
  Tensor<T> out({1, n});
  for (std::size_t j = 0; j < n; ++j) {
    CompensatedSum<T> acc;
    for (std::size_t i = 0; i < m; ++i) acc.add(x->value.at(i, j));
    out[j] = acc.value() / T(m);
  }
  return detail::make_op<T>(std::move(out), {x}, [x, m, n](Node<T>& nd) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      T* g = x->grad.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) g[j] += nd.grad[j] / T(m);
    }
  });
}

// Mean over each consecutive group of `group` rows: [S*group, N] -> [S, N].
template <typename T>
Var<T> segment_mean_rows(const Var<T>& x, std::size_t group) {
  std::size_t rows = x->value.rows(), n = x->value.cols();
  require(group >= 1 && rows % group == 0, "segment_mean_rows: group must divide rows");
  std::size_t segments = rows / group;
  Tensor<T> out({segments, n});
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t j = 0; j < n; ++j) {
      CompensatedSum<T> acc;
      for (std::size_t i = 0; i < group; ++i) acc.add(x->value.at(s * group + i, j));
      out.at(s, j) = acc.value() / T(group);
    }
  }
  return detail::make_op<T>(std::move(out), {x}, [x, group, segments, n](Node<T>& nd) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t s = 0; s < segments; ++s) {
      const T* d = nd.grad.row_ptr(s);
      for (std::size_t i = 0; i < group; ++i) {
        T* g = x->grad.data() + (s * group + i) * n;
        for (std::size_t j = 0; j < n; ++j) g[j] += d[j] / T(group);
      }
    }
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  std::size_t n = x->value.numel();
  require(n >= 1, "mean_all: empty input");
  CompensatedSum<T> acc;
  for (std::size_t i = 0; i < n; ++i) acc.add(x->value[i]);
  Tensor<T> out = Tensor<T>::scalar(acc.value() / T(n));
  return detail::make_op<T>(std::move(out), {x}, [x, n](Node<T>& nd) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    T g = nd.grad[0] / T(n);
    for (std::size_t i = 0; i < n; ++i) x->grad[i] += g;
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  CompensatedSum<T> acc;
  for (std::size_t i = 0; i < x->value.numel(); ++i) acc.add(x->value[i]);
  Tensor<T> out = Tensor<T>::scalar(acc.value());
  return detail::make_op<T>(std::move(out), {x}, [x](Node<T>& nd) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < x->grad.numel(); ++i) x->grad[i] += nd.grad[0];
  });
}

template <typename T>
Var<T> take_diag(const Var<T>& x) {
  std::size_t n = x->value.rows();
  require(x->value.cols() == n, "take_diag: matrix must be square");
  Tensor<T> out({n});
  for (std::size_t i = 0; i < n; ++i) out[i] = x->value.at(i, i);
  return detail::make_op<T>(std::move(out), {x}, [x, n](Node<T>& nd) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) x->grad[i * n + i] += nd.grad[i];
  });
}

namespace detail {
template <typename T>
void check_finite(const Tensor<T>& t, const char* msg) {
  for (std::size_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t[i])) throw std::domain_error(msg);
}
}  // namespace detail

// Softmax over the trailing dimension, max-subtracted.
template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  require(x->value.rank() >= 1 && x->value.dim(x->value.rank() - 1) >= 1,
          "softmax_rows: trailing dimension must be >= 1");
  detail::check_finite(x->value, "non-finite input");
  std::size_t n = x->value.dim(x->value.rank() - 1);
  std::size_t m = x->value.numel() / n;
  Tensor<T> out(x->value.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const T* xi = x->value.data() + i * n;
    T* oi = out.data() + i * n;
    T mx = xi[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    CompensatedSum<T> denom;
    for (std::size_t j = 0; j < n; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      denom.add(oi[j]);
    }
    T d = denom.value();
    for (std::size_t j = 0; j < n; ++j) oi[j] /= d;
  }
  return detail::make_op<T>(std::move(out), {x}, [x, m, n](Node<T>& nd) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const T* y = nd.value.data() + i * n;
      const T* d = nd.grad.data() + i * n;
      T* g = x->grad.data() + i * n;
      CompensatedSum<T> dot;
      for (std::size_t j = 0; j < n; ++j) dot.add(d[j] * y[j]);
      T s = dot.value();
      for (std::size_t j = 0; j < n; ++j) g[j] += y[j] * (d[j] - s);
    }
  });
}

// Log-softmax over the trailing dimension.
template <typename T>
Var<T> log_softmax_rows(const Var<T>& x) {
  detail::check_finite(x->value, "non-finite input");
  std::size_t n = x->value.dim(x->value.rank() - 1);
  std::size_t m = x->value.numel() / n;
  Tensor<T> out(x->value.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const T* xi = x->value.data() + i * n;
    T* oi = out.data() + i * n;
    T mx = xi[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    CompensatedSum<T> denom;
    for (std::size_t j = 0; j < n; ++j) denom.add(std::exp(xi[j] - mx));
    T lse = mx + std::log(denom.value());
    for (std::size_t j = 0; j < n; ++j) oi[j] = xi[j] - lse;
  }
  return detail::make_op<T>(std::move(out), {x}, [x, m, n](Node<T>& nd) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const T* logp = nd.value.data() + i * n;
      const T* d = nd.grad.data() + i * n;
      T* g = x->grad.data() + i * n;
      CompensatedSum<T> tot;
      for (std::size_t j = 0; j < n; ++j) tot.add(d[j]);
      T s = tot.value();
      for (std::size_t j = 0; j < n; ++j) g[j] += d[j] - std::exp(logp[j]) * s;
    }
  });
}

// Per trailing-row layer norm with population variance.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  require(eps > 0, "layer_norm: eps must be positive");
  std::size_t k = x->value.dim(x->value.rank() - 1);
  require(gamma->value.numel() == k && beta->value.numel() == k, "layer_norm: gamma/beta size mismatch");
  std::size_t m = x->value.numel() / k;
  Tensor<T> out(x->value.shape());
  Tensor<T> xhat(x->value.shape());
  std::vector<T> inv_std(m);
  const T* gv = gamma->value.data();
  const T* bv = beta->value.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* xi = x->value.data() + i * k;
    CompensatedSum<T> s;
    for (std::size_t j = 0; j < k; ++j) s.add(xi[j]);
    T mean = s.value() / T(k);
    CompensatedSum<T> v;
    for (std::size_t j = 0; j < k; ++j) {
      T d = xi[j] - mean;
      v.add(d * d);
    }
    T istd = T(1) / std::sqrt(v.value() / T(k) + eps);
    inv_std[i] = istd;
    T* hi = xhat.data() + i * k;
    T* oi = out.data() + i * k;
    for (std::size_t j = 0; j < k; ++j) {
      hi[j] = (xi[j] - mean) * istd;
      oi[j] = hi[j] * gv[j] + bv[j];
    }
  }
  return detail::make_op<T>(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), m, k](Node<T>& nd) {
        const T* gv = gamma->value.data();
        if (gamma->requires_grad) {
          gamma->ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            const T* d = nd.grad.data() + i * k;
            const T* h = xhat.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) gamma->grad[j] += d[j] * h[j];
          }
        }
        if (beta->requires_grad) {
          beta->ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            const T* d = nd.grad.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) beta->grad[j] += d[j];
          }
        }
        if (x->requires_grad) {
          x->ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            const T* d = nd.grad.data() + i * k;
            const T* h = xhat.data() + i * k;
            T* g = x->grad.data() + i * k;
            CompensatedSum<T> s1, s2;
            for (std::size_t j = 0; j < k; ++j) {
              T dh = d[j] * gv[j];
              s1.add(dh);
              s2.add(dh * h[j]);
            }
            T m1 = s1.value() / T(k);
            T m2 = s2.value() / T(k);
            for (std::size_t j = 0; j < k; ++j) {
              T dh = d[j] * gv[j];
              g[j] += inv_std[i] * (dh - m1 - h[j] * m2);
            }
          }
        }
      });
}

// Row-wise L2 normalization.
template <typename T>
Var<T> l2_normalize_rows(const Var<T>& x) {
  std::size_t n = x->value.cols();
  std::size_t m = x->value.rows();
  Tensor<T> out(x->value.shape());
  std::vector<T> inv_norm(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* xi = x->value.row_ptr(i);
    CompensatedSum<T> s;
    for (std::size_t j = 0; j < n; ++j) s.add(xi[j] * xi[j]);
    T norm = std::sqrt(s.value());
    require(norm > 0, "l2_normalize_rows: zero row");
    inv_norm[i] = T(1) / norm;
    T* oi = out.row_ptr(i);
    for (std::size_t j = 0; j < n; ++j) oi[j] = xi[j] * inv_norm[i];
  }
  return detail::make_op<T>(std::move(out), {x},
                            [x, inv_norm = std::move(inv_norm), m, n](Node<T>& nd) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const T* y = nd.value.row_ptr(i);
      const T* d = nd.grad.row_ptr(i);
      T* g = x->grad.data() + i * n;
      CompensatedSum<T> dot;
      for (std::size_t j = 0; j < n; ++j) dot.add(d[j] * y[j]);
      T s = dot.value();
      for (std::size_t j = 0; j < n; ++j) g[j] += inv_norm[i] * (d[j] - y[j] * s);
    }
  });
}

// x * W + b convenience
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return add_rowvec(matmul(x, w), b);
}

}  // namespace mvs
