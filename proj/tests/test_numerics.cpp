#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "autodiff.hpp"
#include "checkpoint.hpp"
#include "gradcheck.hpp"
#include "params.hpp"
#include "pipeline.hpp"
#include "rng.hpp"
#include "schedule.hpp"

#include <sstream>

using namespace mvs;

namespace {

// Independent error-function oracle: Maclaurin series of erf, accurate to
// ~1e-15 for |z| <= 2.
double erf_series(double z) {
  double term = z;
  double sum = z;
  for (int n = 1; n < 60; ++n) {
    term *= -z * z / n;
    sum += term / (2 * n + 1);
  }
  return sum * 2.0 / std::sqrt(M_PI);
}

double phi_oracle(double x) { return 0.5 * (1.0 + erf_series(x / std::sqrt(2.0))); }

// Straight-line softmax in double precision, the oracle for the
// stability test.
std::vector<double> softmax_oracle(std::vector<double> row) {
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  double denom = 0;
  for (double& v : row) {
    v = std::exp(v - mx);
    denom += v;
  }
  for (double& v : row) v /= denom;
  return row;
}

}  // namespace

TEST_CASE("softmax rows: constant row is uniform") {
  for (double c : {-3.0, 0.0, 2.5, 1000.0}) {
    auto x = constant(Tensor<double>({1, 4}, {c, c, c, c}));
    auto y = softmax_rows(x);
    for (int i = 0; i < 4; ++i) CHECK(y->value[i] == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("softmax rows: [0, ln 3] -> [0.25, 0.75]") {
  auto x = constant(Tensor<double>({1, 2}, {0.0, std::log(3.0)}));
  auto y = softmax_rows(x);
  CHECK(y->value[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(y->value[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows: huge inputs match the shifted oracle") {
  auto x = constant(Tensor<double>({1, 2}, {1000.0, 1001.0}));
  auto y = softmax_rows(x);
  auto expected = softmax_oracle({0.0, 1.0});
  CHECK(std::isfinite(y->value[0]));
  CHECK(y->value[0] == doctest::Approx(expected[0]).epsilon(1e-12));
  CHECK(y->value[1] == doctest::Approx(expected[1]).epsilon(1e-12));
}

TEST_CASE("softmax rows: sums to one and shift invariant") {
  Rng rng(99);
  for (int round = 0; round < 50; ++round) {
    std::size_t n = 2 + rng.next_below(7);
    Tensor<float> t({1, n});
    for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<float>(rng.normal() * 3);
    auto y = softmax_rows(constant(t));
    float total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(y->value[i] >= 0.0f);
      total += y->value[i];
    }
    CHECK(std::abs(total - 1.0f) <= 1e-6f);

    float shift = static_cast<float>(rng.uniform(-5, 5));
    Tensor<float> shifted = t;
    for (std::size_t i = 0; i < n; ++i) shifted[i] += shift;
    auto y2 = softmax_rows(constant(shifted));
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y2->value[i] - y->value[i]) <= 1e-6f);
  }
}

TEST_CASE("softmax rows: non-finite input rejected") {
  auto x = constant(Tensor<double>({1, 2}, {std::nan(""), 0.0}));
  CHECK_THROWS_WITH_AS(softmax_rows(x), "non-finite input", std::domain_error);
  auto inf = constant(Tensor<double>({1, 2}, {std::numeric_limits<double>::infinity(), 0.0}));
  CHECK_THROWS_AS(softmax_rows(inf), std::domain_error);
}

TEST_CASE("layer norm: constant row maps to beta") {
  auto x = constant(Tensor<double>({1, 4}, {7.0, 7.0, 7.0, 7.0}));
  auto g = constant(Tensor<double>({4}, {1, 1, 1, 1}));
  auto b = constant(Tensor<double>({4}, {0, 0, 0, 0}));
  auto y = layer_norm(x, g, b, 1e-12);
  for (int i = 0; i < 4; ++i) CHECK(y->value[i] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("layer norm: [1,3] normalizes to [-1,1] with population variance") {
  auto x = constant(Tensor<double>({1, 2}, {1.0, 3.0}));
  auto g = constant(Tensor<double>({2}, {1, 1}));
  auto b = constant(Tensor<double>({2}, {0, 0}));
  auto y = layer_norm(x, g, b, 1e-12);
  CHECK(y->value[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(y->value[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("layer norm: random rows have mean beta, unit variance (independent sums)") {
  Rng rng(3);
  std::size_t k = 16;
  Tensor<double> t({2, k});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * 2 + 1;
  auto g = constant(Tensor<double>::full({k}, 1.0));
  auto b = constant(Tensor<double>::full({k}, 0.5));
  auto y = layer_norm(constant(t), g, b, 1e-10);
  for (std::size_t r = 0; r < 2; ++r) {
    // reverse-order accumulation as the independent summation
    double mean = 0;
    for (std::size_t j = k; j-- > 0;) mean += y->value.at(r, j);
    mean /= static_cast<double>(k);
    CHECK(mean == doctest::Approx(0.5).epsilon(1e-7));
    double var = 0;
    for (std::size_t j = k; j-- > 0;) {
      double d = y->value.at(r, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(k);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("layer norm: width mismatch is a shape error") {
  auto x = constant(Tensor<double>({1, 4}));
  auto g = constant(Tensor<double>({3}));
  auto b = constant(Tensor<double>({4}));
  CHECK_THROWS_AS(layer_norm(x, g, b, 1e-5), std::invalid_argument);
}

TEST_CASE("gelu: exact error-function form") {
  auto x = constant(Tensor<double>({3}, {0.0, 10.0, 1.0}));
  auto y = gelu(x);
  CHECK(y->value[0] == 0.0);
  CHECK(std::abs(y->value[1] - 10.0) < 1e-6);
  CHECK(y->value[2] == doctest::Approx(0.841345).epsilon(1e-6));
  // independent oracle
  CHECK(y->value[2] == doctest::Approx(1.0 * phi_oracle(1.0)).epsilon(1e-12));
}

TEST_CASE("grad_check: quadratic loss is exact") {
  ParamStore<double> params;
  auto theta = params.add("theta", Tensor<double>({2}, {1.0, 2.0}));
  auto loss_fn = [&]() { return sum_all(mul(theta, theta)); };
  auto result = grad_check<double>(loss_fn, params, 1e-5);
  CHECK(result.max_rel_error < 1e-8);
  // analytic gradient is [2, 4]
  params.zero_grad();
  backward(loss_fn());
  CHECK(theta->grad[0] == doctest::Approx(2.0));
  CHECK(theta->grad[1] == doctest::Approx(4.0));
}

namespace {

// forward identity whose backward doubles the gradient: the constructed
// fault grad_check must flag
template <typename T>
Var<T> buggy_identity(const Var<T>& x) {
  Tensor<T> out = x->value;
  return detail::make_op<T>(std::move(out), {x}, [x](Node<T>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < n.grad.numel(); ++i) x->grad[i] += T(2) * n.grad[i];
  });
}

}  // namespace

TEST_CASE("grad_check: detects a gradient scaled by two") {
  ParamStore<double> params;
  auto theta = params.add("theta", Tensor<double>({3}, {0.5, -1.0, 2.0}));
  auto loss_fn = [&]() { return sum_all(mul(buggy_identity(theta), theta)); };
  // d/dθ of θ² via the buggy path: analytic 3θ vs numeric 2θ
  auto result = grad_check<double>(loss_fn, params, 1e-5);
  CHECK(result.max_rel_error == doctest::Approx(1.0 / 3.0).epsilon(1e-4));

  // the canonical fault: whole gradient doubled
  auto loss2 = [&]() { return sum_all(mul(buggy_identity(theta), buggy_identity(theta))); };
  auto r2 = grad_check<double>(loss2, params, 1e-5);
  CHECK(r2.max_rel_error == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("grad_check: rejects non-deterministic losses") {
  ParamStore<double> params;
  auto theta = params.add("theta", Tensor<double>({1}, {1.0}));
  int calls = 0;
  auto loss_fn = [&]() {
    ++calls;
    auto noise = constant(Tensor<double>::scalar(calls * 0.001));
    return sum_all(add(mul(theta, theta), noise));
  };
  CHECK_THROWS_AS(grad_check<double>(loss_fn, params, 1e-5), std::runtime_error);
}

TEST_CASE("grad_check: eps outside [1e-6, 1e-4] rejected") {
  ParamStore<double> params;
  auto theta = params.add("theta", Tensor<double>({1}, {1.0}));
  auto loss_fn = [&]() { return sum_all(mul(theta, theta)); };
  CHECK_THROWS_AS(grad_check<double>(loss_fn, params, 1e-7), std::invalid_argument);
  CHECK_THROWS_AS(grad_check<double>(loss_fn, params, 1e-3), std::invalid_argument);
}

TEST_CASE("gradient suite: every op within 1e-4 on random small shapes") {
  auto report = pipeline::grad_check_suite(/*seed=*/4321, /*shapes_per_op=*/20);
  for (const auto& item : report.items) {
    INFO(item.name);
    CHECK(item.max_rel_error <= 1e-4);
  }
}

TEST_CASE("ops are deterministic: identical inputs give bit-identical outputs") {
  Rng rng(17);
  Tensor<float> t({4, 8});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal());
  auto a1 = softmax_rows(constant(t));
  auto a2 = softmax_rows(constant(t));
  for (std::size_t i = 0; i < t.numel(); ++i) CHECK(a1->value[i] == a2->value[i]);

  Tensor<float> w({8, 8});
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<float>(rng.normal());
  auto m1 = matmul(constant(t), constant(w));
  auto m2 = matmul(constant(t), constant(w));
  for (std::size_t i = 0; i < m1->value.numel(); ++i) CHECK(m1->value[i] == m2->value[i]);
}

TEST_CASE("frozen parameters receive no gradient") {
  ParamStore<double> params;
  auto frozen = params.add("frozen", Tensor<double>({2}, {1.0, 2.0}), /*trainable=*/false);
  auto live = params.add("live", Tensor<double>({2}, {3.0, 4.0}));
  auto loss = sum_all(mul(add(frozen, live), live));
  params.zero_grad();
  backward(loss);
  CHECK(frozen->grad.numel() == 0);  // never allocated
  CHECK(live->grad.numel() == 2);
}

TEST_CASE("checkpoint: DDCP round trip is bit exact") {
  Rng rng(5);
  ParamStore<float> params;
  params.add("a.w", normal_init<float>({3, 5}, 1.37, rng));
  params.add("a.b", normal_init<float>({5}, 0.2, rng));
  params.add("scalar", Tensor<float>::scalar(2.5f));

  std::ostringstream os(std::ios::binary);
  std::vector<NamedTensor<float>> entries;
  for (const auto& p : params.items()) entries.push_back({p.name, p.var->value});
  save_checkpoint(os, entries);
  std::string first = os.str();

  CHECK(first.substr(0, 4) == "DDCP");

  std::istringstream is(first, std::ios::binary);
  auto loaded = load_checkpoint<float>(is);
  REQUIRE(loaded.size() == 3);

  std::ostringstream os2(std::ios::binary);
  save_checkpoint(os2, loaded);
  CHECK(os2.str() == first);  // byte-identical after a round trip

  for (std::size_t e = 0; e < loaded.size(); ++e) {
    CHECK(loaded[e].name == entries[e].name);
    REQUIRE(loaded[e].tensor.shape() == entries[e].tensor.shape());
    for (std::size_t i = 0; i < loaded[e].tensor.numel(); ++i)
      CHECK(loaded[e].tensor[i] == entries[e].tensor[i]);
  }
}

TEST_CASE("checkpoint: bad magic rejected") {
  std::istringstream is("XXXX\x01\x00\x00\x00\x00\x00\x00\x00", std::ios::binary);
  CHECK_THROWS_AS(load_checkpoint<float>(is), std::runtime_error);
}

TEST_CASE("cosine schedule endpoints and midpoint") {
  CHECK(cosine_lr(0, 100, 3e-4) == doctest::Approx(3e-4));
  CHECK(cosine_lr(100, 100, 3e-4) == doctest::Approx(0.0));
  CHECK(cosine_lr(50, 100, 3e-4) == doctest::Approx(1.5e-4));
  CHECK(cosine_lr(50, 100, 2e-4, 1e-4) == doctest::Approx(1.5e-4));
  CHECK_THROWS_AS(cosine_lr(0, 0, 1e-3), std::invalid_argument);
  CHECK_THROWS_AS(cosine_lr(11, 10, 1e-3), std::invalid_argument);
}

TEST_CASE("compensated summation survives adversarial cancellation") {
  std::vector<double> values = {1e16, 1.0, -1e16, 1.0};
  CHECK(compensated_sum(values.data(), values.size()) == doctest::Approx(2.0));
}
