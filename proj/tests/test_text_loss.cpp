#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "captions.hpp"
#include "gradcheck.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "text.hpp"

using namespace mvs;

namespace {

Vocab tiny_vocab() {
  return Vocab::build({"a", "red", "sphere", "blue", "cube"}, 8);
}

template <typename T>
Tensor<T> unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  Tensor<T> t({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    double norm2 = 0;
    for (std::size_t c = 0; c < d; ++c) {
      double v = rng.normal();
      t.at(r, c) = static_cast<T>(v);
      norm2 += v * v;
    }
    T inv = static_cast<T>(1.0 / std::sqrt(norm2));
    for (std::size_t c = 0; c < d; ++c) t.at(r, c) *= inv;
  }
  return t;
}

}  // namespace

TEST_CASE("vocab: specials hold the reserved ids") {
  Vocab v = tiny_vocab();
  CHECK(Vocab::kBos == 0);
  CHECK(Vocab::kEos == 1);
  CHECK(Vocab::kPad == 2);
  CHECK(Vocab::kUnk == 3);
  CHECK(v.size() == 9);
  CHECK(v.id_of("a") >= 4);
}

TEST_CASE("tokenize: empty string is BOS EOS PAD...") {
  Vocab v = tiny_vocab();
  auto ids = v.encode("");
  REQUIRE(ids.size() == 8);
  CHECK(ids[0] == Vocab::kBos);
  CHECK(ids[1] == Vocab::kEos);
  for (std::size_t i = 2; i < ids.size(); ++i) CHECK(ids[i] == Vocab::kPad);
}

TEST_CASE("tokenize: known words map to their table ids") {
  Vocab v = tiny_vocab();
  auto ids = v.encode("a red sphere");
  CHECK(ids[0] == Vocab::kBos);
  CHECK(ids[1] == v.id_of("a"));
  CHECK(ids[2] == v.id_of("red"));
  CHECK(ids[3] == v.id_of("sphere"));
  CHECK(ids[4] == Vocab::kEos);
  CHECK(ids[5] == Vocab::kPad);
  // case folding
  CHECK(v.encode("A RED Sphere") == ids);
}

TEST_CASE("tokenize: unknown word becomes UNK in place") {
  Vocab v = tiny_vocab();
  auto ids = v.encode("a zxqv sphere");
  CHECK(ids[2] == Vocab::kUnk);
  CHECK(ids[1] == v.id_of("a"));
  CHECK(ids[3] == v.id_of("sphere"));
}

TEST_CASE("tokenize: long input truncates but keeps EOS") {
  Vocab v = tiny_vocab();
  auto ids = v.encode("a red sphere a red sphere a red sphere a red");
  REQUIRE(static_cast<int>(ids.size()) == v.max_len());
  CHECK(ids[0] == Vocab::kBos);
  CHECK(ids.back() == Vocab::kEos);
}

TEST_CASE("vocab: tab-separated round trip") {
  Vocab v = Vocab::build(grammar_words(), 16);
  auto path = std::filesystem::temp_directory_path() / "mvs_vocab_test.tsv";
  v.save(path.string());
  Vocab loaded = Vocab::load(path.string());
  CHECK(loaded.size() == v.size());
  CHECK(loaded.max_len() == v.max_len());
  CHECK(loaded.id_of("sphere") == v.id_of("sphere"));
  CHECK(loaded.id_of("0.837") == v.id_of("0.837"));
  std::filesystem::remove(path);
}

TEST_CASE("encode_text: unit norm and bit-identical determinism") {
  Vocab v = tiny_vocab();
  TextConfig cfg;
  cfg.vocab_size = v.size();
  cfg.width = 16;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.max_len = 8;
  cfg.embed_dim = 8;
  ParamStore<float> params;
  Rng rng(3);
  auto weights = init_text(params, "text.", cfg, rng);

  auto a = encode_text<float>("a red sphere", v, weights, cfg);
  auto b = encode_text<float>("a red sphere", v, weights, cfg);
  double norm2 = 0;
  for (std::size_t i = 0; i < a->value.numel(); ++i) {
    norm2 += double(a->value[i]) * a->value[i];
    CHECK(a->value[i] == b->value[i]);  // determinism, bitwise
  }
  CHECK(std::abs(std::sqrt(norm2) - 1.0) <= 1e-6);

  // different caption, different embedding
  auto c = encode_text<float>("a blue cube", v, weights, cfg);
  bool any_diff = false;
  for (std::size_t i = 0; i < c->value.numel(); ++i)
    if (c->value[i] != a->value[i]) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("info_nce: N=1 gives exactly zero") {
  Rng rng(5);
  auto a = constant(unit_rows<double>(1, 6, rng));
  auto b = constant(unit_rows<double>(1, 6, rng));
  auto loss = info_nce(a, b, 0.07);
  CHECK(loss->value[0] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("info_nce: all-identical embeddings give ln N") {
  for (std::size_t n : {2, 4, 8}) {
    Rng rng(6);
    Tensor<double> row = unit_rows<double>(1, 8, rng);
    Tensor<double> batch({n, 8});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < 8; ++c) batch.at(r, c) = row[c];
    auto loss = info_nce(constant(batch), constant(batch), 0.07);
    CHECK(loss->value[0] == doctest::Approx(std::log(double(n))).epsilon(1e-9));
  }
}

TEST_CASE("info_nce: N=2 orthonormal basis at tau=1 matches the two-logit oracle") {
  Tensor<double> basis({2, 2}, {1, 0, 0, 1});
  auto loss = info_nce(constant(basis), constant(basis), 1.0);
  // per row: -log(e^1 / (e^1 + e^0)) = ln(1 + e^-1)
  double expected = std::log(1.0 + std::exp(-1.0));
  CHECK(loss->value[0] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(loss->value[0] == doctest::Approx(0.313262).epsilon(1e-6));
}

TEST_CASE("info_nce: nonnegative on random unit batches") {
  Rng rng(7);
  for (int round = 0; round < 20; ++round) {
    std::size_t n = 1 + rng.next_below(6);
    auto a = constant(unit_rows<double>(n, 12, rng));
    auto b = constant(unit_rows<double>(n, 12, rng));
    auto loss = info_nce(a, b, 0.07);
    CHECK(loss->value[0] >= -1e-12);
    CHECK(std::isfinite(loss->value[0]));
  }
}

TEST_CASE("full_loss: identical embeddings across modalities give ln N") {
  Rng rng(8);
  std::size_t n = 4;
  Tensor<double> row = unit_rows<double>(1, 8, rng);
  Tensor<double> batch({n, 8});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < 8; ++c) batch.at(r, c) = row[c];
  auto b = constant(batch);
  auto loss = full_loss(b, b, b, 0.07);
  CHECK(loss->value[0] == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("full_loss: equals the mean of the four info_nce terms") {
  Rng rng(9);
  std::size_t n = 5, d = 16;
  auto fs = constant(unit_rows<double>(n, d, rng));
  auto fi = constant(unit_rows<double>(n, d, rng));
  auto ft = constant(unit_rows<double>(n, d, rng));
  double tau = 0.07;
  auto combined = full_loss(fs, fi, ft, tau);
  double expected = (info_nce(fs, ft, tau)->value[0] + info_nce(ft, fs, tau)->value[0] +
                     info_nce(fs, fi, tau)->value[0] + info_nce(fi, fs, tau)->value[0]) /
                    4.0;
  CHECK(std::abs(combined->value[0] - expected) <= 1e-7);
}

TEST_CASE("full_loss: invariant under a common batch permutation") {
  Rng rng(10);
  std::size_t n = 6, d = 8;
  Tensor<double> s = unit_rows<double>(n, d, rng);
  Tensor<double> i = unit_rows<double>(n, d, rng);
  Tensor<double> t = unit_rows<double>(n, d, rng);
  double base = full_loss(constant(s), constant(i), constant(t), 0.07)->value[0];

  std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  Tensor<double> sp({n, d}), ip({n, d}), tp({n, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      sp.at(r, c) = s.at(perm[r], c);
      ip.at(r, c) = i.at(perm[r], c);
      tp.at(r, c) = t.at(perm[r], c);
    }
  double permuted = full_loss(constant(sp), constant(ip), constant(tp), 0.07)->value[0];
  CHECK(permuted == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("full_loss: batch-size mismatch rejected, N=0 rejected") {
  Rng rng(11);
  auto a = constant(unit_rows<double>(3, 4, rng));
  auto b = constant(unit_rows<double>(2, 4, rng));
  CHECK_THROWS_AS(info_nce(a, b, 0.07), std::invalid_argument);
  CHECK_THROWS_AS(full_loss(a, a, b, 0.07), std::invalid_argument);
  Tensor<double> empty({0, 4});
  CHECK_THROWS_AS(info_nce(constant(empty), constant(empty), 0.07), std::invalid_argument);
}

TEST_CASE("full_loss: gradients flow to fS and logit scale, frozen branches get none") {
  Rng rng(12);
  std::size_t n = 3, d = 8;
  ParamStore<double> params;
  auto raw_s = params.add("raw_s", unit_rows<double>(n, d, rng));
  auto logit_scale =
      params.add("logit_scale", Tensor<double>::scalar(initial_logit_scale()));
  auto frozen_i = constant(unit_rows<double>(n, d, rng));
  auto frozen_t = constant(unit_rows<double>(n, d, rng));

  auto loss_fn = [&]() {
    return full_loss(l2_normalize_rows(raw_s), frozen_i, frozen_t, exp_elem(logit_scale));
  };
  auto result = grad_check<double>(loss_fn, params, 1e-5);
  CHECK(result.max_rel_error <= 1e-4);

  params.zero_grad();
  backward(loss_fn());
  CHECK(raw_s->grad.numel() == n * d);
  CHECK(logit_scale->grad.numel() == 1);
  CHECK(frozen_i->grad.numel() == 0);
  CHECK(frozen_t->grad.numel() == 0);
}

TEST_CASE("logit scale: clamp keeps tau at or above the floor") {
  auto ls = leaf(Tensor<float>::scalar(10.0f));
  clamp_logit_scale(ls);
  CHECK(ls->value[0] == doctest::Approx(std::log(100.0)));
  auto ok = leaf(Tensor<float>::scalar(1.0f));
  clamp_logit_scale(ok);
  CHECK(ok->value[0] == doctest::Approx(1.0f));
  CHECK(std::exp(-static_cast<double>(ls->value[0])) >= kMinTau - 1e-9);
}
