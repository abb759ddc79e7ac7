#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "encoder.hpp"
#include "gradcheck.hpp"
#include "loss.hpp"
#include "rng.hpp"

using namespace mvs;

namespace {

Image random_image(int size, Rng& rng) {
  Image img(size, size);
  for (auto& px : img.rgb) px = static_cast<float>(rng.uniform());
  return img;
}

template <typename T>
struct TinyModel {
  EncoderConfig cfg;
  ParamStore<T> params;
  VitWeights<T> weights;
};

template <typename T>
TinyModel<T> make_model(EncoderConfig cfg, std::uint64_t seed) {
  TinyModel<T> m;
  m.cfg = cfg;
  Rng rng(seed);
  m.weights = init_vit(m.params, "vit.", cfg, rng);
  return m;
}

EncoderConfig small_cfg() {
  EncoderConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 8;
  cfg.width = 16;
  cfg.depth = 3;
  cfg.heads = 2;
  cfg.frozen_prefix = 1;
  cfg.embed_dim = 8;
  cfg.max_views = 6;
  return cfg;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.numel() == b.numel());
  T worst = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_CASE("patchify: token counts follow the patch-count rule") {
  EncoderConfig cfg;
  cfg.image_size = 32;
  cfg.patch_size = 8;
  CHECK(cfg.patch_count() == 16);
  CHECK(cfg.tokens_per_view() == 17);

  EncoderConfig paper;
  paper.image_size = 224;
  paper.patch_size = 32;
  CHECK(paper.patch_count() == 49);
  CHECK(paper.tokens_per_view() == 50);
}

TEST_CASE("patchify: produces [L, width] tokens with CLS first") {
  auto m = make_model<double>(small_cfg(), 11);
  Rng rng(1);
  Image img = random_image(16, rng);
  auto tokens = patchify(img, m.weights, m.cfg);
  CHECK(tokens->value.rows() == 5);  // 4 patches + CLS
  CHECK(tokens->value.cols() == 16);
  // CLS row = cls + pos[0], independent of the image
  for (std::size_t j = 0; j < 16; ++j)
    CHECK(tokens->value.at(0, j) ==
          doctest::Approx(m.weights.cls->value[j] + m.weights.pos->value.at(0, j)));
}

TEST_CASE("patchify: non-divisible image size is rejected") {
  EncoderConfig bad;
  bad.image_size = 33;
  bad.patch_size = 8;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  // a mismatched image against a valid config is rejected too
  auto m = make_model<double>(small_cfg(), 11);
  Rng rng(1);
  Image wrong = random_image(24, rng);
  CHECK_THROWS_AS(patchify(wrong, m.weights, m.cfg), std::invalid_argument);
}

TEST_CASE("attention: single token returns its value row") {
  Rng rng(2);
  Tensor<double> q({1, 4}), k({1, 4}), v({1, 4});
  for (std::size_t i = 0; i < 4; ++i) {
    q[i] = rng.normal();
    k[i] = rng.normal();
    v[i] = rng.normal();
  }
  auto out = attention(constant(q), constant(k), constant(v));
  for (std::size_t i = 0; i < 4; ++i) CHECK(out->value[i] == doctest::Approx(v[i]).epsilon(1e-12));
}

TEST_CASE("attention: identical keys average the values") {
  Rng rng(3);
  std::size_t t = 5, d = 3;
  Tensor<double> q({t, d}), k({t, d}), v({t, d});
  for (std::size_t i = 0; i < q.numel(); ++i) q[i] = rng.normal();
  for (std::size_t j = 0; j < d; ++j) {
    double kj = rng.normal();
    for (std::size_t i = 0; i < t; ++i) k.at(i, j) = kj;  // all key rows identical
  }
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] = rng.normal();
  auto out = attention(constant(q), constant(k), constant(v));
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0;
    for (std::size_t i = 0; i < t; ++i) mean += v.at(i, j);
    mean /= static_cast<double>(t);
    for (std::size_t i = 0; i < t; ++i) CHECK(out->value.at(i, j) == doctest::Approx(mean));
  }
}

TEST_CASE("attention: random 3-token case matches a straight-line oracle") {
  Rng rng(4);
  std::size_t t = 3, d = 4;
  Tensor<double> q({t, d}), k({t, d}), v({t, d});
  for (std::size_t i = 0; i < q.numel(); ++i) {
    q[i] = rng.normal();
    k[i] = rng.normal();
    v[i] = rng.normal();
  }
  auto out = attention(constant(q), constant(k), constant(v));

  // independent straight-line evaluation
  double scale_factor = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < t; ++i) {
    double scores[3];
    double mx = -1e300;
    for (std::size_t j = 0; j < t; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += q.at(i, c) * k.at(j, c);
      scores[j] = s * scale_factor;
      mx = std::max(mx, scores[j]);
    }
    double denom = 0;
    for (std::size_t j = 0; j < t; ++j) denom += std::exp(scores[j] - mx);
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0;
      for (std::size_t j = 0; j < t; ++j)
        acc += std::exp(scores[j] - mx) / denom * v.at(j, c);
      CHECK(out->value.at(i, c) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("MVA: m=1 equals per-view attention exactly") {
  for (std::uint64_t seed : {21, 22, 23}) {
    auto m = make_model<double>(small_cfg(), seed);
    Rng rng(seed + 100);
    std::vector<Image> views = {random_image(16, rng)};
    auto joint = encode_shape<double>(views, m.weights, m.cfg, /*use_mva=*/true);
    auto plain = encode_shape<double>(views, m.weights, m.cfg, /*use_mva=*/false);
    CHECK(max_abs_diff(joint->value, plain->value) <= 1e-12);
  }
}

TEST_CASE("MVA: duplicated views reproduce the single-view output") {
  // with every view byte-identical, each key appears m times and the
  // per-copy softmax weights sum to the single-copy weight
  auto m = make_model<double>(small_cfg(), 31);
  Rng rng(131);
  Image img = random_image(16, rng);
  auto single = encode_shape<double>({img}, m.weights, m.cfg, true);
  for (int copies : {2, 3, 6}) {
    std::vector<Image> dup(copies, img);
    auto out = encode_shape<double>(dup, m.weights, m.cfg, true);
    CHECK(max_abs_diff(out->value, single->value) <= 1e-9);
  }
}

TEST_CASE("MVA: permuting views permutes outputs (equivariance of the block)") {
  auto m = make_model<double>(small_cfg(), 41);
  Rng rng(141);
  std::size_t views = 4;
  std::size_t L = m.cfg.tokens_per_view();

  std::vector<Image> imgs;
  for (std::size_t v = 0; v < views; ++v) imgs.push_back(random_image(16, rng));

  auto tokens = [&](const std::vector<Image>& vs) {
    std::vector<Var<double>> per_view;
    for (const auto& img : vs) per_view.push_back(patchify(img, m.weights, m.cfg));
    return concat_rows(per_view);
  };
  auto base =
      transformer_block(tokens(imgs), m.weights.blocks[0], m.cfg, views, /*joint=*/true);

  std::vector<Image> permuted = {imgs[2], imgs[0], imgs[3], imgs[1]};
  std::size_t perm[4] = {2, 0, 3, 1};
  auto shuffled =
      transformer_block(tokens(permuted), m.weights.blocks[0], m.cfg, views, /*joint=*/true);

  for (std::size_t v = 0; v < views; ++v)
    for (std::size_t r = 0; r < L; ++r)
      for (std::size_t c = 0; c < m.cfg.width; ++c)
        CHECK(shuffled->value.at(v * L + r, c) ==
              doctest::Approx(base->value.at(perm[v] * L + r, c)).epsilon(1e-10));
}

TEST_CASE("encode_shape: permutation invariance across m and seeds") {
  Rng meta(7);
  for (int round = 0; round < 10; ++round) {
    auto m = make_model<double>(small_cfg(), 700 + round);
    Rng rng(900 + round);
    std::size_t count = 2 + meta.next_below(5);  // 2..6 views
    std::vector<Image> imgs;
    for (std::size_t v = 0; v < count; ++v) imgs.push_back(random_image(16, rng));
    auto base = encode_shape<double>(imgs, m.weights, m.cfg, true);

    std::vector<Image> perm = imgs;
    meta.shuffle(perm);
    auto out = encode_shape<double>(perm, m.weights, m.cfg, true);
    CHECK(max_abs_diff(out->value, base->value) <= 1e-6);
  }
}

TEST_CASE("encode_shape: unit norm, m=1 reduction, view-count contract") {
  auto m = make_model<float>(small_cfg(), 51);
  Rng rng(151);
  std::vector<Image> imgs;
  for (int v = 0; v < 6; ++v) imgs.push_back(random_image(16, rng));

  for (int count = 1; count <= 6; ++count) {
    std::vector<Image> subset(imgs.begin(), imgs.begin() + count);
    auto out = encode_shape<float>(subset, m.weights, m.cfg, true);
    double norm2 = 0;
    for (std::size_t i = 0; i < out->value.numel(); ++i)
      norm2 += double(out->value[i]) * out->value[i];
    CHECK(std::abs(std::sqrt(norm2) - 1.0) <= 1e-6);
  }

  // m exceeding max_views or m = 0 are contract violations
  std::vector<Image> too_many(7, imgs[0]);
  CHECK_THROWS_AS(encode_shape<float>(too_many, m.weights, m.cfg, true), std::invalid_argument);
  std::vector<Image> none;
  CHECK_THROWS_AS(encode_shape<float>(none, m.weights, m.cfg, true), std::invalid_argument);
}

TEST_CASE("encode_shape: duplicated views at single precision stay within 1e-5") {
  auto m = make_model<float>(small_cfg(), 61);
  Rng rng(161);
  Image img = random_image(16, rng);
  auto single = encode_shape<float>({img}, m.weights, m.cfg, true);
  std::vector<Image> dup(4, img);
  auto out = encode_shape<float>(dup, m.weights, m.cfg, true);
  CHECK(max_abs_diff(out->value, single->value) <= 1e-5f);
}

TEST_CASE("encoder gradients: full encoder passes grad_check on a tiny config") {
  EncoderConfig cfg = small_cfg();
  cfg.depth = 2;
  cfg.frozen_prefix = 1;

  ParamStore<double> params;
  Rng init(71);
  auto weights = init_vit(params, "vit.", cfg, init);

  Rng data(171);
  std::vector<Image> imgs = {random_image(16, data), random_image(16, data)};
  Tensor<double> target({1, std::size_t(cfg.embed_dim)});
  double n2 = 0;
  for (std::size_t i = 0; i < target.numel(); ++i) {
    target[i] = data.normal();
    n2 += target[i] * target[i];
  }
  for (std::size_t i = 0; i < target.numel(); ++i) target[i] /= std::sqrt(n2);

  auto loss_fn = [&]() {
    auto emb = encode_shape<double>(imgs, weights, cfg, true);
    auto diff = add(emb, scale(constant(target), -1.0));
    return sum_all(mul(diff, diff));
  };
  auto result = grad_check<double>(loss_fn, params, 1e-5);
  INFO(result.worst_param);
  CHECK(result.max_rel_error <= 1e-4);
}

TEST_CASE("frozen-prefix layers stay per-view even with MVA enabled") {
  // duplicate patches across views differ, so cross-view leakage in the
  // prefix would change the per-view embedding for m=1 vs per-view runs;
  // instead verify via the capture: the prefix layer never spans views
  auto m = make_model<float>(small_cfg(), 81);
  Rng rng(181);
  std::vector<Image> imgs = {random_image(16, rng), random_image(16, rng)};

  AttentionCapture<float> cap;
  cap.layer = 0;  // inside the frozen prefix
  encode_shape<float>(imgs, m.weights, m.cfg, true, &cap);
  REQUIRE(!cap.head_probs.empty());
  CHECK_FALSE(cap.mva_joint);
  CHECK(cap.head_probs[0].rows() == m.cfg.tokens_per_view());  // per-view matrices

  AttentionCapture<float> cap2;
  cap2.layer = 1;  // first suffix layer
  encode_shape<float>(imgs, m.weights, m.cfg, true, &cap2);
  CHECK(cap2.mva_joint);
  CHECK(cap2.head_probs[0].rows() == 2 * m.cfg.tokens_per_view());
}

TEST_CASE("batched encoding is row-identical to per-object encoding") {
  auto m = make_model<float>(small_cfg(), 91);
  Rng rng(191);
  std::vector<std::vector<Image>> objects;
  for (int o = 0; o < 5; ++o) {
    std::vector<Image> views;
    for (int v = 0; v < 3; ++v) views.push_back(random_image(16, rng));
    objects.push_back(std::move(views));
  }
  for (bool mva : {true, false}) {
    auto batch = encode_shape_batch<float>(objects, m.weights, m.cfg, mva);
    REQUIRE(batch->value.rows() == 5);
    for (std::size_t o = 0; o < 5; ++o) {
      auto single = encode_shape<float>(objects[o], m.weights, m.cfg, mva);
      for (std::size_t c = 0; c < single->value.numel(); ++c)
        CHECK(batch->value.at(o, c) == single->value[c]);  // bitwise
    }
  }

  std::vector<std::vector<Image>> ragged = objects;
  ragged[2].pop_back();
  CHECK_THROWS_AS(encode_shape_batch<float>(ragged, m.weights, m.cfg, true),
                  std::invalid_argument);
}
