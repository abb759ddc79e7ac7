#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "index.hpp"
#include "protocols.hpp"
#include "rng.hpp"

using namespace mvs;
namespace fs = std::filesystem;

namespace {

std::vector<float> unit_vec(std::size_t d, Rng& rng) {
  std::vector<float> v(d);
  double norm2 = 0;
  for (auto& x : v) {
    x = static_cast<float>(rng.normal());
    norm2 += double(x) * x;
  }
  float inv = static_cast<float>(1.0 / std::sqrt(norm2));
  for (auto& x : v) x *= inv;
  return v;
}

EmbeddingIndex random_index(std::size_t n, std::size_t d, Rng& rng) {
  EmbeddingIndex index(static_cast<int>(d));
  for (std::size_t i = 0; i < n; ++i) index.add("id" + std::to_string(i), unit_vec(d, rng));
  return index;
}

// brute-force oracle: full stable sort over plain dot products
std::vector<std::size_t> oracle_ranking(const EmbeddingIndex& index, const float* query) {
  std::vector<std::pair<float, std::size_t>> scored;
  for (std::size_t i = 0; i < index.size(); ++i) {
    float s = 0;
    for (int j = 0; j < index.dim(); ++j) s += query[j] * index.row(i)[j];
    scored.push_back({s, i});
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> rows;
  for (const auto& [s, i] : scored) rows.push_back(i);
  return rows;
}

// brute-force concept-mix oracle
std::size_t oracle_mix(const EmbeddingIndex& index, const float* a, const float* b,
                       const std::vector<std::size_t>& exclude) {
  double best = -1e30;
  std::size_t best_row = SIZE_MAX;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (std::find(exclude.begin(), exclude.end(), i) != exclude.end()) continue;
    float sa = 0, sb = 0;
    for (int j = 0; j < index.dim(); ++j) {
      sa += a[j] * index.row(i)[j];
      sb += b[j] * index.row(i)[j];
    }
    float s = std::min(sa, sb);
    if (best_row == SIZE_MAX || s > best) {
      best = s;
      best_row = i;
    }
  }
  return best_row;
}

SentenceEncoder fixture_encoder(std::size_t dim, std::uint64_t salt) {
  return [dim, salt](const std::string& text) {
    Rng rng(salt + std::hash<std::string>{}(text));
    std::vector<float> v(dim);
    double norm2 = 0;
    for (auto& x : v) {
      x = static_cast<float>(rng.normal());
      norm2 += double(x) * x;
    }
    float inv = static_cast<float>(1.0 / std::sqrt(norm2));
    for (auto& x : v) x *= inv;
    return v;
  };
}

}  // namespace

TEST_CASE("class embeddings: one template reproduces the sentence embedding") {
  auto enc = fixture_encoder(16, 1);
  auto set = build_class_embeddings({"sphere"}, {"a {}"}, enc);
  auto direct = enc("a sphere");
  REQUIRE(set.embeddings.size() == 1);
  for (std::size_t i = 0; i < direct.size(); ++i)
    CHECK(set.embeddings[0][i] == doctest::Approx(direct[i]).epsilon(1e-6));
}

TEST_CASE("class embeddings: duplicated templates change nothing") {
  auto enc = fixture_encoder(16, 2);
  auto once = build_class_embeddings({"cube"}, {"a {}", "a photo of a {}"}, enc);
  auto twice = build_class_embeddings(
      {"cube"}, {"a {}", "a photo of a {}", "a {}", "a photo of a {}"}, enc);
  for (std::size_t i = 0; i < once.embeddings[0].size(); ++i)
    CHECK(once.embeddings[0][i] == doctest::Approx(twice.embeddings[0][i]).epsilon(1e-6));
}

TEST_CASE("class embeddings: five classes give five unit rows") {
  auto enc = fixture_encoder(32, 3);
  auto set = build_class_embeddings({"sphere", "cube", "cylinder", "cone", "ring"},
                                    {"a {}", "a 3d model of a {}"}, enc);
  REQUIRE(set.embeddings.size() == 5);
  for (const auto& e : set.embeddings) {
    double norm2 = 0;
    for (float v : e) norm2 += double(v) * v;
    CHECK(std::abs(std::sqrt(norm2) - 1.0) <= 1e-6);
  }
  CHECK_THROWS_AS(build_class_embeddings({}, {"a {}"}, enc), std::invalid_argument);
  CHECK_THROWS_AS(build_class_embeddings({"x"}, {}, enc), std::invalid_argument);
}

TEST_CASE("classify: a class's own embedding ranks first with score one") {
  auto enc = fixture_encoder(16, 4);
  auto set = build_class_embeddings({"sphere", "cube", "cone"}, {"a {}", "a photo of a {}"}, enc);
  auto ranked = classify(set.embeddings[1], set);
  CHECK(ranked[0].class_index == 1);
  CHECK(ranked[0].score == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("classify: decision invariant to positive scaling before normalization") {
  auto enc = fixture_encoder(16, 5);
  auto set = build_class_embeddings({"a", "b", "c", "d"}, {"a {}"}, enc);
  Rng rng(6);
  auto f = unit_vec(16, rng);
  auto base = classify(f, set);
  // cosine ordering only depends on direction
  std::vector<float> scaled = f;
  for (auto& v : scaled) v *= 7.5f;
  float norm2 = 0;
  for (float v : scaled) norm2 += v * v;
  for (auto& v : scaled) v /= std::sqrt(norm2);
  auto again = classify(scaled, set);
  for (std::size_t i = 0; i < base.size(); ++i)
    CHECK(base[i].class_index == again[i].class_index);
}

TEST_CASE("classify: matches the brute-force oracle on random cases") {
  Rng rng(7);
  for (int round = 0; round < 50; ++round) {
    std::size_t c = 2 + rng.next_below(9), d = 4 + rng.next_below(13);
    ClassPromptSet set;
    for (std::size_t i = 0; i < c; ++i) {
      set.classes.push_back("c" + std::to_string(i));
      set.embeddings.push_back(unit_vec(d, rng));
    }
    auto query = unit_vec(d, rng);
    auto ranked = classify(query, set);

    std::vector<std::pair<float, int>> oracle;
    for (std::size_t i = 0; i < c; ++i) {
      float s = 0;
      for (std::size_t j = 0; j < d; ++j) s += query[j] * set.embeddings[i][j];
      oracle.push_back({s, static_cast<int>(i)});
    }
    std::stable_sort(oracle.begin(), oracle.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; i < c; ++i) {
      CHECK(ranked[i].class_index == oracle[i].second);
      CHECK(ranked[i].score == oracle[i].first);
    }
  }
}

TEST_CASE("classify: ties break by ascending class index") {
  ClassPromptSet set;
  set.classes = {"x", "y", "z"};
  set.embeddings = {{1.0f, 0.0f}, {0.0f, 1.0f}, {1.0f, 0.0f}};  // x and z tie for any query
  auto ranked = classify({1.0f, 0.0f}, set);
  CHECK(ranked[0].class_index == 0);
  CHECK(ranked[1].class_index == 2);
  CHECK(ranked[2].class_index == 1);
  CHECK_THROWS_AS(classify({1.0f, 0.0f, 0.0f}, set), std::invalid_argument);
}

TEST_CASE("topk: self-retrieval puts the row first with score one") {
  Rng rng(8);
  auto index = random_index(50, 12, rng);
  auto top = index.topk(index.row(17), 3);
  CHECK(top[0].row == 17);
  CHECK(top[0].score == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("topk: k equal to index size yields a full ranking") {
  Rng rng(9);
  auto index = random_index(20, 8, rng);
  auto query = unit_vec(8, rng);
  auto top = index.topk(query.data(), 20);
  CHECK(top.size() == 20);
  std::vector<bool> seen(20, false);
  for (const auto& s : top) seen[s.row] = true;
  CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
  // exhaustive k: every ground truth is inside the ranking
  for (std::size_t i = 1; i < top.size(); ++i) CHECK(top[i - 1].score >= top[i].score);
}

TEST_CASE("topk: matches the full-sort oracle on 100 random rows") {
  Rng rng(10);
  auto index = random_index(100, 16, rng);
  for (int round = 0; round < 20; ++round) {
    auto query = unit_vec(16, rng);
    int k = 1 + static_cast<int>(rng.next_below(100));
    auto got = index.topk(query.data(), k);
    auto expected = oracle_ranking(index, query.data());
    for (int i = 0; i < k; ++i) CHECK(got[static_cast<std::size_t>(i)].row == expected[static_cast<std::size_t>(i)]);
  }
  CHECK_THROWS_AS(index.topk(unit_vec(16, rng).data(), 0), std::invalid_argument);
  CHECK_THROWS_AS(index.topk(unit_vec(16, rng).data(), 101), std::invalid_argument);
}

TEST_CASE("metrics: perfect rankings score one everywhere") {
  std::vector<std::vector<std::size_t>> rankings = {{0, 1, 2}, {1, 0, 2}, {2, 1, 0}};
  std::vector<std::size_t> truth = {0, 1, 2};
  auto m = compute_metrics(rankings, truth);
  CHECK(m.top1 == 1.0);
  CHECK(m.top3 == 1.0);
  CHECK(m.top5 == 1.0);
  CHECK(m.rr1 == 1.0);
  CHECK(m.rr5 == 1.0);
}

TEST_CASE("metrics: hand case with targets at ranks 1 and 4") {
  std::vector<std::vector<std::size_t>> rankings = {{7, 1, 2, 3, 4}, {9, 8, 6, 5, 4}};
  std::vector<std::size_t> truth = {7, 5};
  auto m = compute_metrics(rankings, truth);
  CHECK(m.rr1 == doctest::Approx(0.5));
  CHECK(m.rr5 == doctest::Approx(1.0));
  CHECK(m.top1 == doctest::Approx(0.5));
  CHECK(m.top3 == doctest::Approx(0.5));
  CHECK(m.top5 == doctest::Approx(1.0));
}

TEST_CASE("metrics: uniform-random rankings hit top-1 about 1/C") {
  Rng rng(11);
  const std::size_t C = 5, trials = 10000;
  std::vector<std::vector<std::size_t>> rankings;
  std::vector<std::size_t> truth;
  std::vector<std::size_t> base(C);
  for (std::size_t i = 0; i < C; ++i) base[i] = i;
  for (std::size_t t = 0; t < trials; ++t) {
    auto r = base;
    rng.shuffle(r);
    rankings.push_back(r);
    truth.push_back(rng.next_below(C));
  }
  auto m = compute_metrics(rankings, truth);
  double p = 1.0 / C;
  double sigma = std::sqrt(p * (1 - p) / trials);
  CHECK(std::abs(m.top1 - p) <= 3 * sigma);
  CHECK_THROWS_AS(compute_metrics(rankings, std::vector<std::size_t>(trials - 1)),
                  std::invalid_argument);
}

TEST_CASE("concept_mix: degenerate pair returns the queried row itself") {
  Rng rng(12);
  auto index = random_index(30, 8, rng);
  const float* fa = index.row(13);
  CHECK(index.concept_mix(fa, fa, {}) == 13);
}

TEST_CASE("concept_mix: 3-row toy index matches exhaustive evaluation") {
  EmbeddingIndex index(2);
  index.add("east", {1.0f, 0.0f});
  index.add("north", {0.0f, 1.0f});
  float inv = 1.0f / std::sqrt(2.0f);
  index.add("diag", {inv, inv});
  // the diagonal maximizes min-similarity to the two axes
  CHECK(index.concept_mix(index.row(0), index.row(1), {}) == 2);
  CHECK(oracle_mix(index, index.row(0), index.row(1), {}) == 2);
  // excluding the answer falls back to the best remaining row
  auto fallback = index.concept_mix(index.row(0), index.row(1), {2});
  CHECK(fallback == oracle_mix(index, index.row(0), index.row(1), {2}));
  CHECK_THROWS_AS(index.concept_mix(index.row(0), index.row(1), {0, 1, 2}),
                  std::invalid_argument);
}

TEST_CASE("concept_mix: argmax property against the oracle on random indices") {
  Rng rng(13);
  for (int round = 0; round < 30; ++round) {
    std::size_t n = 3 + rng.next_below(40);
    auto index = random_index(n, 8, rng);
    auto a = unit_vec(8, rng);
    auto b = unit_vec(8, rng);
    std::vector<std::size_t> exclude;
    if (rng.next_below(2)) exclude = {rng.next_below(n), rng.next_below(n)};
    auto got = index.concept_mix(a.data(), b.data(), exclude);
    CHECK(got == oracle_mix(index, a.data(), b.data(), exclude));

    // returned min-similarity dominates every non-excluded row
    auto min_sim = [&](std::size_t r) {
      float sa = 0, sb = 0;
      for (int j = 0; j < 8; ++j) {
        sa += a[static_cast<std::size_t>(j)] * index.row(r)[j];
        sb += b[static_cast<std::size_t>(j)] * index.row(r)[j];
      }
      return std::min(sa, sb);
    };
    for (std::size_t r = 0; r < n; ++r) {
      if (std::find(exclude.begin(), exclude.end(), r) != exclude.end()) continue;
      CHECK(min_sim(got) >= min_sim(r));
    }
  }
}

TEST_CASE("embedding store: DDEM round trip is bit exact") {
  Rng rng(14);
  auto index = random_index(25, 10, rng);
  auto dir = fs::temp_directory_path() / "mvs_index_test";
  fs::create_directories(dir);
  std::string emb = (dir / "store.ddem").string();
  std::string ids = (dir / "store.ids").string();
  index.save(emb, ids);

  auto loaded = EmbeddingIndex::load(emb, ids);
  CHECK(loaded.size() == index.size());
  CHECK(loaded.dim() == index.dim());
  for (std::size_t i = 0; i < index.size(); ++i) {
    CHECK(loaded.id_of(i) == index.id_of(i));
    for (int j = 0; j < index.dim(); ++j) CHECK(loaded.row(i)[j] == index.row(i)[j]);
  }

  // save-load-save reproduces identical bytes
  std::string emb2 = (dir / "store2.ddem").string();
  std::string ids2 = (dir / "store2.ids").string();
  loaded.save(emb2, ids2);
  auto slurp = [](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  };
  CHECK(slurp(emb) == slurp(emb2));
  CHECK(slurp(ids) == slurp(ids2));
  CHECK(slurp(emb).substr(0, 4) == "DDEM");
  fs::remove_all(dir);
}

TEST_CASE("embedding store: rejects non-unit rows, duplicates, and id mismatches") {
  EmbeddingIndex index(3);
  CHECK_THROWS_AS(index.add("bad", {1.0f, 1.0f, 1.0f}), std::invalid_argument);
  index.add("ok", {1.0f, 0.0f, 0.0f});
  CHECK_THROWS_AS(index.add("ok", {0.0f, 1.0f, 0.0f}), std::invalid_argument);
  CHECK(index.find("ok") == 0);
  CHECK(index.find("missing") == -1);
}
