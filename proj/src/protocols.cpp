#include "protocols.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "captions.hpp"
#include "sum.hpp"

namespace mvs {

ClassPromptSet build_class_embeddings(const std::vector<std::string>& classes,
                                      const std::vector<std::string>& templates,
                                      const SentenceEncoder& encoder) {
  if (classes.empty()) throw std::invalid_argument("build_class_embeddings: empty class list");
  if (templates.empty()) throw std::invalid_argument("build_class_embeddings: empty template list");

  ClassPromptSet out;
  out.classes = classes;
  out.templates = templates;
  out.embeddings.reserve(classes.size());
  for (const auto& cls : classes) {
    std::vector<double> acc;
    for (const auto& tmpl : templates) {
      std::vector<float> e = encoder(fill_template(tmpl, cls));
      if (acc.empty()) acc.assign(e.size(), 0.0);
      if (e.size() != acc.size())
        throw std::runtime_error("build_class_embeddings: dimension mismatch");
      for (std::size_t i = 0; i < e.size(); ++i) acc[i] += e[i];
    }
    CompensatedSum<double> norm2;
    for (double v : acc) norm2.add(v * v);
    double inv = 1.0 / std::sqrt(norm2.value());
    std::vector<float> emb(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i) emb[i] = static_cast<float>(acc[i] * inv);
    out.embeddings.push_back(std::move(emb));
  }
  return out;
}

std::vector<RankedClass> classify(const std::vector<float>& embedding,
                                  const ClassPromptSet& prompts) {
  std::vector<RankedClass> ranked;
  ranked.reserve(prompts.embeddings.size());
  for (std::size_t c = 0; c < prompts.embeddings.size(); ++c) {
    const auto& ce = prompts.embeddings[c];
    if (ce.size() != embedding.size()) throw std::invalid_argument("classify: dimension mismatch");
    float score = EmbeddingIndex::dot(embedding.data(), ce.data(), static_cast<int>(ce.size()));
    ranked.push_back({static_cast<int>(c), score});
  }
  // stable sort keeps ascending class index on score ties
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedClass& a, const RankedClass& b) { return a.score > b.score; });
  return ranked;
}

RankMetrics compute_metrics(const std::vector<std::vector<std::size_t>>& rankings,
                            const std::vector<std::size_t>& truth) {
  if (rankings.size() != truth.size())
    throw std::invalid_argument("compute_metrics: every query needs ground truth");
  if (rankings.empty()) throw std::invalid_argument("compute_metrics: no queries");

  auto hit_within = [](const std::vector<std::size_t>& ranking, std::size_t target,
                       std::size_t k) {
    std::size_t limit = std::min(k, ranking.size());
    for (std::size_t i = 0; i < limit; ++i)
      if (ranking[i] == target) return true;
    return false;
  };

  RankMetrics m;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    if (hit_within(rankings[q], truth[q], 1)) m.top1 += 1;
    if (hit_within(rankings[q], truth[q], 3)) m.top3 += 1;
    if (hit_within(rankings[q], truth[q], 5)) m.top5 += 1;
  }
  double n = static_cast<double>(rankings.size());
  m.top1 /= n;
  m.top3 /= n;
  m.top5 /= n;
  // RR@k for the single-target protocol coincides with top-k hit rate
  m.rr1 = m.top1;
  m.rr5 = m.top5;
  return m;
}

}  // namespace mvs
