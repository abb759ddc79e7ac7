#pragma once

#include <functional>
#include <string>
#include <vector>

#include "index.hpp"

namespace mvs {

// Encodes one sentence to a unit-norm embedding (backed by the text
// encoder; tests substitute fixtures).
using SentenceEncoder = std::function<std::vector<float>(const std::string&)>;

// Prompt-ensemble class embeddings: per class, the L2-normalized mean of
// its filled-template sentence embeddings.
struct ClassPromptSet {
  std::vector<std::string> classes;
  std::vector<std::string> templates;
  std::vector<std::vector<float>> embeddings;  // [C][dim], unit rows
};

ClassPromptSet build_class_embeddings(const std::vector<std::string>& classes,
                                      const std::vector<std::string>& templates,
                                      const SentenceEncoder& encoder);

struct RankedClass {
  int class_index;
  float score;
};

// Classes sorted by descending cosine similarity; ties broken by
// ascending class index.
std::vector<RankedClass> classify(const std::vector<float>& embedding,
                                  const ClassPromptSet& prompts);

struct RankMetrics {
  double top1 = 0, top3 = 0, top5 = 0;
  double rr1 = 0, rr5 = 0;
};

// rankings[q] lists candidate indices best-first; truth[q] is the target
// index. Top-k/RR@k = fraction of queries whose target appears in the
// first k.
RankMetrics compute_metrics(const std::vector<std::vector<std::size_t>>& rankings,
                            const std::vector<std::size_t>& truth);

}  // namespace mvs
