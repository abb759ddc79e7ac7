#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace mvs {

// Id-keyed store of unit-norm embeddings with exact cosine queries.
// Binary layout: magic "DDEM", version u32, count u64, dim u32, then
// count*dim little-endian float32 values; ids live in a line-delimited
// sidecar with one id per row. Round trips are bit exact.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;
  explicit EmbeddingIndex(int dim) : dim_(dim) {}

  int dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }

  // Rows must be unit norm within 1e-5.
  void add(const std::string& id, const std::vector<float>& vec);

  const std::vector<std::string>& ids() const { return ids_; }
  const std::string& id_of(std::size_t row) const { return ids_.at(row); }
  const float* row(std::size_t i) const { return matrix_.data() + i * dim_; }
  std::int64_t find(const std::string& id) const;  // -1 if absent

  struct ScoredRow {
    std::size_t row;
    float score;
  };

  // Exact top-k by cosine similarity, descending, ties kept in insertion
  // order.
  std::vector<ScoredRow> topk(const float* query, int k) const;

  // Highest min(<row, a>, <row, b>) outside the excluded rows.
  std::size_t concept_mix(const float* a, const float* b,
                          const std::vector<std::size_t>& exclude_rows) const;

  void save(const std::string& embeddings_path, const std::string& ids_path) const;
  static EmbeddingIndex load(const std::string& embeddings_path, const std::string& ids_path);

  static float dot(const float* a, const float* b, int dim);

 private:
  int dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> matrix_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

constexpr std::uint32_t kIndexVersion = 1;

}  // namespace mvs
