#include "index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mvs {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("embedding store: truncated file");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("embedding store: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

}  // namespace

float EmbeddingIndex::dot(const float* a, const float* b, int dim) {
  float acc = 0.0f;
  for (int i = 0; i < dim; ++i) acc += a[i] * b[i];
  return acc;
}

void EmbeddingIndex::add(const std::string& id, const std::vector<float>& vec) {
  if (dim_ == 0) dim_ = static_cast<int>(vec.size());
  if (static_cast<int>(vec.size()) != dim_)
    throw std::invalid_argument("embedding index: dimension mismatch for " + id);
  if (lookup_.count(id)) throw std::invalid_argument("embedding index: duplicate id " + id);
  float norm2 = dot(vec.data(), vec.data(), dim_);
  if (std::abs(std::sqrt(norm2) - 1.0f) > 1e-5f)
    throw std::invalid_argument("embedding index: row for " + id + " is not unit norm");
  lookup_[id] = ids_.size();
  ids_.push_back(id);
  matrix_.insert(matrix_.end(), vec.begin(), vec.end());
}

std::int64_t EmbeddingIndex::find(const std::string& id) const {
  auto it = lookup_.find(id);
  return it == lookup_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

std::vector<EmbeddingIndex::ScoredRow> EmbeddingIndex::topk(const float* query, int k) const {
  if (k < 1 || static_cast<std::size_t>(k) > size())
    throw std::invalid_argument("topk: k out of range");
  std::vector<ScoredRow> all(size());
  for (std::size_t i = 0; i < size(); ++i) all[i] = {i, dot(query, row(i), dim_)};
  // stable sort keeps insertion order on ties
  std::stable_sort(all.begin(), all.end(),
                   [](const ScoredRow& a, const ScoredRow& b) { return a.score > b.score; });
  all.resize(static_cast<std::size_t>(k));
  return all;
}

std::size_t EmbeddingIndex::concept_mix(const float* a, const float* b,
                                        const std::vector<std::size_t>& exclude_rows) const {
  std::vector<bool> excluded(size(), false);
  for (std::size_t r : exclude_rows)
    if (r < size()) excluded[r] = true;
  bool found = false;
  std::size_t best = 0;
  float best_score = 0.0f;
  for (std::size_t i = 0; i < size(); ++i) {
    if (excluded[i]) continue;
    float score = std::min(dot(row(i), a, dim_), dot(row(i), b, dim_));
    if (!found || score > best_score) {
      found = true;
      best = i;
      best_score = score;
    }
  }
  if (!found) throw std::invalid_argument("concept_mix: index empty after exclusion");
  return best;
}

void EmbeddingIndex::save(const std::string& embeddings_path, const std::string& ids_path) const {
  std::ofstream os(embeddings_path, std::ios::binary);
  if (!os) throw std::runtime_error("embedding store: cannot write " + embeddings_path);
  os.write("DDEM", 4);
  put_u32(os, kIndexVersion);
  put_u64(os, static_cast<std::uint64_t>(size()));
  put_u32(os, static_cast<std::uint32_t>(dim_));
  for (float v : matrix_) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
  }
  if (!os) throw std::runtime_error("embedding store: write failed " + embeddings_path);

  std::ofstream ids(ids_path, std::ios::binary);
  if (!ids) throw std::runtime_error("embedding store: cannot write " + ids_path);
  for (const auto& id : ids_) ids << id << "\n";
  if (!ids) throw std::runtime_error("embedding store: write failed " + ids_path);
}

EmbeddingIndex EmbeddingIndex::load(const std::string& embeddings_path,
                                    const std::string& ids_path) {
  std::ifstream is(embeddings_path, std::ios::binary);
  if (!is) throw std::runtime_error("embedding store: cannot open " + embeddings_path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "DDEM")
    throw std::runtime_error("embedding store: bad magic in " + embeddings_path);
  std::uint32_t version = get_u32(is);
  if (version != kIndexVersion) throw std::runtime_error("embedding store: unsupported version");
  std::uint64_t count = get_u64(is);
  std::uint32_t dim = get_u32(is);

  std::ifstream idstream(ids_path, std::ios::binary);
  if (!idstream) throw std::runtime_error("embedding store: cannot open " + ids_path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(idstream, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  if (ids.size() != count)
    throw std::runtime_error("embedding store: id count does not match embedding count");

  EmbeddingIndex index(static_cast<int>(dim));
  std::vector<float> rowbuf(dim);
  for (std::uint64_t r = 0; r < count; ++r) {
    for (std::uint32_t j = 0; j < dim; ++j) {
      std::uint32_t bits = get_u32(is);
      std::memcpy(&rowbuf[j], &bits, 4);
    }
    index.add(ids[r], rowbuf);
  }
  return index;
}

}  // namespace mvs
