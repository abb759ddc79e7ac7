#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "params.hpp"

namespace mvs {

// Checkpoint container: magic "DDCP", version u32, entry count u32, then
// per entry (name_len u32, name bytes, dtype u8, rank u32, dims u64...,
// values little-endian). Round trips must be bit exact.

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF64 = 1;

namespace ckpt_detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void get_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  put_bytes(os, b, 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  get_bytes(is, b, 4);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(os, b, 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  get_bytes(is, b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

template <typename T>
void put_scalar_le(std::ostream& os, T v) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  if constexpr (sizeof(T) == 4) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
  } else {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
  }
}

template <typename T>
T get_scalar_le(std::istream& is) {
  T v;
  if constexpr (sizeof(T) == 4) {
    std::uint32_t bits = get_u32(is);
    std::memcpy(&v, &bits, 4);
  } else {
    std::uint64_t bits = get_u64(is);
    std::memcpy(&v, &bits, 8);
  }
  return v;
}

template <typename T>
constexpr std::uint8_t dtype_tag() {
  return sizeof(T) == 4 ? kDtypeF32 : kDtypeF64;
}

}  // namespace ckpt_detail

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
void save_checkpoint(std::ostream& os, const std::vector<NamedTensor<T>>& entries) {
  using namespace ckpt_detail;
  os.write("DDCP", 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(os, static_cast<std::uint32_t>(e.name.size()));
    put_bytes(os, e.name.data(), e.name.size());
    std::uint8_t tag = dtype_tag<T>();
    put_bytes(os, &tag, 1);
    put_u32(os, static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) put_u64(os, d);
    for (std::size_t i = 0; i < e.tensor.numel(); ++i) put_scalar_le(os, e.tensor[i]);
  }
}

template <typename T>
std::vector<NamedTensor<T>> load_checkpoint(std::istream& is) {
  using namespace ckpt_detail;
  char magic[4];
  get_bytes(is, magic, 4);
  if (std::string(magic, 4) != "DDCP") throw std::runtime_error("checkpoint: bad magic");
  std::uint32_t version = get_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  std::uint32_t count = get_u32(is);
  std::vector<NamedTensor<T>> entries;
  entries.reserve(count);
  for (std::uint32_t e = 0; e < count; ++e) {
    std::uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    get_bytes(is, name.data(), name_len);
    std::uint8_t tag;
    get_bytes(is, &tag, 1);
    if (tag != dtype_tag<T>())
      throw std::runtime_error("checkpoint: dtype mismatch for entry " + name);
    std::uint32_t rank = get_u32(is);
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<std::size_t>(get_u64(is));
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = get_scalar_le<T>(is);
    entries.push_back({std::move(name), std::move(t)});
  }
  return entries;
}

template <typename T>
void save_checkpoint_file(const std::string& path, const ParamStore<T>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  std::vector<NamedTensor<T>> entries;
  entries.reserve(params.size());
  for (const auto& p : params.items()) entries.push_back({p.name, p.var->value});
  save_checkpoint(os, entries);
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

// Loads values into an already-constructed store; shapes must agree.
template <typename T>
void load_checkpoint_file(const std::string& path, ParamStore<T>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  auto entries = load_checkpoint<T>(is);
  if (entries.size() != params.size())
    throw std::runtime_error("checkpoint: entry count mismatch in " + path);
  for (auto& e : entries) {
    auto& p = params.at(e.name);
    if (!p.var->value.same_shape(e.tensor))
      throw std::runtime_error("checkpoint: shape mismatch for " + e.name);
    p.var->value = std::move(e.tensor);
  }
}

}  // namespace mvs
