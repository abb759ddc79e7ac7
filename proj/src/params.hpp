#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"

namespace mvs {

template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  bool trainable = true;
};

// Named parameter set; iteration follows insertion order so checkpoints
// and optimizer traversal are stable.
template <typename T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Tensor<T> init, bool trainable = true) {
    if (index_.count(name)) throw std::invalid_argument("parameter already registered: " + name);
    auto v = leaf<T>(std::move(init), trainable);
    index_[name] = items_.size();
    items_.push_back({name, v, trainable});
    return v;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return items_[it->second];
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return items_[it->second];
  }

  Var<T> var(const std::string& name) const { return at(name).var; }

  std::vector<Parameter<T>>& items() { return items_; }
  const std::vector<Parameter<T>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  void set_trainable(const std::string& name, bool trainable) {
    auto& p = at(name);
    p.trainable = trainable;
    p.var->requires_grad = trainable;
  }

  void set_all_trainable(bool trainable) {
    for (auto& p : items_) {
      p.trainable = trainable;
      p.var->requires_grad = trainable;
    }
  }

  // Applies pred(name) to every parameter's trainable flag.
  void set_trainable_where(const std::function<bool(const std::string&)>& pred) {
    for (auto& p : items_) {
      p.trainable = pred(p.name);
      p.var->requires_grad = p.trainable;
    }
  }

  void zero_grad() {
    for (auto& p : items_) p.var->zero_grad();
  }

  std::size_t trainable_scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_)
      if (p.trainable) n += p.var->value.numel();
    return n;
  }

  // FNV-1a over the raw value bytes; used by the freezing-contract checks.
  std::uint64_t checksum(const std::string& prefix = "") const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& p : items_) {
      if (p.name.rfind(prefix, 0) != 0) continue;
      for (char c : p.name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
      }
      const auto& v = p.var->value;
      const unsigned char* bytes = reinterpret_cast<const unsigned char*>(v.data());
      for (std::size_t i = 0; i < v.numel() * sizeof(T); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ull;
      }
    }
    return h;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : items_) out.add(p.name, p.var->value.template cast<U>(), p.trainable);
    return out;
  }

 private:
  std::vector<Parameter<T>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// --- common initializers ---

template <typename T>
Tensor<T> normal_init(std::vector<std::size_t> shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * stddev);
  return t;
}

// stddev = 1/sqrt(fan_in); keeps activations in range when training from scratch
template <typename T>
Tensor<T> fan_in_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return normal_init<T>({fan_in, fan_out}, stddev, rng);
}

// Residual-branch projections get an extra 1/sqrt(2*depth) so the
// residual stream starts close to the token embeddings; contrastive
// logits then open near-uniform and the step-0 loss sits at ln N.
template <typename T>
Tensor<T> residual_fan_in_init(std::size_t fan_in, std::size_t fan_out, int depth, Rng& rng) {
  double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in)) /
                  std::sqrt(2.0 * static_cast<double>(depth));
  return normal_init<T>({fan_in, fan_out}, stddev, rng);
}

}  // namespace mvs
