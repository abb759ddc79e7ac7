#pragma once

#include <cstddef>

namespace mvs {

// Neumaier-compensated accumulator. Reductions that feed statistics
// (means, variances, norms, loss averages) go through this so results
// do not drift with accumulation order changes inside one build.
template <typename T>
class CompensatedSum {
 public:
  void add(T x) {
    T t = sum_ + x;
    if ((sum_ >= 0 ? sum_ : -sum_) >= (x >= 0 ? x : -x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  T value() const { return sum_ + comp_; }

 private:
  T sum_ = 0;
  T comp_ = 0;
};

template <typename T>
T compensated_sum(const T* data, std::size_t n) {
  CompensatedSum<T> acc;
  for (std::size_t i = 0; i < n; ++i) acc.add(data[i]);
  return acc.value();
}

template <typename T>
T compensated_dot(const T* a, const T* b, std::size_t n) {
  CompensatedSum<T> acc;
  for (std::size_t i = 0; i < n; ++i) acc.add(a[i] * b[i]);
  return acc.value();
}

}  // namespace mvs
