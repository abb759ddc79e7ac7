#pragma once

#include <cmath>

#include "tensor.hpp"

namespace mvs {

// Cosine annealing from base to floor over total_steps.
inline double cosine_lr(std::size_t step, std::size_t total_steps, double base,
                        double floor = 0.0) {
  require(total_steps > 0, "cosine_lr: total_steps must be positive");
  require(step <= total_steps, "cosine_lr: step out of range");
  double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return floor + 0.5 * (base - floor) * (1.0 + std::cos(M_PI * t));
}

}  // namespace mvs
