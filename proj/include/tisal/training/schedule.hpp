#pragma once

#include <cmath>
#include <numbers>

#include "tisal/error.hpp"

namespace tisal::training {

/// Cosine annealing from `start` at step 0 to `end` at `total`.
inline double lr_at(std::size_t step, std::size_t total, double start = 1e-4, double end = 1e-5) {
  if (step > total) throw Error(ErrorKind::InvalidArgument, "lr_at", "step beyond total");
  if (total == 0) return start;
  const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
  return start * w + end * (1.0 - w);
}

}  // namespace tisal::training
