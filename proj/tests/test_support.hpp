#pragma once

// Shared helpers for the test suites.

#include <cmath>
#include <vector>

#include "tage/rng.hpp"
#include "tage/tensor.hpp"

namespace tage::test {

inline ad::Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                                double hi = 1.0) {
  ad::Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const ad::Tensor& a, const ad::Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace tage::test
