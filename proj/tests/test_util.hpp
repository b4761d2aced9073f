#pragma once

#include <cmath>
#include <random>

#include "csr/tensor.hpp"

namespace csr::testing {

inline PlaneTensor random_tensor(std::uint64_t seed, int h, int w, int c, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  PlaneTensor t(h, w, c);
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline PlaneTensor row(std::initializer_list<double> values) {
  return PlaneTensor(1, static_cast<int>(values.size()), 1, std::vector<double>(values));
}

inline double max_abs(const PlaneTensor& a, const PlaneTensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace csr::testing
