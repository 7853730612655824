#pragma once

// Rank statistics. Spearman here is the workhorse of the layer-correlation
// analysis; its p-value is exact (full permutation enumeration) for n <= 8
// and a two-sided Student-t approximation above that.

#include <cstdint>
#include <span>
#include <vector>

#include "priorlens/common.hpp"

namespace priorlens {

struct Correlation {
  double rho = 0.0;
  double p = 1.0;
  int64_t n = 0;
  bool exact = false;  // permutation p-value rather than t-approximation
};

// Average ranks (1-based); ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> x);

// Spearman rank correlation with a two-sided p-value. Inputs must be the
// same length, n >= 3, finite, and non-constant (constant input would make
// rho undefined; that is an error, never a silent zero).
Correlation spearman(std::span<const double> x, std::span<const double> y);

}  // namespace priorlens
