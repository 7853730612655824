#include "priorlens/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

namespace priorlens {

namespace {

// Pearson correlation of two equal-length vectors; callers guarantee
// non-constant inputs.
double pearson(std::span<const double> a, std::span<const double> b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  return sab / std::sqrt(saa * sbb);
}

// Permutations with repeated rank values (ties) enumerate each distinct
// arrangement once; every arrangement stands for the same number of raw
// permutations, so the fraction is still the exact permutation p-value.
double exact_p(std::span<const double> rx, std::span<const double> ry, double rho) {
  std::vector<double> perm(ry.begin(), ry.end());
  std::sort(perm.begin(), perm.end());
  const double cut = std::abs(rho) - 1e-12;
  int64_t hits = 0, total = 0;
  do {
    ++total;
    if (std::abs(pearson(rx, perm)) >= cut) ++hits;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<size_t> order(x.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;  // mean of ranks i+1 .. j+1
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

Correlation spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw UsageError(cat("spearman: length mismatch ", x.size(), " vs ", y.size()));
  if (x.size() < 3) throw UsageError(cat("spearman needs n >= 3, got ", x.size()));
  for (const double v : x)
    if (!std::isfinite(v)) throw UsageError("spearman: non-finite value in x");
  for (const double v : y)
    if (!std::isfinite(v)) throw UsageError("spearman: non-finite value in y");
  const auto constant = [](std::span<const double> v) {
    for (const double e : v)
      if (e != v[0]) return false;
    return true;
  };
  if (constant(x) || constant(y))
    throw NumericError("spearman undefined for constant input");

  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  Correlation c;
  c.n = static_cast<int64_t>(x.size());
  c.rho = std::clamp(pearson(rx, ry), -1.0, 1.0);

  if (c.n <= 8) {
    c.exact = true;
    c.p = exact_p(rx, ry, c.rho);
    return c;
  }
  const double df = static_cast<double>(c.n - 2);
  if (1.0 - c.rho * c.rho <= 0.0) {
    c.p = 0.0;  // |rho| = 1: t diverges
    return c;
  }
  const double t = c.rho * std::sqrt(df / (1.0 - c.rho * c.rho));
  const boost::math::students_t_distribution<double> dist(df);
  c.p = 2.0 * boost::math::cdf(dist, -std::abs(t));
  return c;
}

}  // namespace priorlens
