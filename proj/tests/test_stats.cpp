#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "priorlens/stats.hpp"

using namespace priorlens;

namespace {

// Independent oracle: O(n^2) counting ranks, textbook Pearson, and a
// permutation p-value enumerated over index orders (n! of them, ties and
// all). Deliberately a different algorithm from the library's.
std::vector<double> counting_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double below = 0.0, equal = 0.0;
    for (size_t j = 0; j < x.size(); ++j) {
      if (x[j] < x[i]) below += 1.0;
      if (x[j] == x[i] && j != i) equal += 1.0;
    }
    r[i] = 1.0 + below + 0.5 * equal;
  }
  return r;
}

double oracle_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double num = 0.0;
  for (size_t i = 0; i < a.size(); ++i) num += (a[i] - ma) * (b[i] - mb);
  double va = 0.0, vb = 0.0;
  for (const double v : a) va += (v - ma) * (v - ma);
  for (const double v : b) vb += (v - mb) * (v - mb);
  return num / (std::sqrt(va) * std::sqrt(vb));
}

struct OracleResult {
  double rho;
  double p;
};

OracleResult oracle_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = counting_ranks(x);
  const auto ry = counting_ranks(y);
  const double rho = oracle_pearson(rx, ry);

  std::vector<size_t> idx(y.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  long hits = 0, total = 0;
  std::vector<double> perm(y.size());
  do {
    for (size_t i = 0; i < idx.size(); ++i) perm[i] = ry[idx[i]];
    ++total;
    if (std::abs(oracle_pearson(rx, perm)) >= std::abs(rho) - 1e-12) ++hits;
  } while (std::next_permutation(idx.begin(), idx.end()));
  return {rho, static_cast<double>(hits) / static_cast<double>(total)};
}

}  // namespace

TEST_CASE("average ranks share tied positions") {
  const std::vector<double> x{10.0, 20.0, 20.0, 30.0};
  CHECK(average_ranks(x) == std::vector<double>{1.0, 2.5, 2.5, 4.0});
  const std::vector<double> all_tied{5.0, 5.0, 5.0};
  CHECK(average_ranks(all_tied) == std::vector<double>{2.0, 2.0, 2.0});
}

TEST_CASE("monotone relationships hit the rho bounds") {
  const std::vector<double> x{1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0};
  std::vector<double> y;
  for (const double v : x) y.push_back(std::exp(v));  // increasing, nonlinear
  const Correlation up = spearman(x, y);
  CHECK(up.rho == 1.0);
  CHECK(up.p == 0.0);  // |rho| = 1 at n = 10 uses the degenerate-t branch

  for (auto& v : y) v = -v;
  const Correlation down = spearman(x, y);
  CHECK(down.rho == -1.0);
  CHECK(down.p == 0.0);
}

TEST_CASE("small-n results match the exhaustive permutation oracle") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g;
  int cases = 0;
  for (int n = 3; n <= 6; ++n) {
    for (int rep = 0; rep < 150; ++rep) {
      std::vector<double> x(static_cast<size_t>(n)), y(static_cast<size_t>(n));
      for (auto& v : x) v = g(rng);
      for (auto& v : y) v = g(rng);
      // A third of the cases get injected ties on each side.
      if (rep % 3 == 0 && n >= 4) {
        x[1] = x[0];
        y[3] = y[2];
      }
      if (std::adjacent_find(counting_ranks(x).begin(), counting_ranks(x).end(),
                             std::not_equal_to<>()) == counting_ranks(x).end())
        continue;  // skip accidental constant rows

      const OracleResult want = oracle_spearman(x, y);
      const Correlation got = spearman(x, y);
      REQUIRE(got.exact);
      CHECK(got.rho == doctest::Approx(want.rho).epsilon(1e-13));
      CHECK(got.p == want.p);  // same hit count over the same rational total
      ++cases;
    }
  }
  CHECK(cases >= 500);
}

TEST_CASE("large-n p-values follow the t approximation") {
  // Frozen third-party reference values for the t-branch.
  const std::vector<double> x{-0.989121, -0.367787, 1.287925, 0.193974, 0.920231, 0.577104,
                              -0.636464, 0.541952,  -0.316595, -0.322389, 0.097167, -1.52593};
  const std::vector<double> y{0.697606, -0.854983, 1.644232, 0.233308, 1.992149,  -0.371417,
                              -0.630027, 0.608745, -2.365769, 0.666727, 1.590214, 0.363842};
  const Correlation c = spearman(x, y);
  CHECK_FALSE(c.exact);
  CHECK(c.rho == doctest::Approx(0.39860139860139865).epsilon(1e-12));
  CHECK(c.p == doctest::Approx(0.19933549461780897).epsilon(1e-10));

  const std::vector<double> y2{1.017728, 0.250436,  -0.645769, 0.16703,   -0.618399, -0.460149,
                               0.400641, -0.802631, 0.621145,  -0.393702, -0.188778, 1.270058};
  const Correlation c2 = spearman(x, y2);
  CHECK(c2.rho == doctest::Approx(-0.8741258741258742).epsilon(1e-12));
  CHECK(c2.p == doctest::Approx(0.00020071307332423193).epsilon(1e-10));
}

TEST_CASE("null inputs trip the 5% significance machinery at the right rate") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  std::vector<double> x(26);
  for (auto& v : x) v = g(rng);
  int sig = 0;
  const int trials = 2000;
  for (int rep = 0; rep < trials; ++rep) {
    std::vector<double> y(x.size());
    for (auto& v : y) v = g(rng);
    const Correlation c = spearman(x, y);
    if (c.p < 0.05) ++sig;
  }
  const double rate = static_cast<double>(sig) / trials;
  CHECK(rate <= 0.12);
  CHECK(rate >= 0.005);  // the test must not be vacuously conservative
}

TEST_CASE("invalid inputs are rejected") {
  const std::vector<double> ab{1.0, 2.0};
  const std::vector<double> abc{1.0, 2.0, 3.0};
  const std::vector<double> flat{4.0, 4.0, 4.0};
  CHECK_THROWS_AS(spearman(ab, ab), UsageError);
  CHECK_THROWS_AS(spearman(abc, ab), UsageError);
  CHECK_THROWS_AS(spearman(abc, flat), NumericError);
  CHECK_THROWS_AS(spearman(flat, abc), NumericError);
  const std::vector<double> nan{1.0, std::nan(""), 3.0};
  CHECK_THROWS_AS(spearman(abc, nan), UsageError);
}
