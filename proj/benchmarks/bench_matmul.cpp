#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "priorlens/tensor.hpp"

using namespace priorlens;

namespace {

std::vector<float> rand_mat(int64_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(static_cast<size_t>(n));
  for (auto& x : v) x = d(rng);
  return v;
}

void BM_gemm(benchmark::State& state) {
  const int64_t n = state.range(0);
  auto a = rand_mat(n * n, 1);
  auto b = rand_mat(n * n, 2);
  std::vector<float> c(static_cast<size_t>(n * n));
  for (auto _ : state) {
    kern::gemm(false, a.data(), b.data(), c.data(), n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_gemm)->Arg(64)->Arg(128)->Arg(256)->Arg(512);

void BM_gemm_nt(benchmark::State& state) {
  const int64_t n = state.range(0);
  auto a = rand_mat(n * n, 3);
  auto b = rand_mat(n * n, 4);
  std::vector<float> c(static_cast<size_t>(n * n));
  for (auto _ : state) {
    kern::gemm_nt(false, a.data(), b.data(), c.data(), n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_gemm_nt)->Arg(64)->Arg(128)->Arg(256);

void BM_gemm_tn(benchmark::State& state) {
  const int64_t n = state.range(0);
  auto a = rand_mat(n * n, 5);
  auto b = rand_mat(n * n, 6);
  std::vector<float> c(static_cast<size_t>(n * n));
  for (auto _ : state) {
    kern::gemm_tn(false, a.data(), b.data(), c.data(), n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_gemm_tn)->Arg(64)->Arg(128)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
