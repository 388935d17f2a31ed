// Serial against OpenMP timings for the hot kernels, plus the plain loop
// baseline for the payoff product.

#include "kmatch/assignment.hpp"
#include "kmatch/kernels.hpp"
#include "kmatch/mesh.hpp"
#include "kmatch/synth.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace kmatch;

namespace {

MatrixXd random_matrix(Index r, Index c, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  MatrixXd a(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) a(i, j) = g(rng);
  return a;
}

Exec exec_of(const benchmark::State& state) { return state.range(1) ? Exec::parallel : Exec::serial; }

void BM_LowrankProduct(benchmark::State& state) {
  const Index n = state.range(0);
  const MatrixXd l = random_matrix(n, 100, 1), r = random_matrix(n, 100, 2);
  for (auto _ : state) benchmark::DoNotOptimize(lowrank_product(l, r, exec_of(state)));
  state.SetComplexityN(n);
}

void BM_LowrankReference(benchmark::State& state) {
  const Index n = state.range(0);
  const MatrixXd l = random_matrix(n, 100, 1), r = random_matrix(n, 100, 2);
  for (auto _ : state) benchmark::DoNotOptimize(reference::lowrank_product(l, r));
}

void BM_Lap(benchmark::State& state) {
  const Index n = state.range(0);
  const MatrixXd q = random_matrix(n, n, 3);
  LapOptions o;
  o.exec = exec_of(state);
  for (auto _ : state) benchmark::DoNotOptimize(solve_lap(q, 0.0, o));
}

void BM_AllPairsGeodesics(benchmark::State& state) {
  const TriMesh m = icosphere(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(all_pairs_geodesics(m.edge_graph(), exec_of(state)));
}

void BM_Fps(benchmark::State& state) {
  const TriMesh m = icosphere(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(euclidean_fps(m, 500, 0, exec_of(state)));
}

void BM_GatherColumns(benchmark::State& state) {
  const Index n = state.range(0);
  const MatrixXd k = random_matrix(n, n, 4);
  std::mt19937_64 rng(5);
  const auto perm = random_permutation(n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(gather_columns(k, perm, exec_of(state)));
}

}  // namespace

BENCHMARK(BM_LowrankProduct)->ArgsProduct({{500, 1000, 2000}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LowrankReference)->Args({500, 0})->Args({1000, 0})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Lap)->ArgsProduct({{200, 500}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AllPairsGeodesics)->ArgsProduct({{3, 4}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Fps)->ArgsProduct({{4, 5}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GatherColumns)->ArgsProduct({{1000, 2000}, {0, 1}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
