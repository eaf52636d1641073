// OpenMP kernels against their serial references on training-sized shapes.
//
//   ./bench_kernels --benchmark_filter=matmul
//   OMP_NUM_THREADS=4 ./bench_kernels

#include <benchmark/benchmark.h>

#include "gmil/bag_graph.hpp"
#include "gmil/kernels.hpp"
#include "gmil/linalg.hpp"

namespace {

using gmil::Matrix;

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  gmil::Rng rng(seed);
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(-1.0, 1.0);
  return m;
}

// A bag of K instances with clustered features so the similarity graph has
// a realistic number of edges.
gmil::BagGraph random_graph(std::size_t k, std::uint64_t seed) {
  gmil::Rng rng(seed);
  gmil::Bag bag{"b", 0, {}};
  for (std::size_t i = 0; i < k; ++i) {
    gmil::Vector f(16);
    const double base = i % 4 < 2 ? 1.0 : -1.0;
    for (double& v : f) v = base + rng.uniform(-1.0, 1.0);
    bag.instances.push_back({f, std::nullopt});
  }
  return gmil::build_similarity_graph(bag);
}

// Args: K (instances), F (input width), H (output width).
void shapes(benchmark::internal::Benchmark* b) {
  b->Args({8, 166, 256})->Args({64, 166, 256})->Args({64, 256, 128})->Args({512, 230, 256});
}

void report_flops(benchmark::State& state, double flops) {
  state.counters["GFLOP/s"] =
      benchmark::Counter(flops * 1e-9, benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Parallel>
void BM_matmul(benchmark::State& state) {
  const auto k = state.range(0), f = state.range(1), h = state.range(2);
  const Matrix a = random_matrix(k, f, 1), w = random_matrix(f, h, 2);
  for (auto _ : state) {
    Matrix c = Parallel ? gmil::kernels::matmul(a, w) : gmil::kernels::serial::matmul(a, w);
    benchmark::DoNotOptimize(c.data().data());
  }
  report_flops(state, 2.0 * k * f * h);
}

template <bool Parallel>
void BM_matmul_tn(benchmark::State& state) {
  const auto k = state.range(0), f = state.range(1), h = state.range(2);
  const Matrix x = random_matrix(k, f, 3), g = random_matrix(k, h, 4);
  for (auto _ : state) {
    Matrix c = Parallel ? gmil::kernels::matmul_tn(x, g) : gmil::kernels::serial::matmul_tn(x, g);
    benchmark::DoNotOptimize(c.data().data());
  }
  report_flops(state, 2.0 * k * f * h);
}

template <bool Parallel>
void BM_aggregate(benchmark::State& state) {
  const auto k = state.range(0), h = state.range(2);
  const gmil::BagGraph graph = random_graph(k, 5);
  const Matrix x = random_matrix(k, h, 6);
  for (auto _ : state) {
    Matrix c = Parallel ? gmil::kernels::aggregate(graph.lists, x)
                        : gmil::kernels::serial::aggregate(graph.lists, x);
    benchmark::DoNotOptimize(c.data().data());
  }
  report_flops(state, static_cast<double>(graph.lists.indices.size()) * h + k * h);
}

template <bool Parallel>
void BM_aggregate_transposed(benchmark::State& state) {
  const auto k = state.range(0), h = state.range(2);
  const gmil::BagGraph graph = random_graph(k, 7);
  const Matrix x = random_matrix(k, h, 8);
  for (auto _ : state) {
    Matrix c = Parallel ? gmil::kernels::aggregate_transposed(graph.lists, x)
                        : gmil::kernels::serial::aggregate_transposed(graph.lists, x);
    benchmark::DoNotOptimize(c.data().data());
  }
  report_flops(state, 2.0 * static_cast<double>(graph.lists.indices.size()) * h);
}

BENCHMARK(BM_matmul<false>)->Name("matmul/serial")->Apply(shapes)->UseRealTime();
BENCHMARK(BM_matmul<true>)->Name("matmul/openmp")->Apply(shapes)->UseRealTime();
BENCHMARK(BM_matmul_tn<false>)->Name("matmul_tn/serial")->Apply(shapes)->UseRealTime();
BENCHMARK(BM_matmul_tn<true>)->Name("matmul_tn/openmp")->Apply(shapes)->UseRealTime();
BENCHMARK(BM_aggregate<false>)->Name("aggregate/serial")->Apply(shapes)->UseRealTime();
BENCHMARK(BM_aggregate<true>)->Name("aggregate/openmp")->Apply(shapes)->UseRealTime();
BENCHMARK(BM_aggregate_transposed<false>)->Name("aggregate_t/serial")->Apply(shapes)->UseRealTime();
BENCHMARK(BM_aggregate_transposed<true>)->Name("aggregate_t/openmp")->Apply(shapes)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
