// Serial reference kernels against the OpenMP versions at desk-scale shapes.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "driftscope/kernels.hpp"

namespace kernels = driftscope::kernels;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

// Rows = batch 16 x seq 64; shapes of the QKV, MLP-up and MLP-down projections.
constexpr std::size_t kRows = 1024;

template <bool Parallel>
void BM_LinearForward(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0)), m = static_cast<std::size_t>(state.range(1));
  const auto x = random_vec<float>(kRows * k, 1), w = random_vec<float>(k * m, 2), b = random_vec<float>(m, 3);
  std::vector<float> y(kRows * m);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::linear_forward(x.data(), w.data(), b.data(), y.data(), kRows, k, m);
    else
      kernels::reference::linear_forward(x.data(), w.data(), b.data(), y.data(), kRows, k, m);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * kRows * k * m));
}

template <bool Parallel>
void BM_LinearBackwardInput(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0)), m = static_cast<std::size_t>(state.range(1));
  const auto dy = random_vec<float>(kRows * m, 1), w = random_vec<float>(k * m, 2);
  std::vector<float> dx(kRows * k);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::linear_backward_input(dy.data(), w.data(), dx.data(), kRows, k, m, false);
    else
      kernels::reference::linear_backward_input(dy.data(), w.data(), dx.data(), kRows, k, m, false);
    benchmark::DoNotOptimize(dx.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * kRows * k * m));
}

template <bool Parallel>
void BM_LinearBackwardWeight(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0)), m = static_cast<std::size_t>(state.range(1));
  const auto x = random_vec<float>(kRows * k, 1), dy = random_vec<float>(kRows * m, 2);
  std::vector<float> dw(k * m), db(m);
  for (auto _ : state) {
    std::fill(dw.begin(), dw.end(), 0.0f);
    std::fill(db.begin(), db.end(), 0.0f);
    if constexpr (Parallel)
      kernels::linear_backward_weight(x.data(), dy.data(), dw.data(), db.data(), kRows, k, m);
    else
      kernels::reference::linear_backward_weight(x.data(), dy.data(), dw.data(), db.data(), kRows, k, m);
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * kRows * k * m));
}

// Drift-matrix Gram product: 51 checkpoints by the desk trunk dimension (65536).
template <bool Parallel>
void BM_Gram(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = static_cast<std::size_t>(state.range(1));
  const auto x = random_vec<double>(rows * cols, 4);
  std::vector<double> g(rows * rows);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::gram(x, rows, cols, g);
    else
      kernels::reference::gram(x, rows, cols, g);
    benchmark::DoNotOptimize(g.data());
  }
}

template <bool Parallel>
void BM_Matvec(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = static_cast<std::size_t>(state.range(1));
  const auto x = random_vec<double>(rows * cols, 5), v = random_vec<double>(cols, 6);
  std::vector<double> y(rows);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::matvec(x, rows, cols, v, y);
    else
      kernels::reference::matvec(x, rows, cols, v, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void linear_shapes(benchmark::internal::Benchmark* b) {
  b->Args({64, 192})->Args({64, 128})->Args({128, 64})->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(BM_LinearForward<false>)->Name("linear_forward/serial")->Apply(linear_shapes);
BENCHMARK(BM_LinearForward<true>)->Name("linear_forward/omp")->Apply(linear_shapes);
BENCHMARK(BM_LinearBackwardInput<false>)->Name("linear_backward_input/serial")->Apply(linear_shapes);
BENCHMARK(BM_LinearBackwardInput<true>)->Name("linear_backward_input/omp")->Apply(linear_shapes);
BENCHMARK(BM_LinearBackwardWeight<false>)->Name("linear_backward_weight/serial")->Apply(linear_shapes);
BENCHMARK(BM_LinearBackwardWeight<true>)->Name("linear_backward_weight/omp")->Apply(linear_shapes);
BENCHMARK(BM_Gram<false>)->Name("gram/serial")->Args({51, 65536})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gram<true>)->Name("gram/omp")->Args({51, 65536})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Matvec<false>)->Name("matvec/serial")->Args({32, 65536})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Matvec<true>)->Name("matvec/omp")->Args({32, 65536})->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
