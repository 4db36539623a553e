#include "driftscope/kernels.hpp"

#include <omp.h>

#include <algorithm>

#include "driftscope/common.hpp"

namespace driftscope::kernels {

namespace {
int g_thread_limit = 0;
}

void set_thread_limit(int threads) {
  g_thread_limit = std::max(threads, 0);
  if (g_thread_limit > 0) omp_set_num_threads(g_thread_limit);
}

int thread_limit() { return g_thread_limit > 0 ? g_thread_limit : omp_get_max_threads(); }

void gram(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<double> g) {
  if (x.size() != rows * cols || g.size() != rows * rows) throw Error("gram: size mismatch");
  const long long pairs = static_cast<long long>(rows * (rows + 1) / 2);
#pragma omp parallel for schedule(dynamic) if (rows * rows * cols > 65536)
  for (long long p = 0; p < pairs; ++p) {
    // decode upper-triangle pair index
    std::size_t i = 0;
    long long rem = p;
    while (rem >= static_cast<long long>(rows - i)) {
      rem -= static_cast<long long>(rows - i);
      ++i;
    }
    const std::size_t j = i + static_cast<std::size_t>(rem);
    const double s = dot(x.data() + i * cols, x.data() + j * cols, cols);
    g[i * rows + j] = s;
    g[j * rows + i] = s;
  }
}

void matvec(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<const double> v,
            std::span<double> y) {
  if (x.size() != rows * cols || v.size() != cols || y.size() != rows) throw Error("matvec: size mismatch");
#pragma omp parallel for schedule(static) if (rows * cols > 65536)
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot(x.data() + r * cols, v.data(), cols);
}

void matvec_transposed(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<const double> u,
                       std::span<double> y) {
  if (x.size() != rows * cols || u.size() != rows || y.size() != cols)
    throw Error("matvec_transposed: size mismatch");
  constexpr std::size_t kChunk = 4096;
  const std::size_t chunks = (cols + kChunk - 1) / kChunk;
#pragma omp parallel for schedule(static) if (rows * cols > 65536)
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(cols, lo + kChunk);
    for (std::size_t j = lo; j < hi; ++j) y[j] = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double ur = u[r];
      const double* xr = x.data() + r * cols;
#pragma omp simd
      for (std::size_t j = lo; j < hi; ++j) y[j] += ur * xr[j];
    }
  }
}

namespace reference {

void gram(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<double> g) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < rows; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += x[i * cols + c] * x[j * cols + c];
      g[i * rows + j] = s;
    }
}

void matvec(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<const double> v,
            std::span<double> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += x[r * cols + c] * v[c];
    y[r] = s;
  }
}

void matvec_transposed(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<const double> u,
                       std::span<double> y) {
  for (std::size_t c = 0; c < cols; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) s += u[r] * x[r * cols + c];
    y[c] = s;
  }
}

}  // namespace reference
}  // namespace driftscope::kernels
