#pragma once

// Data-parallel inner loops. Every kernel parallelises over independent output
// elements and reduces serially inside each element, so results do not depend on
// the thread count. The serial versions in `reference` are plain loop nests kept
// for testing and benchmarking.

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace driftscope::kernels {

// Caps OpenMP parallelism; 0 leaves the runtime default.
void set_thread_limit(int threads);
int thread_limit();

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T s = 0;
#pragma omp simd reduction(+ : s)
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// C[n,m] += A[n,k] B[k,m]. Rows are processed four at a time against 32-column
// tiles held in local accumulators; every C entry still sums its k terms in index
// order, so the result matches the plain triple loop bit for bit.
template <typename T>
void gemm_accumulate(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  constexpr std::size_t RB = 4, JT = 32;
  const std::size_t row_blocks = (n + RB - 1) / RB;
#pragma omp parallel for schedule(static) if (n * k * m > 32768)
  for (std::size_t blk = 0; blk < row_blocks; ++blk) {
    const std::size_t r0 = blk * RB;
    const std::size_t rows = std::min(RB, n - r0);
    for (std::size_t j0 = 0; j0 < m; j0 += JT) {
      const std::size_t cols = std::min(JT, m - j0);
      if (rows == RB && cols == JT) {
        T acc[RB][JT];
        for (std::size_t rr = 0; rr < RB; ++rr)
          for (std::size_t j = 0; j < JT; ++j) acc[rr][j] = c[(r0 + rr) * m + j0 + j];
        for (std::size_t i = 0; i < k; ++i) {
          const T* bi = b + i * m + j0;
          for (std::size_t rr = 0; rr < RB; ++rr) {
            const T av = a[(r0 + rr) * k + i];
#pragma omp simd
            for (std::size_t j = 0; j < JT; ++j) acc[rr][j] += av * bi[j];
          }
        }
        for (std::size_t rr = 0; rr < RB; ++rr)
          for (std::size_t j = 0; j < JT; ++j) c[(r0 + rr) * m + j0 + j] = acc[rr][j];
      } else {
        for (std::size_t rr = 0; rr < rows; ++rr) {
          T* cr = c + (r0 + rr) * m + j0;
          const T* ar = a + (r0 + rr) * k;
          for (std::size_t i = 0; i < k; ++i) {
            const T av = ar[i];
            const T* bi = b + i * m + j0;
            for (std::size_t j = 0; j < cols; ++j) cr[j] += av * bi[j];
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<T> transpose(const T* x, std::size_t rows, std::size_t cols) {
  std::vector<T> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
  return t;
}

// Y[n,m] = X[n,k] W[k,m] (+ bias[m])
template <typename T>
void linear_forward(const T* x, const T* w, const T* bias, T* y, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < m; ++j) y[r * m + j] = bias ? bias[j] : T(0);
  gemm_accumulate(x, w, y, n, k, m);
}

// dX[n,k] (+)= dY[n,m] W[k,m]^T
template <typename T>
void linear_backward_input(const T* dy, const T* w, T* dx, std::size_t n, std::size_t k, std::size_t m,
                           bool accumulate) {
  const std::vector<T> wt = transpose(w, k, m);
  if (!accumulate) std::fill(dx, dx + n * k, T(0));
  gemm_accumulate(dy, wt.data(), dx, n, m, k);
}

// dW[k,m] += X[n,k]^T dY[n,m]; dBias[m] += sum_r dY[r,:]
template <typename T>
void linear_backward_weight(const T* x, const T* dy, T* dw, T* dbias, std::size_t n, std::size_t k,
                            std::size_t m) {
  const std::vector<T> xt = transpose(x, n, k);
  gemm_accumulate(xt.data(), dy, dw, k, n, m);
  if (dbias) {
    for (std::size_t r = 0; r < n; ++r) {
      const T* dyr = dy + r * m;
      for (std::size_t j = 0; j < m; ++j) dbias[j] += dyr[j];
    }
  }
}

// G[t,t] = X X^T for row-major X[t,d]. Only the upper triangle is computed, then mirrored.
void gram(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<double> g);

// y[rows] = X[rows,cols] v
void matvec(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<const double> v,
            std::span<double> y);

// y[cols] = X^T u, i.e. sum_r u[r] X[r,:]
void matvec_transposed(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<const double> u,
                       std::span<double> y);

namespace reference {

template <typename T>
void linear_forward(const T* x, const T* w, const T* bias, T* y, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < m; ++j) {
      T s = bias ? bias[j] : T(0);
      for (std::size_t i = 0; i < k; ++i) s += x[r * k + i] * w[i * m + j];
      y[r * m + j] = s;
    }
}

template <typename T>
void linear_backward_input(const T* dy, const T* w, T* dx, std::size_t n, std::size_t k, std::size_t m,
                           bool accumulate) {
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < k; ++i) {
      T s = 0;
      for (std::size_t j = 0; j < m; ++j) s += dy[r * m + j] * w[i * m + j];
      dx[r * k + i] = accumulate ? dx[r * k + i] + s : s;
    }
}

template <typename T>
void linear_backward_weight(const T* x, const T* dy, T* dw, T* dbias, std::size_t n, std::size_t k,
                            std::size_t m) {
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      T s = 0;
      for (std::size_t r = 0; r < n; ++r) s += x[r * k + i] * dy[r * m + j];
      dw[i * m + j] += s;
    }
  if (dbias)
    for (std::size_t j = 0; j < m; ++j) {
      T s = 0;
      for (std::size_t r = 0; r < n; ++r) s += dy[r * m + j];
      dbias[j] += s;
    }
}

void gram(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<double> g);
void matvec(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<const double> v,
            std::span<double> y);
void matvec_transposed(std::span<const double> x, std::size_t rows, std::size_t cols, std::span<const double> u,
                       std::span<double> y);

}  // namespace reference
}  // namespace driftscope::kernels
