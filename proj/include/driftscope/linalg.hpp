#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace driftscope {

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
// a <- a * s
void scale(std::span<double> a, double s);
// y <- y + alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

struct SymmetricEigen {
  std::vector<double> values;   // descending
  std::vector<double> vectors;  // n x n row-major; column j is the eigenvector for values[j]
  std::size_t n = 0;

  double vector_entry(std::size_t row, std::size_t col) const { return vectors[row * n + col]; }
};

// Cyclic Jacobi eigen-decomposition of a dense symmetric matrix (row-major, n x n).
// Intended for the small T x T Gram matrices of trajectory analysis.
SymmetricEigen jacobi_eigen(std::span<const double> a, std::size_t n);

}  // namespace driftscope
