#include "driftscope/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "driftscope/common.hpp"
#include "driftscope/kernels.hpp"

namespace driftscope {

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("dot: dimension mismatch");
  return kernels::dot(a.data(), b.data(), a.size());
}

double norm(std::span<const double> a) {
  // scaled accumulation keeps very large drift norms (beta2 = 0 runs) finite
  double amax = 0.0;
  for (double x : a) amax = std::max(amax, std::abs(x));
  if (amax == 0.0 || !std::isfinite(amax)) return amax;
  double s = 0.0;
  for (double x : a) {
    const double y = x / amax;
    s += y * y;
  }
  return amax * std::sqrt(s);
}

void scale(std::span<double> a, double s) {
  for (double& x : a) x *= s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw Error("axpy: dimension mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

SymmetricEigen jacobi_eigen(std::span<const double> input, std::size_t n) {
  if (input.size() != n * n) throw Error("jacobi_eigen: expected an n x n matrix");
  std::vector<double> a(input.begin(), input.end());
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += a[i * n + j] * a[i * n + j];
    return s;
  };
  double total = 0.0;
  for (double x : a) total += x * x;

  for (int sweep = 0; sweep < 100; ++sweep) {
    const double off = off_norm();
    if (off == 0.0 || off <= 1e-34 * total) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        // Rutishauser's formulation of the rotation
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double tau = s / (1.0 + c);

        a[p * n + p] = app - t * apq;
        a[q * n + q] = aqq + t * apq;
        a[p * n + q] = a[q * n + p] = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = a[r * n + p];
          const double arq = a[r * n + q];
          const double nrp = arp - s * (arq + tau * arp);
          const double nrq = arq + s * (arp - tau * arq);
          a[r * n + p] = a[p * n + r] = nrp;
          a[r * n + q] = a[q * n + r] = nrq;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double vrp = v[r * n + p];
          const double vrq = v[r * n + q];
          v[r * n + p] = vrp - s * (vrq + tau * vrp);
          v[r * n + q] = vrq + s * (vrp - tau * vrq);
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a[i * n + i] > a[j * n + j]; });

  SymmetricEigen out;
  out.n = n;
  out.values.resize(n);
  out.vectors.resize(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = a[order[j] * n + order[j]];
    for (std::size_t r = 0; r < n; ++r) out.vectors[r * n + j] = v[r * n + order[j]];
  }
  return out;
}

}  // namespace driftscope
