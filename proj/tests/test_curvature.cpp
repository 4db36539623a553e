#include <doctest.h>

#include <cmath>
#include <random>

#include "driftscope/common.hpp"
#include "driftscope/curvature.hpp"
#include "driftscope/linalg.hpp"
#include "test_util.hpp"

using namespace driftscope;

namespace {

GradientMatrix from_rows(const std::vector<std::vector<double>>& rows) {
  GradientMatrix g;
  g.dim = rows.front().size();
  for (const auto& r : rows) g.append(r);
  return g;
}

// v^T (G^T G / M) v through an explicit D x D Gram matrix.
double dense_quotient(const GradientMatrix& g, const std::vector<double>& v) {
  const std::size_t d = g.dim, m = g.rows();
  std::vector<double> f(d * d, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) f[a * d + b] += g.row(i)[a] * g.row(i)[b] / static_cast<double>(m);
  double q = 0.0;
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) q += v[a] * f[a * d + b] * v[b];
  return q;
}

}  // namespace

TEST_CASE("rayleigh: constructed gradients") {
  const GradientMatrix g = from_rows({{1, 0, 0}, {1, 0, 0}});
  CHECK(rayleigh(g, std::vector<double>{1, 0, 0}) == 1.0);
  CHECK(rayleigh(g, std::vector<double>{0, 1, 0}) == 0.0);
  CHECK_THROWS_AS(rayleigh(g, std::vector<double>{1, 1, 0}), Error);
  CHECK_THROWS_AS(rayleigh(g, std::vector<double>{1, 0}), Error);
  const GradientMatrix one = from_rows({{3, -4}});
  const auto v = testutil::unit({1, 2});
  CHECK(rayleigh(one, v) == doctest::Approx(std::pow(dot(one.row(0), v), 2)).epsilon(1e-15));
}

TEST_CASE("rayleigh: matches the dense Gram form on random G") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    GradientMatrix g;
    g.dim = 32;
    for (int i = 0; i < 8; ++i) g.append(testutil::gaussian(rng, 32));
    const auto v = testutil::unit(testutil::gaussian(rng, 32));
    const double dense = dense_quotient(g, v);
    CHECK(std::abs(rayleigh(g, v) - dense) <= 1e-12 * dense);
  }
}

TEST_CASE("rayleigh: closed-form quadratic model") {
  // L_i(w) = 0.5 (x_i . w - y_i)^2 at w = 0 has gradient -y_i x_i, so the empirical
  // Fisher is (1/M) sum y_i^2 x_i x_i^T. With x_i = e_{i mod 2} in R^2 and y_i = i + 1:
  // F = diag(mean of y^2 over even i, mean over odd i) * (count / M).
  const int m = 6;
  const GradientMatrix g = collect_gradients(m, 2, [](std::size_t i, std::span<double> row) {
    row[0] = row[1] = 0.0;
    row[i % 2] = -static_cast<double>(i + 1);
  });
  const double f00 = (1.0 + 9.0 + 25.0) / m, f11 = (4.0 + 16.0 + 36.0) / m;
  CHECK(rayleigh(g, std::vector<double>{1, 0}) == doctest::Approx(f00).epsilon(1e-15));
  CHECK(rayleigh(g, std::vector<double>{0, 1}) == doctest::Approx(f11).epsilon(1e-15));
  const double h = 1.0 / std::sqrt(2.0);
  CHECK(rayleigh(g, std::vector<double>{h, h}) == doctest::Approx(0.5 * (f00 + f11)).epsilon(1e-14));
}

TEST_CASE("random orthogonal directions") {
  const auto dirs = random_orthogonal_directions(std::vector<double>{1, 0}, 1, 3);
  REQUIRE(dirs.size() == 1);
  CHECK(std::abs(dirs[0][0]) <= 1e-15);
  CHECK(std::abs(dirs[0][1]) == doctest::Approx(1.0).epsilon(1e-15));

  std::mt19937_64 rng(4);
  const auto v = testutil::unit(testutil::gaussian(rng, 50));
  const auto many = random_orthogonal_directions(v, 20, 99);
  for (std::size_t i = 0; i < many.size(); ++i) {
    CHECK(std::abs(dot(many[i], v)) <= 1e-12);
    CHECK(norm(many[i]) == doctest::Approx(1.0).epsilon(1e-14));
    for (std::size_t j = 0; j < i; ++j) CHECK(std::abs(dot(many[i], many[j])) <= 1e-12);
  }
  CHECK(random_orthogonal_directions(v, 20, 99) == many);
  CHECK_THROWS_AS(random_orthogonal_directions(v, 0, 1), Error);
  CHECK_THROWS_AS(random_orthogonal_directions(std::vector<double>{1, 0}, 2, 1), Error);
}

TEST_CASE("anisotropy: isotropic, aligned and degenerate gradients") {
  std::mt19937_64 rng(31);
  GradientMatrix iso;
  iso.dim = 64;
  for (int i = 0; i < 512; ++i) iso.append(testutil::gaussian(rng, 64));
  const auto v = testutil::unit(testutil::gaussian(rng, 64));
  const RayleighResult r = anisotropy(iso, v, 10, 7);
  CHECK(r.alpha == doctest::Approx(1.0).epsilon(0.3));
  CHECK(r.random_quotients.size() == 10);

  // rows mostly along v with tiny isotropic noise
  GradientMatrix aligned;
  aligned.dim = 64;
  for (int i = 0; i < 32; ++i) {
    auto row = testutil::gaussian(rng, 64, 1e-3);
    for (std::size_t j = 0; j < 64; ++j) row[j] += (i + 1.0) * v[j];
    aligned.append(row);
  }
  CHECK(anisotropy(aligned, v, 10, 7).alpha > 1e4);

  GradientMatrix exact;
  exact.dim = 2;
  exact.append(std::vector<double>{2, 0});
  const RayleighResult d = anisotropy(exact, std::vector<double>{1, 0}, 1, 7);
  CHECK(d.degenerate);
  CHECK(std::isinf(d.alpha));
}

TEST_CASE("orthonormal basis quotients add up to the Frobenius norm") {
  std::mt19937_64 rng(41);
  GradientMatrix g;
  g.dim = 24;
  for (int i = 0; i < 16; ++i) g.append(testutil::gaussian(rng, 24));
  const auto v = testutil::unit(testutil::gaussian(rng, 24));
  auto basis = random_orthogonal_directions(v, 23, 5);
  basis.push_back(v);
  double sum = 0.0, fro = 0.0;
  for (const auto& b : basis) sum += rayleigh(g, b);
  for (double x : g.data) fro += x * x;
  CHECK(std::abs(sum - fro / 16.0) <= 1e-10 * fro / 16.0);
}

TEST_CASE("gradient matrix: duplicated rows and input checks") {
  const GradientMatrix g = collect_gradients(2, 3, [](std::size_t, std::span<double> row) {
    row[0] = 1.5;
    row[1] = -2.0;
    row[2] = 0.25;
  });
  CHECK(std::equal(g.row(0).begin(), g.row(0).end(), g.row(1).begin()));
  GradientMatrix bad;
  bad.dim = 2;
  CHECK_THROWS_AS(bad.append(std::vector<double>{1, 2, 3}), Error);
  CHECK_THROWS_AS(bad.append(std::vector<double>{1, NAN}), Error);
}
