#include <doctest.h>

#include <cmath>
#include <random>

#include "driftscope/common.hpp"
#include "driftscope/linalg.hpp"
#include "driftscope/pca.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace driftscope;

namespace {

DriftMatrix matrix_from(const std::vector<std::vector<double>>& rows) {
  DriftMatrix x;
  x.dim = rows.front().size();
  for (std::size_t t = 0; t < rows.size(); ++t) {
    x.steps.push_back(static_cast<std::int64_t>(t + 1));
    x.data.insert(x.data.end(), rows[t].begin(), rows[t].end());
  }
  return x;
}

Trajectory trajectory_from(const std::vector<std::vector<double>>& points, std::int64_t spacing = 10) {
  Trajectory t;
  t.dim = points.front().size();
  t.label = "trunk";
  for (std::size_t i = 0; i < points.size(); ++i) {
    t.steps.push_back(static_cast<std::int64_t>(i) * spacing);
    t.data.insert(t.data.end(), points[i].begin(), points[i].end());
  }
  return t;
}

std::vector<double> e(std::size_t d, std::size_t i) {
  std::vector<double> v(d, 0.0);
  v[i] = 1.0;
  return v;
}

}  // namespace

TEST_CASE("uncentered_svd: rank-one rows [u, 2u, 3u]") {
  const std::vector<double> u{0.0, 3.0, 4.0};  // norm 5
  const DriftMatrix x = matrix_from({u, {0, 6, 8}, {0, 9, 12}});
  const TrajectorySpectrum s = uncentered_svd(x, 3);
  CHECK(s.singular_values.at(0) == doctest::Approx(std::sqrt(14.0) * 5.0).epsilon(1e-12));
  for (std::size_t k = 1; k < s.rank(); ++k) CHECK(s.singular_values[k] < 1e-9);
  CHECK(s.rho(1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.k95 == 1);
  CHECK(s.k99 == 1);
  CHECK(std::abs(dot(s.right_vectors[0], std::vector<double>{0, 0.6, 0.8})) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("uncentered_svd: 2x2 identity splits variance evenly") {
  const TrajectorySpectrum s = uncentered_svd(matrix_from({{1, 0}, {0, 1}}), 2);
  REQUIRE(s.rank() == 2);
  CHECK(s.rho(1) == doctest::Approx(0.5));
  CHECK(s.rho(2) == doctest::Approx(0.5));
  CHECK(s.k95 == 2);
  CHECK(s.pc1_unstable);
}

TEST_CASE("variance_fraction arithmetic") {
  CHECK(variance_fraction(std::vector<double>{4, 3}, 1) == doctest::Approx(0.64));
  CHECK(variance_fraction(std::vector<double>{1}, 1) == 1.0);
  CHECK(variance_fraction(std::vector<double>{1, 1, 1, 1}, 2) == doctest::Approx(0.25));
  CHECK_THROWS_AS(variance_fraction(std::vector<double>{1, 2}, 3), Error);
  CHECK(components_for(std::vector<double>{0.5, 0.3, 0.2}, 0.8) == 2);
}

TEST_CASE("uncentered_svd: random 8x40 matches a dense SVD") {
  std::mt19937_64 rng(3);
  DriftMatrix x;
  x.dim = 40;
  for (int t = 0; t < 8; ++t) x.steps.push_back(t + 1);
  x.data = testutil::gaussian(rng, 8 * 40);
  const TrajectorySpectrum s = uncentered_svd(x, 8);
  const oracle::Svd o = oracle::dense_svd(x.data, 8, 40);
  REQUIRE(s.rank() == 8);
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(std::abs(s.singular_values[k] - o.sigma[k]) <= 1e-10 * o.sigma[k]);
    CHECK(std::abs(dot(s.right_vectors[k], o.right[k])) >= 1.0 - 1e-8);
  }
  CHECK(s.k95 == oracle::components_reaching(o.sigma, 0.95));
  CHECK(s.k99 == oracle::components_reaching(o.sigma, 0.99));
}

TEST_CASE("uncentered_svd: rejects degenerate input") {
  CHECK_THROWS_AS(uncentered_svd(matrix_from({{1, 2}}), 1), Error);
  CHECK_THROWS_AS(uncentered_svd(matrix_from({{0, 0}, {0, 0}}), 1), Error);
  CHECK_THROWS_AS(uncentered_svd(matrix_from({{1, 0}, {0, 1}}), 3), Error);
}

TEST_CASE("rolling backbones: linear trajectory is perfectly aligned") {
  std::vector<std::vector<double>> pts;
  const auto u = testutil::unit({1, 2, -1, 0.5});
  for (int t = 0; t < 12; ++t) {
    std::vector<double> p(4);
    for (int j = 0; j < 4; ++j) p[j] = u[j] * t * t;  // speed varies, direction fixed
    pts.push_back(p);
  }
  const Trajectory traj = trajectory_from(pts);
  const RollingBackboneSeries r = rolling_backbones(traj, 4, 1, false, std::optional<std::span<const double>>(u));
  REQUIRE(r.adjacent_alignment.size() + 1 == r.centers.size());
  for (double rho : r.adjacent_alignment) CHECK(rho == doctest::Approx(1.0).epsilon(1e-10));
  for (double c : r.global_alignment) CHECK(c == doctest::Approx(1.0).epsilon(1e-10));
  for (const auto& d : r.directions) CHECK(std::abs(dot(d, u)) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("rolling backbones: orthogonal switch makes adjacent alignment dip") {
  std::vector<std::vector<double>> pts;
  for (int t = 0; t <= 20; ++t) pts.push_back(t <= 10 ? std::vector<double>{double(t), 0, 0}
                                                       : std::vector<double>{10, double(t - 10), 0});
  const RollingBackboneSeries r = rolling_backbones(trajectory_from(pts), 4, 1, false);
  const double lo = *std::min_element(r.adjacent_alignment.begin(), r.adjacent_alignment.end());
  CHECK(r.adjacent_alignment.front() == doctest::Approx(1.0));
  CHECK(r.adjacent_alignment.back() == doctest::Approx(1.0));
  CHECK(lo < 0.8);
  CHECK_THROWS_AS(rolling_backbones(trajectory_from(pts), 2, 1, false), Error);
  CHECK_THROWS_AS(rolling_backbones(trajectory_from(pts), 40, 1, false), Error);
}

TEST_CASE("phase backbones: same interval and orthogonal phases") {
  std::vector<std::vector<double>> pts;
  for (int t = 0; t <= 20; ++t) pts.push_back(t <= 10 ? std::vector<double>{double(t), 0, 0}
                                                       : std::vector<double>{10, double(t - 10), 0});
  const Trajectory traj = trajectory_from(pts);
  const PhaseBackbones same = phase_backbones(traj, {0, 100}, {0, 100}, false);
  CHECK(same.overlap == doctest::Approx(1.0).epsilon(1e-12));

  const RollingBackboneSeries roll = rolling_backbones(traj, 4, 1, false);
  const PhaseBackbones p = phase_backbones(traj, {0, 100}, {100, 200}, false, &roll);
  CHECK(p.overlap <= 1e-6);
  CHECK(std::abs(dot(p.early_direction, e(3, 0))) == doctest::Approx(1.0));
  CHECK(std::abs(dot(p.late_direction, e(3, 1))) == doctest::Approx(1.0));
  // A_E is about 1 on early windows and A_L about 1 on late windows
  REQUIRE(!p.centers.empty());
  CHECK(p.early_alignment.front() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p.late_alignment.back() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p.late_alignment.front() <= 1e-6);
  CHECK(p.early_alignment.back() <= 1e-6);
  CHECK_THROWS_AS(phase_backbones(traj, {50, 50}, {100, 200}, false), Error);
}
