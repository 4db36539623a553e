#include <doctest.h>

#include <random>

#include "driftscope/kernels.hpp"
#include "test_util.hpp"

using namespace driftscope;

namespace {

template <typename T>
std::vector<T> random_vec(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

template <typename T>
void check_close(const std::vector<T>& a, const std::vector<T>& b, double tol) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  CHECK(worst <= tol);
}

struct ThreadGuard {
  int saved = kernels::thread_limit();
  ~ThreadGuard() { kernels::set_thread_limit(saved); }
};

}  // namespace

TEST_CASE_TEMPLATE("linear kernels agree with the serial reference", T, float, double) {
  std::mt19937_64 rng(1);
  const double tol = std::is_same_v<T, float> ? 1e-4 : 1e-12;
  for (auto [n, k, m] : {std::tuple<std::size_t, std::size_t, std::size_t>{1, 1, 1}, {3, 5, 7}, {37, 64, 192},
                         {130, 33, 65}, {64, 128, 64}}) {
    const auto x = random_vec<T>(rng, n * k), w = random_vec<T>(rng, k * m), bias = random_vec<T>(rng, m);
    const auto dy = random_vec<T>(rng, n * m);
    std::vector<T> y(n * m), yr(n * m);
    kernels::linear_forward(x.data(), w.data(), bias.data(), y.data(), n, k, m);
    kernels::reference::linear_forward(x.data(), w.data(), bias.data(), yr.data(), n, k, m);
    check_close(y, yr, tol);

    for (bool acc : {false, true}) {
      auto dx = random_vec<T>(rng, n * k), dxr = dx;
      kernels::linear_backward_input(dy.data(), w.data(), dx.data(), n, k, m, acc);
      kernels::reference::linear_backward_input(dy.data(), w.data(), dxr.data(), n, k, m, acc);
      check_close(dx, dxr, tol);
    }
    auto dw = random_vec<T>(rng, k * m), dwr = dw;
    auto db = random_vec<T>(rng, m), dbr = db;
    kernels::linear_backward_weight(x.data(), dy.data(), dw.data(), db.data(), n, k, m);
    kernels::reference::linear_backward_weight(x.data(), dy.data(), dwr.data(), dbr.data(), n, k, m);
    check_close(dw, dwr, tol);
    check_close(db, dbr, tol);
  }
}

TEST_CASE("gram and matvec agree with the serial reference") {
  std::mt19937_64 rng(2);
  for (auto [rows, cols] : {std::pair<std::size_t, std::size_t>{1, 1}, {7, 300}, {51, 5000}}) {
    const auto x = random_vec<double>(rng, rows * cols);
    std::vector<double> g(rows * rows), gr(rows * rows);
    kernels::gram(x, rows, cols, g);
    kernels::reference::gram(x, rows, cols, gr);
    check_close(g, gr, 1e-10);

    const auto v = random_vec<double>(rng, cols);
    std::vector<double> y(rows), yr(rows);
    kernels::matvec(x, rows, cols, v, y);
    kernels::reference::matvec(x, rows, cols, v, yr);
    check_close(y, yr, 1e-10);

    const auto u = random_vec<double>(rng, rows);
    std::vector<double> z(cols), zr(cols);
    kernels::matvec_transposed(x, rows, cols, u, z);
    kernels::reference::matvec_transposed(x, rows, cols, u, zr);
    check_close(z, zr, 1e-10);
  }
}

TEST_CASE("kernel results do not depend on the thread count") {
  ThreadGuard guard;
  std::mt19937_64 rng(3);
  const std::size_t n = 200, k = 96, m = 160;
  const auto x = random_vec<float>(rng, n * k), w = random_vec<float>(rng, k * m), b = random_vec<float>(rng, m);
  const auto big = random_vec<double>(rng, 40 * 4000);
  std::vector<float> y1(n * m), y4(n * m);
  std::vector<double> g1(40 * 40), g4(40 * 40);
  kernels::set_thread_limit(1);
  kernels::linear_forward(x.data(), w.data(), b.data(), y1.data(), n, k, m);
  kernels::gram(big, 40, 4000, g1);
  kernels::set_thread_limit(4);
  kernels::linear_forward(x.data(), w.data(), b.data(), y4.data(), n, k, m);
  kernels::gram(big, 40, 4000, g4);
  CHECK(y1 == y4);
  CHECK(g1 == g4);
}
