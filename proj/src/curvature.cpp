#include "driftscope/curvature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "driftscope/common.hpp"
#include "driftscope/kernels.hpp"
#include "driftscope/linalg.hpp"

namespace driftscope {

void GradientMatrix::append(std::span<const double> g) {
  if (dim == 0) dim = g.size();
  if (g.size() != dim || dim == 0) throw Error("gradient matrix: row dimension mismatch");
  for (double x : g)
    if (!std::isfinite(x)) throw Error("gradient matrix: non-finite gradient value");
  data.insert(data.end(), g.begin(), g.end());
}

double rayleigh(const GradientMatrix& g, std::span<const double> v) {
  if (g.rows() == 0) throw Error("rayleigh: empty gradient matrix");
  if (v.size() != g.dim) throw Error("rayleigh: direction dimension mismatch");
  if (std::abs(norm(v) - 1.0) > 1e-8) throw Error("rayleigh: direction is not unit norm");
  std::vector<double> gv(g.rows());
  kernels::matvec(g.data, g.rows(), g.dim, v, gv);
  double s = 0.0;
  for (double x : gv) s += x * x;
  return s / static_cast<double>(g.rows());
}

namespace {

double gaussian(std::mt19937_64& rng) {
  // Box-Muller on raw draws; the standard distributions are implementation-defined.
  const double u1 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

std::vector<std::vector<double>> random_orthogonal_directions(std::span<const double> v, int k, std::uint64_t seed) {
  const std::size_t d = v.size();
  if (k < 1) throw Error("anisotropy: K must be at least 1");
  if (static_cast<std::size_t>(k) >= d) throw Error("anisotropy: K must be smaller than the dimension");
  if (std::abs(norm(v) - 1.0) > 1e-8) throw Error("anisotropy: direction is not unit norm");
  auto rng = make_stream(seed, "anisotropy-directions");
  std::vector<std::vector<double>> out;
  int failures = 0;
  while (out.size() < static_cast<std::size_t>(k)) {
    std::vector<double> x(d);
    for (double& e : x) e = gaussian(rng);
    const double before = norm(x);
    for (int pass = 0; pass < 2; ++pass) {
      axpy(-dot(x, v), v, x);
      for (const auto& q : out) axpy(-dot(x, q), q, x);
    }
    const double after = norm(x);
    if (!(after > 1e-8 * before)) {
      if (++failures >= 100) throw Error("anisotropy: Gram-Schmidt broke down 100 times");
      continue;
    }
    scale(x, 1.0 / after);
    out.push_back(std::move(x));
  }
  return out;
}

RayleighResult anisotropy(const GradientMatrix& g, std::span<const double> v, int k, std::uint64_t seed,
                          std::string label) {
  RayleighResult r;
  r.label = std::move(label);
  r.quotient = rayleigh(g, v);
  for (const auto& u : random_orthogonal_directions(v, k, seed)) r.random_quotients.push_back(rayleigh(g, u));
  double s = 0.0;
  for (double q : r.random_quotients) s += q;
  r.mean_random = s / static_cast<double>(k);
  if (r.mean_random < 1e-15) {
    r.degenerate = true;
    r.alpha = std::numeric_limits<double>::infinity();
  } else {
    r.alpha = r.quotient / r.mean_random;
  }
  return r;
}

GradientMatrix collect_gradients(std::size_t batches, std::size_t dim,
                                 const std::function<void(std::size_t, std::span<double>)>& produce) {
  if (batches < 1) throw Error("collect_gradients: need at least one batch");
  GradientMatrix g;
  std::vector<double> row(dim);
  for (std::size_t i = 0; i < batches; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    produce(i, row);
    g.append(row);
  }
  return g;
}

template <typename T>
std::vector<double> gather_trunk(const ParamLayout& layout, std::span<const T> values, const TrunkSelector& sel) {
  if (values.size() != layout.total()) throw Error("gather_trunk: size does not match the parameter layout");
  std::vector<const ParamSlot*> slots;
  for (const auto& s : layout.slots())
    if (sel.matches(s.name)) slots.push_back(&s);
  if (slots.empty()) throw Error("gather_trunk: selector matches no parameters");
  std::sort(slots.begin(), slots.end(), [](const ParamSlot* a, const ParamSlot* b) { return a->name < b->name; });
  std::vector<double> out;
  for (const ParamSlot* s : slots)
    for (std::size_t i = 0; i < s->size; ++i) out.push_back(static_cast<double>(values[s->offset + i]));
  return out;
}

template <typename T>
GradientMatrix collect_gradients(Transformer<T>& model, std::span<const Batch> batches, double lambda,
                                 const TrunkSelector& sel) {
  if (batches.empty()) throw Error("collect_gradients: need at least one batch");
  std::vector<T> grad(model.params().size());
  GradientMatrix g;
  for (const Batch& b : batches) {
    model.loss(b, lambda, grad);
    g.append(gather_trunk<T>(model.layout(), grad, sel));
  }
  return g;
}

template std::vector<double> gather_trunk<float>(const ParamLayout&, std::span<const float>, const TrunkSelector&);
template std::vector<double> gather_trunk<double>(const ParamLayout&, std::span<const double>, const TrunkSelector&);
template GradientMatrix collect_gradients<float>(Transformer<float>&, std::span<const Batch>, double,
                                                 const TrunkSelector&);
template GradientMatrix collect_gradients<double>(Transformer<double>&, std::span<const Batch>, double,
                                                  const TrunkSelector&);

}  // namespace driftscope
