#include "driftscope/pca.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "driftscope/common.hpp"
#include "driftscope/kernels.hpp"
#include "driftscope/linalg.hpp"

namespace driftscope {

namespace {

// Gram eigenvalues below this fraction of the largest are indistinguishable from
// rounding in the T x T product and carry no usable direction.
double gram_resolution(std::size_t t) { return 64.0 * static_cast<double>(t) * std::numeric_limits<double>::epsilon(); }

void fix_sign(std::vector<double>& v, const DriftMatrix& x) {
  for (std::size_t t = x.rows(); t-- > 0;) {
    const double p = dot(x.row(t), v);
    if (p > 0.0) return;
    if (p < 0.0) {
      scale(v, -1.0);
      return;
    }
  }
  // every row orthogonal to v: make the largest-magnitude entry positive
  auto it = std::max_element(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
  if (it != v.end() && *it < 0.0) scale(v, -1.0);
}

}  // namespace

double variance_fraction(std::span<const double> sigma, std::size_t k) {
  if (k < 1 || k > sigma.size()) throw Error("variance_fraction: k out of range");
  double total = 0.0;
  for (double s : sigma) total += s * s;
  if (total == 0.0) throw Error("variance_fraction: all singular values are zero");
  return sigma[k - 1] * sigma[k - 1] / total;
}

int components_for(std::span<const double> fractions, double threshold) {
  double cum = 0.0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    cum += fractions[k];
    if (cum >= threshold) return static_cast<int>(k + 1);
  }
  return static_cast<int>(fractions.size());
}

TrajectorySpectrum uncentered_svd(const DriftMatrix& x, std::size_t top_k) {
  const std::size_t t = x.rows();
  if (t < 2) throw Error("uncentered_svd: need at least 2 drift rows");
  if (top_k > t) throw Error("uncentered_svd: top_k exceeds number of rows");

  std::vector<double> g(t * t);
  kernels::gram(x.data, t, x.dim, g);
  const SymmetricEigen eig = jacobi_eigen(g, t);
  const double lambda1 = eig.values.front();
  if (!(lambda1 > 0.0)) throw Error("uncentered_svd: drift matrix is all zero");

  struct Component {
    double sigma;
    std::vector<double> v;
  };
  std::vector<Component> comps;
  std::vector<double> u(t);
  for (std::size_t k = 0; k < t; ++k) {
    if (eig.values[k] <= gram_resolution(t) * lambda1) break;
    for (std::size_t r = 0; r < t; ++r) u[r] = eig.vector_entry(r, k);
    Component c;
    c.v.resize(x.dim);
    kernels::matvec_transposed(x.data, t, x.dim, u, c.v);  // X^T u_k = sigma_k v_k
    double n = norm(c.v);
    if (n == 0.0) break;
    scale(c.v, 1.0 / n);
    // Two passes of modified Gram-Schmidt against the (more accurate) leading vectors.
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& prev : comps) axpy(-dot(prev.v, c.v), prev.v, c.v);
    n = norm(c.v);
    if (n < 0.5) break;
    scale(c.v, 1.0 / n);
    // Rayleigh recomputation ||X v_k|| avoids the squared conditioning of the Gram eigenvalue.
    std::vector<double> xv(t);
    kernels::matvec(x.data, t, x.dim, c.v, xv);
    c.sigma = norm(xv);
    comps.push_back(std::move(c));
  }
  std::stable_sort(comps.begin(), comps.end(), [](const Component& a, const Component& b) { return a.sigma > b.sigma; });
  const double sigma1 = comps.front().sigma;
  std::erase_if(comps, [&](const Component& c) { return c.sigma < 1e-12 * sigma1; });

  TrajectorySpectrum s;
  double total = 0.0;
  for (const auto& c : comps) {
    s.singular_values.push_back(c.sigma);
    total += c.sigma * c.sigma;
  }
  for (double sg : s.singular_values) s.variance_fractions.push_back(sg * sg / total);
  s.k95 = components_for(s.variance_fractions, 0.95);
  s.k99 = components_for(s.variance_fractions, 0.99);
  s.pc1_unstable = comps.size() > 1 && (comps[0].sigma - comps[1].sigma) <= 1e-9 * comps[0].sigma;
  const std::size_t keep = std::min(top_k, comps.size());
  for (std::size_t k = 0; k < keep; ++k) {
    fix_sign(comps[k].v, x);
    s.right_vectors.push_back(std::move(comps[k].v));
  }
  return s;
}

RollingBackboneSeries rolling_backbones(const Trajectory& traj, int width, int stride, bool row_normalize,
                                        std::optional<std::span<const double>> global_backbone) {
  if (width < 3) throw Error("rolling_backbones: window width must be at least 3 checkpoints");
  if (stride < 1) throw Error("rolling_backbones: stride must be positive");
  if (traj.size() < static_cast<std::size_t>(width) + 1)
    throw Error("rolling_backbones: window of " + std::to_string(width) + " checkpoints larger than series of " +
                std::to_string(traj.size()));
  if (global_backbone && global_backbone->size() != traj.dim)
    throw Error("rolling_backbones: global backbone dimension mismatch");

  const std::size_t w = static_cast<std::size_t>(width);
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i + w <= traj.size(); i += static_cast<std::size_t>(stride)) starts.push_back(i);

  RollingBackboneSeries out;
  out.width = width;
  out.stride = stride;
  out.row_normalized = row_normalize;
  out.directions.resize(starts.size());
  out.unstable.resize(starts.size());
  std::vector<char> unstable(starts.size(), 0);

#pragma omp parallel for schedule(dynamic)
  for (std::size_t n = 0; n < starts.size(); ++n) {
    const std::size_t i = starts[n];
    DriftMatrix x = build_drift_matrix(traj, traj.steps[i], row_normalize, traj.steps[i + w - 1]);
    TrajectorySpectrum s = uncentered_svd(x, 1);
    out.directions[n] = std::move(s.right_vectors.front());
    unstable[n] = s.pc1_unstable ? 1 : 0;
  }
  for (std::size_t n = 0; n < starts.size(); ++n) {
    const std::size_t i = starts[n];
    out.window_start.push_back(traj.steps[i]);
    out.window_end.push_back(traj.steps[i + w - 1]);
    out.centers.push_back(0.5 * static_cast<double>(traj.steps[i] + traj.steps[i + w - 1]));
    out.unstable[n] = unstable[n] != 0;
    if (n > 0) out.adjacent_alignment.push_back(std::min(1.0, std::abs(dot(out.directions[n - 1], out.directions[n]))));
    if (global_backbone) out.global_alignment.push_back(std::min(1.0, std::abs(dot(out.directions[n], *global_backbone))));
  }
  return out;
}

namespace {

std::pair<std::vector<double>, double> interval_backbone(const Trajectory& traj, StepInterval iv, bool row_normalize,
                                                         const char* which) {
  if (iv.hi <= iv.lo) throw Error(std::string("phase_backbones: empty ") + which + " interval");
  auto first = std::lower_bound(traj.steps.begin(), traj.steps.end(), iv.lo);
  if (first == traj.steps.end() || *first > iv.hi)
    throw Error(std::string("phase_backbones: ") + which + " interval out of range");
  const std::int64_t anchor = *first;
  const auto beyond =
      std::count_if(traj.steps.begin(), traj.steps.end(), [&](std::int64_t s) { return s > anchor && s <= iv.hi; });
  if (beyond < 2)
    throw Error(std::string("phase_backbones: ") + which + " interval needs 2 checkpoints beyond its anchor");
  DriftMatrix x = build_drift_matrix(traj, anchor, row_normalize, iv.hi);
  TrajectorySpectrum s = uncentered_svd(x, 1);
  return {std::move(s.right_vectors.front()), s.variance_fractions.front()};
}

}  // namespace

PhaseBackbones phase_backbones(const Trajectory& traj, StepInterval early, StepInterval late, bool row_normalize,
                               const RollingBackboneSeries* rolling) {
  PhaseBackbones out;
  out.early = early;
  out.late = late;
  std::tie(out.early_direction, out.early_rho1) = interval_backbone(traj, early, row_normalize, "early");
  std::tie(out.late_direction, out.late_rho1) = interval_backbone(traj, late, row_normalize, "late");
  out.overlap = std::min(1.0, std::abs(dot(out.early_direction, out.late_direction)));
  if (rolling) {
    out.centers = rolling->centers;
    for (const auto& d : rolling->directions) {
      out.early_alignment.push_back(std::min(1.0, std::abs(dot(d, out.early_direction))));
      out.late_alignment.push_back(std::min(1.0, std::abs(dot(d, out.late_direction))));
    }
  }
  return out;
}

}  // namespace driftscope
