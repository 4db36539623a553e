#include "driftscope/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "driftscope/common.hpp"
#include "driftscope/linalg.hpp"

namespace driftscope {

namespace {

void require_unit(std::span<const double> v, std::size_t dim, const char* what) {
  if (v.size() != dim) throw Error(std::string(what) + ": backbone dimension mismatch");
  if (std::abs(norm(v) - 1.0) > 1e-8) throw Error(std::string(what) + ": backbone is not unit norm");
}

}  // namespace

BackboneDecomposition decompose(const DriftMatrix& drifts, std::span<const double> backbone) {
  require_unit(backbone, drifts.dim, "decompose");
  BackboneDecomposition out;
  std::vector<double> r(drifts.dim);
  for (std::size_t t = 0; t < drifts.rows(); ++t) {
    const auto x = drifts.row(t);
    double a = dot(x, backbone);
    std::copy(x.begin(), x.end(), r.begin());
    axpy(-a, backbone, r);
    // second projection pass removes the rounding left by the first
    const double fix = dot(r, backbone);
    axpy(-fix, backbone, r);
    a += fix;
    const double rn = norm(r);
    const double xn = norm(x);
    out.steps.push_back(drifts.steps[t]);
    out.coordinates.push_back(a);
    out.residual_norms.push_back(rn);
    out.drift_norms.push_back(xn);
    const double denom = a * a + rn * rn;
    out.backbone_fractions.push_back(denom > 0.0 ? std::clamp(a * a / denom, 0.0, 1.0) : 0.0);
    out.residual_backbone_dots.push_back(dot(r, backbone));
  }
  return out;
}

PowerLawFit fit_power_law(std::span<const double> steps, std::span<const double> values, double t_lo, double t_hi) {
  if (steps.size() != values.size()) throw Error("fit_power_law: series length mismatch");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const double t = steps[i];
    const double v = std::abs(values[i]);
    if (t < t_lo || t > t_hi || !(t > 0.0) || !(v > 0.0)) continue;
    lx.push_back(std::log(t));
    ly.push_back(std::log(v));
  }
  if (lx.size() < 3) throw Error("fit_power_law: fewer than 3 positive samples in window");
  const double n = static_cast<double>(lx.size());
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double dx = lx[i] - mx;
    const double dy = ly[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw Error("fit_power_law: zero variance in log t");
  PowerLawFit fit;
  fit.t_lo = t_lo;
  fit.t_hi = t_hi;
  fit.samples = lx.size();
  fit.exponent = sxy / sxx;
  const double intercept = my - fit.exponent * mx;
  fit.coefficient = std::exp(intercept);
  double ss_res = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double e = ly[i] - (intercept + fit.exponent * lx[i]);
    ss_res += e * e;
  }
  // The mean of identical logs can round away from them, so test constancy on the raw samples.
  const bool flat = std::all_of(ly.begin(), ly.end(), [&](double v) { return v == ly.front(); });
  if (flat) {
    fit.exponent = 0.0;
    fit.coefficient = std::exp(ly.front());
    fit.r_squared = 1.0;
  } else if (syy == 0.0) {
    fit.r_squared = ss_res == 0.0 ? 1.0 : 0.0;
  } else {
    fit.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  }
  return fit;
}

double AlignmentSeries::mean_abs() const {
  if (abs_cosines.empty()) return 0.0;
  return std::accumulate(abs_cosines.begin(), abs_cosines.end(), 0.0) / static_cast<double>(abs_cosines.size());
}

AlignmentSeries update_alignment(const Trajectory& traj, std::span<const double> backbone, std::int64_t interval) {
  require_unit(backbone, traj.dim, "update_alignment");
  if (interval <= 0) throw Error("update_alignment: interval must be positive");
  AlignmentSeries out;
  out.noise_floor = 1.0 / std::sqrt(static_cast<double>(traj.dim));
  std::vector<double> u(traj.dim);
  const std::int64_t first = traj.steps.front();
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const std::int64_t t = traj.steps[i];
    if (t - interval < first) continue;
    if (!traj.contains(t - interval))
      throw Error("update_alignment: missing checkpoint at step " + std::to_string(t - interval));
    const auto prev = traj.at(traj.index_of(t - interval));
    const auto cur = traj.at(i);
    for (std::size_t j = 0; j < traj.dim; ++j) u[j] = cur[j] - prev[j];
    const double un = norm(u);
    if (un == 0.0) throw Error("update_alignment: zero-norm update at step " + std::to_string(t));
    const double c = std::clamp(dot(u, backbone) / un, -1.0, 1.0);
    out.steps.push_back(t);
    out.signed_cosines.push_back(c);
    out.abs_cosines.push_back(std::abs(c));
  }
  if (out.steps.empty()) throw Error("update_alignment: no checkpoint pairs spaced by the interval");
  return out;
}

AlignmentSeries gradient_alignment(std::span<const std::vector<double>> gradients, std::span<const double> backbone,
                                   std::span<const std::int64_t> steps) {
  if (gradients.empty()) throw Error("gradient_alignment: no gradients");
  require_unit(backbone, gradients.front().size(), "gradient_alignment");
  if (!steps.empty() && steps.size() != gradients.size()) throw Error("gradient_alignment: step labels mismatch");
  AlignmentSeries out;
  out.noise_floor = 1.0 / std::sqrt(static_cast<double>(backbone.size()));
  for (std::size_t i = 0; i < gradients.size(); ++i) {
    if (gradients[i].size() != backbone.size()) throw Error("gradient_alignment: dimension mismatch");
    const double gn = norm(gradients[i]);
    if (gn == 0.0) throw Error("gradient_alignment: zero gradient vector");
    const double c = std::clamp(dot(gradients[i], backbone) / gn, -1.0, 1.0);
    out.steps.push_back(steps.empty() ? static_cast<std::int64_t>(i) : steps[i]);
    out.signed_cosines.push_back(c);
    out.abs_cosines.push_back(std::abs(c));
  }
  return out;
}

SwitchAnalysis switch_direction(std::span<const double> peak, std::int64_t peak_step, std::span<const double> trough,
                                std::int64_t trough_step, std::span<const double> backbone,
                                const TrajectorySpectrum& spectrum) {
  if (peak.size() != trough.size()) throw Error("switch_direction: checkpoint dimension mismatch");
  require_unit(backbone, peak.size(), "switch_direction");
  SwitchAnalysis out;
  out.peak_step = peak_step;
  out.trough_step = trough_step;
  out.direction.resize(peak.size());
  for (std::size_t j = 0; j < peak.size(); ++j) out.direction[j] = peak[j] - trough[j];
  const double n = norm(out.direction);
  if (n == 0.0) throw Error("switch_direction: zero displacement between peak and trough");
  scale(out.direction, 1.0 / n);
  out.signed_overlap = std::clamp(dot(out.direction, backbone), -1.0, 1.0);
  out.overlap = std::abs(out.signed_overlap);

  std::vector<double> perp = out.direction;
  axpy(-out.signed_overlap, backbone, perp);
  axpy(-dot(perp, backbone), backbone, perp);
  const double pn = norm(perp);
  if (pn < 1e-12) {
    out.degenerate = true;
    return out;
  }
  scale(perp, 1.0 / pn);
  const std::size_t last = std::min<std::size_t>(6, spectrum.right_vectors.size());
  out.truncated = spectrum.right_vectors.size() < 6;
  for (std::size_t k = 1; k < last; ++k) {
    if (spectrum.right_vectors[k].size() != perp.size()) throw Error("switch_direction: spectrum dimension mismatch");
    const double c = dot(perp, spectrum.right_vectors[k]);
    out.residual_capture += c * c;
    ++out.components_used;
  }
  out.residual_capture = std::clamp(out.residual_capture, 0.0, 1.0);
  out.transverse_direction = std::move(perp);
  return out;
}

std::vector<double> pairwise_cosines(std::span<const SwitchAnalysis> switches) {
  std::vector<double> out;
  for (std::size_t i = 0; i < switches.size(); ++i)
    for (std::size_t j = i + 1; j < switches.size(); ++j)
      out.push_back(std::clamp(dot(switches[i].direction, switches[j].direction), -1.0, 1.0));
  return out;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error("pearson: series length mismatch");
  if (xs.size() < 3) throw Error("pearson: need at least 3 paired samples");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationReport correlate_window(std::span<const double> steps, std::span<const double> xs,
                                   std::span<const double> ys, double t_lo, double t_hi) {
  if (steps.size() != xs.size() || steps.size() != ys.size()) throw Error("correlate: series length mismatch");
  std::vector<double> a, b;
  for (std::size_t i = 0; i < steps.size(); ++i)
    if (steps[i] >= t_lo && steps[i] <= t_hi) {
      a.push_back(xs[i]);
      b.push_back(ys[i]);
    }
  CorrelationReport rep;
  rep.t_lo = t_lo;
  rep.t_hi = t_hi;
  rep.samples = a.size();
  rep.r = pearson(a, b);
  return rep;
}

std::vector<Extremum> find_extrema(std::span<const double> values, int radius, double prominence) {
  std::vector<Extremum> out;
  const auto n = static_cast<std::ptrdiff_t>(values.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - radius);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n - 1, i + radius);
    if (hi - lo < 1) continue;
    bool is_max = true, is_min = true;
    double nmin = values[static_cast<std::size_t>(i)], nmax = nmin;
    for (std::ptrdiff_t j = lo; j <= hi; ++j) {
      if (j == i) continue;
      const double v = values[static_cast<std::size_t>(j)];
      const double c = values[static_cast<std::size_t>(i)];
      if (v >= c) is_max = false;
      if (v <= c) is_min = false;
      nmin = std::min(nmin, v);
      nmax = std::max(nmax, v);
    }
    const double c = values[static_cast<std::size_t>(i)];
    if (is_max && c - nmin >= prominence) out.push_back({static_cast<std::size_t>(i), true});
    if (is_min && nmax - c >= prominence) out.push_back({static_cast<std::size_t>(i), false});
  }
  return out;
}

std::vector<PeakTroughPair> pair_peaks_with_troughs(std::span<const Extremum> extrema) {
  std::vector<PeakTroughPair> out;
  for (std::size_t i = 0; i < extrema.size(); ++i) {
    if (!extrema[i].peak) continue;
    std::optional<std::size_t> trough;
    for (std::size_t j = i + 1; j < extrema.size() && !trough; ++j)
      if (!extrema[j].peak) trough = extrema[j].index;
    for (std::size_t j = i; j-- > 0 && !trough;)
      if (!extrema[j].peak) trough = extrema[j].index;
    if (trough) out.push_back({extrema[i].index, *trough});
  }
  return out;
}

}  // namespace driftscope
