#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "driftscope/checkpoint.hpp"
#include "driftscope/pca.hpp"

namespace driftscope {

// theta(t) = theta(anchor) + a(t) v_b + r(t), r(t) orthogonal to v_b.
struct BackboneDecomposition {
  std::vector<std::int64_t> steps;
  std::vector<double> coordinates;      // a(t), signed
  std::vector<double> residual_norms;   // ||r(t)||
  std::vector<double> drift_norms;      // ||theta(t) - theta(anchor)||
  std::vector<double> backbone_fractions;  // f_b(t); 0 where the drift is zero
  std::vector<double> residual_backbone_dots;  // <r(t), v_b> after re-orthogonalisation
};

// `drifts` must be un-normalised.
BackboneDecomposition decompose(const DriftMatrix& drifts, std::span<const double> backbone);

struct PowerLawFit {
  double t_lo = 0.0;
  double t_hi = 0.0;
  double exponent = 0.0;     // gamma
  double coefficient = 0.0;  // C
  double r_squared = 0.0;
  std::size_t samples = 0;
};

// Least squares of log|value| against log t over samples with t in [t_lo, t_hi], t > 0 and value != 0.
PowerLawFit fit_power_law(std::span<const double> steps, std::span<const double> values, double t_lo, double t_hi);

struct AlignmentSeries {
  std::vector<std::int64_t> steps;
  std::vector<double> signed_cosines;
  std::vector<double> abs_cosines;
  double noise_floor = 0.0;  // 1/sqrt(D)

  double mean_abs() const;
};

// C(t) = <theta(t) - theta(t - interval), v_b> / ||.|| for every checkpoint t that
// has a predecessor `interval` steps earlier.
AlignmentSeries update_alignment(const Trajectory& traj, std::span<const double> backbone, std::int64_t interval);

// Per-sample cosine of flattened gradients against v_b. `steps` labels the samples.
AlignmentSeries gradient_alignment(std::span<const std::vector<double>> gradients, std::span<const double> backbone,
                                   std::span<const std::int64_t> steps = {});

struct SwitchAnalysis {
  std::int64_t peak_step = 0;
  std::int64_t trough_step = 0;
  std::vector<double> direction;             // v_sw
  double signed_overlap = 0.0;               // <v_sw, v_b>
  double overlap = 0.0;                      // |<v_sw, v_b>|
  std::vector<double> transverse_direction;  // renormalised v_sw - <v_sw,v_b> v_b; empty if degenerate
  bool degenerate = false;
  double residual_capture = 0.0;  // share of the transverse direction in PCs 2..6
  int components_used = 0;        // PCs 2..(components_used+1) entered E
  bool truncated = false;         // spectrum had fewer than 6 vectors
};

SwitchAnalysis switch_direction(std::span<const double> peak, std::int64_t peak_step, std::span<const double> trough,
                                std::int64_t trough_step, std::span<const double> backbone,
                                const TrajectorySpectrum& spectrum);

// Upper-triangle pairwise cosines between switch directions, row-major over (i<j).
std::vector<double> pairwise_cosines(std::span<const SwitchAnalysis> switches);

double pearson(std::span<const double> xs, std::span<const double> ys);

struct CorrelationReport {
  double t_lo = 0.0;
  double t_hi = 0.0;
  double r = 0.0;
  std::size_t samples = 0;
};

CorrelationReport correlate_window(std::span<const double> steps, std::span<const double> xs,
                                   std::span<const double> ys, double t_lo, double t_hi);

struct Extremum {
  std::size_t index = 0;
  bool peak = true;
};

// Local extrema whose value is the strict extremum of the +-radius neighbourhood and
// differs from the farthest-opposite neighbour in it by at least `prominence`.
std::vector<Extremum> find_extrema(std::span<const double> values, int radius = 3, double prominence = 0.05);

struct PeakTroughPair {
  std::size_t peak = 0;
  std::size_t trough = 0;
};

// Pairs every peak with the next trough after it (or the previous one if none follows).
std::vector<PeakTroughPair> pair_peaks_with_troughs(std::span<const Extremum> extrema);

}  // namespace driftscope
