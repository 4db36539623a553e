#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "driftscope/checkpoint.hpp"

namespace driftscope {

struct TrajectorySpectrum {
  std::vector<double> singular_values;  // non-increasing, numerically null components dropped
  std::vector<double> variance_fractions;
  std::vector<std::vector<double>> right_vectors;  // first min(top_k, rank) right singular vectors
  int k95 = 0;
  int k99 = 0;
  bool pc1_unstable = false;  // sigma_1 and sigma_2 agree to 1e-9 relative

  std::size_t rank() const { return singular_values.size(); }
  double rho(std::size_t k) const { return variance_fractions.at(k - 1); }  // 1-based
};

// Uncentered SVD via the T x T Gram matrix. Singular vectors are sign-fixed so that
// the last drift row projects non-negatively onto each of them.
TrajectorySpectrum uncentered_svd(const DriftMatrix& x, std::size_t top_k);

// sigma_k^2 / sum_j sigma_j^2 for 1-based k.
double variance_fraction(std::span<const double> sigma, std::size_t k);

// Smallest k with cumulative variance fraction >= threshold.
int components_for(std::span<const double> fractions, double threshold);

struct RollingBackboneSeries {
  int width = 0;
  int stride = 1;
  bool row_normalized = false;
  std::vector<double> centers;  // mean step of each window
  std::vector<std::int64_t> window_start;
  std::vector<std::int64_t> window_end;
  std::vector<std::vector<double>> directions;
  std::vector<double> adjacent_alignment;  // rho(t) between window w and w+1; size windows-1
  std::vector<double> global_alignment;    // c(w); empty unless a global backbone was supplied
  std::vector<bool> unstable;
};

RollingBackboneSeries rolling_backbones(const Trajectory& traj, int width, int stride, bool row_normalize,
                                        std::optional<std::span<const double>> global_backbone = std::nullopt);

struct StepInterval {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
};

struct PhaseBackbones {
  StepInterval early;
  StepInterval late;
  std::vector<double> early_direction;  // v_E
  std::vector<double> late_direction;   // v_L
  double early_rho1 = 0.0;
  double late_rho1 = 0.0;
  double overlap = 0.0;                 // |<v_E, v_L>|
  std::vector<double> centers;          // rolling window centers for the alignment series
  std::vector<double> early_alignment;  // A_E(t)
  std::vector<double> late_alignment;   // A_L(t)
};

// PC1 over each interval, each anchored at the interval's first checkpoint.
PhaseBackbones phase_backbones(const Trajectory& traj, StepInterval early, StepInterval late, bool row_normalize,
                               const RollingBackboneSeries* rolling = nullptr);

}  // namespace driftscope
