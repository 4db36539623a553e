#pragma once

// Empirical Fisher quotients q(v) = (1/M) sum_i <g_i, v>^2 over per-batch trunk
// gradients, and anisotropy against random directions orthogonal to v.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "driftscope/checkpoint.hpp"
#include "driftscope/model.hpp"
#include "driftscope/task.hpp"

namespace driftscope {

struct GradientMatrix {
  std::size_t dim = 0;
  std::vector<double> data;  // rows() x dim

  std::size_t rows() const { return dim ? data.size() / dim : 0; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  void append(std::span<const double> g);
};

double rayleigh(const GradientMatrix& g, std::span<const double> v);

struct RayleighResult {
  std::string label;
  double quotient = 0.0;
  std::vector<double> random_quotients;
  double mean_random = 0.0;
  double alpha = 0.0;
  bool degenerate = false;  // mean random quotient below 1e-15; alpha is +inf
};

// K unit vectors orthogonal to v and to each other, from Gaussian draws.
std::vector<std::vector<double>> random_orthogonal_directions(std::span<const double> v, int k,
                                                              std::uint64_t seed);

RayleighResult anisotropy(const GradientMatrix& g, std::span<const double> v, int k, std::uint64_t seed,
                          std::string label = "backbone");

// Gradient rows from a caller-supplied producer; each call fills one row.
GradientMatrix collect_gradients(std::size_t batches, std::size_t dim,
                                 const std::function<void(std::size_t, std::span<double>)>& produce);

// Trunk coordinates of a full parameter-shaped vector, in flatten_trunk order.
template <typename T>
std::vector<double> gather_trunk(const ParamLayout& layout, std::span<const T> values, const TrunkSelector& sel);

// Per-batch trunk gradients of the composite loss at the model's current parameters.
template <typename T>
GradientMatrix collect_gradients(Transformer<T>& model, std::span<const Batch> batches, double lambda,
                                 const TrunkSelector& sel = {});

}  // namespace driftscope
