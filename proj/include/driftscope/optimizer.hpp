#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace driftscope {

enum class OptimizerKind { AdamW, Sgd, SgdMomentum, SgdwNesterov };
enum class DecayCoupling { Decoupled, L2 };

std::string to_string(OptimizerKind kind);
std::string to_string(DecayCoupling coupling);
OptimizerKind parse_optimizer_kind(const std::string& s);
DecayCoupling parse_decay_coupling(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::AdamW;
  double lr = 1e-3;
  int warmup_steps = 0;
  int total_steps = 0;  // cosine horizon; 0 keeps the rate constant after warmup
  double floor_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.5;
  DecayCoupling coupling = DecayCoupling::Decoupled;
  double momentum = 0.0;
  double clip = 1.0;

  void validate() const;
  // Learning rate for optimizer step `step` (1-based): linear warmup, then cosine
  // decay to floor_fraction * lr at total_steps.
  double lr_at(std::int64_t step) const;
};

// Rescales g so its Euclidean norm is at most max_norm. Returns the norm before clipping.
template <typename T>
double clip_global_norm(std::span<T> g, double max_norm);

template <typename T>
class Optimizer {
 public:
  // An empty decay mask applies weight decay to every coordinate.
  Optimizer(const OptimizerConfig& cfg, std::size_t size, std::vector<std::uint8_t> decay_mask = {});

  // Clips `grad` in place, then applies one update at learning rate `lr`.
  // Returns the pre-clip gradient norm.
  double step(std::span<T> params, std::span<T> grad, double lr);

  void reset();
  std::int64_t steps_taken() const { return t_; }
  const OptimizerConfig& config() const { return cfg_; }
  // AdamW keeps bias-corrected moments; the momentum variants keep the velocity in `first`.
  const std::vector<double>& first() const { return m_; }
  const std::vector<double>& second() const { return v_; }

 private:
  OptimizerConfig cfg_;
  std::vector<std::uint8_t> mask_;
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
};

extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace driftscope
