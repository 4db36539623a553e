#include "driftscope/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "driftscope/common.hpp"

namespace driftscope {

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::AdamW: return "adamw";
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::SgdMomentum: return "sgd-momentum";
    case OptimizerKind::SgdwNesterov: return "sgdw-nesterov";
  }
  throw Error("optimizer: unknown optimizer kind");
}

std::string to_string(DecayCoupling coupling) {
  return coupling == DecayCoupling::Decoupled ? "decoupled" : "l2";
}

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "adamw") return OptimizerKind::AdamW;
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "sgd-momentum") return OptimizerKind::SgdMomentum;
  if (s == "sgdw-nesterov") return OptimizerKind::SgdwNesterov;
  throw Error("optimizer: unknown optimizer kind '" + s + "'");
}

DecayCoupling parse_decay_coupling(const std::string& s) {
  if (s == "decoupled") return DecayCoupling::Decoupled;
  if (s == "l2") return DecayCoupling::L2;
  throw Error("optimizer: unknown decay coupling '" + s + "'");
}

void OptimizerConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error("optimizer: learning rate must be finite and non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw Error("optimizer: beta1 must lie in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw Error("optimizer: beta2 must lie in [0,1)");
  if (!(eps >= 0.0)) throw Error("optimizer: eps must be non-negative");
  if (!(weight_decay >= 0.0)) throw Error("optimizer: weight decay must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("optimizer: momentum must lie in [0,1)");
  if (!(clip > 0.0)) throw Error("optimizer: clip norm must be positive");
  if (!(floor_fraction >= 0.0 && floor_fraction <= 1.0)) throw Error("optimizer: floor fraction must lie in [0,1]");
  if (warmup_steps < 0 || total_steps < 0) throw Error("optimizer: schedule lengths must be non-negative");
  if (kind == OptimizerKind::AdamW && momentum != 0.0) throw Error("optimizer: momentum is not an adamw parameter");
  if (kind == OptimizerKind::Sgd && momentum != 0.0) throw Error("optimizer: plain sgd takes no momentum");
}

double OptimizerConfig::lr_at(std::int64_t step) const {
  if (warmup_steps > 0 && step <= warmup_steps) return lr * static_cast<double>(step) / warmup_steps;
  if (total_steps <= warmup_steps) return lr;
  double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  progress = std::clamp(progress, 0.0, 1.0);
  return lr * (floor_fraction + (1.0 - floor_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

template <typename T>
double clip_global_norm(std::span<T> g, double max_norm) {
  double ss = 0.0;
  for (const T x : g) ss += static_cast<double>(x) * static_cast<double>(x);
  const double norm = std::sqrt(ss);
  if (!std::isfinite(norm)) throw Error("optimizer: non-finite gradient");
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (T& x : g) x = static_cast<T>(static_cast<double>(x) * s);
  }
  return norm;
}

template <typename T>
Optimizer<T>::Optimizer(const OptimizerConfig& cfg, std::size_t size, std::vector<std::uint8_t> decay_mask)
    : cfg_(cfg), mask_(std::move(decay_mask)) {
  cfg_.validate();
  if (mask_.empty()) mask_.assign(size, 1);
  if (mask_.size() != size) throw Error("optimizer: decay mask size mismatch");
  m_.assign(size, 0.0);
  if (cfg_.kind == OptimizerKind::AdamW) v_.assign(size, 0.0);
}

template <typename T>
void Optimizer<T>::reset() {
  std::fill(m_.begin(), m_.end(), 0.0);
  std::fill(v_.begin(), v_.end(), 0.0);
  t_ = 0;
}

template <typename T>
double Optimizer<T>::step(std::span<T> params, std::span<T> grad, double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw Error("optimizer: buffer size mismatch");
  const double norm = clip_global_norm(grad, cfg_.clip);
  ++t_;
  const std::size_t n = params.size();
  const double mu = cfg_.weight_decay;
  const bool l2 = cfg_.coupling == DecayCoupling::L2;

  switch (cfg_.kind) {
    case OptimizerKind::AdamW: {
      // Moments are stored bias-corrected: mhat_t = (1 - w_t) mhat_{t-1} + w_t g with
      // w_t = (1-beta)/(1-beta^t), which equals m_t/(1-beta^t). At t = 1 the weight is exactly 1.
      // The convex form keeps w_t = 1 exact; the incremental form cancels when g^2 << v.
      const double b1 = cfg_.beta1, b2 = cfg_.beta2;
      const double w1 = (1.0 - b1) / (1.0 - std::pow(b1, static_cast<double>(t_)));
      const double w2 = b2 == 0.0 ? 1.0 : (1.0 - b2) / (1.0 - std::pow(b2, static_cast<double>(t_)));
      for (std::size_t i = 0; i < n; ++i) {
        const double theta = static_cast<double>(params[i]);
        const double decay = mask_[i] ? mu : 0.0;
        double g = static_cast<double>(grad[i]);
        if (l2) g += decay * theta;
        m_[i] = (1.0 - w1) * m_[i] + w1 * g;
        v_[i] = (1.0 - w2) * v_[i] + w2 * (g * g);
        double upd = m_[i] / (std::sqrt(v_[i]) + cfg_.eps);
        if (!l2) upd += decay * theta;
        params[i] = static_cast<T>(theta - lr * upd);
      }
      break;
    }
    case OptimizerKind::Sgd:
    case OptimizerKind::SgdMomentum: {
      const double mom = cfg_.momentum;
      for (std::size_t i = 0; i < n; ++i) {
        const double theta = static_cast<double>(params[i]);
        const double decay = mask_[i] ? mu : 0.0;
        double g = static_cast<double>(grad[i]);
        if (l2) g += decay * theta;
        m_[i] = mom * m_[i] + g;
        double next = theta - lr * m_[i];
        if (!l2) next -= lr * decay * theta;
        params[i] = static_cast<T>(next);
      }
      break;
    }
    case OptimizerKind::SgdwNesterov: {
      const double mom = cfg_.momentum;
      for (std::size_t i = 0; i < n; ++i) {
        const double decay = mask_[i] ? mu : 0.0;
        double g = static_cast<double>(grad[i]);
        if (l2) g += decay * static_cast<double>(params[i]);
        m_[i] = mom * m_[i] + g;
        double next = static_cast<double>(params[i]) - lr * (g + mom * m_[i]);
        if (!l2) next *= 1.0 - lr * decay;
        params[i] = static_cast<T>(next);
      }
      break;
    }
  }
  return norm;
}

template double clip_global_norm<float>(std::span<float>, double);
template double clip_global_norm<double>(std::span<double>, double);
template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace driftscope
