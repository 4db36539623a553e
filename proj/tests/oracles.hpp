#pragma once
// Independent reference implementations used only by tests. None of these share code
// with the library beyond plain data types.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "driftscope/model.hpp"
#include "driftscope/optimizer.hpp"
#include "driftscope/task.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// Dense SVD of a rows x cols row-major matrix.

struct Svd {
  std::vector<double> sigma;
  std::vector<std::vector<double>> right;  // one per singular value
};

inline Svd dense_svd(const std::vector<double>& x, std::size_t rows, std::size_t cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x[i * cols + j];
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinV);
  Svd out;
  const auto& s = svd.singularValues();
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    out.sigma.push_back(s(k));
    std::vector<double> v(cols);
    for (std::size_t j = 0; j < cols; ++j) v[j] = svd.matrixV()(static_cast<Eigen::Index>(j), k);
    out.right.push_back(std::move(v));
  }
  return out;
}

inline int components_reaching(const std::vector<double>& sigma, double threshold) {
  double total = 0.0;
  for (double s : sigma) total += s * s;
  double cum = 0.0;
  for (std::size_t k = 0; k < sigma.size(); ++k) {
    cum += sigma[k] * sigma[k];
    if (cum / total >= threshold) return static_cast<int>(k + 1);
  }
  return static_cast<int>(sigma.size());
}

// ---------------------------------------------------------------------------
// Straightforward per-position forward pass of the desk transformer.

struct ForwardResult {
  double lm = 0.0;
  double probe = 0.0;
  double composite = 0.0;
};

inline ForwardResult forward_loss(const driftscope::ModelConfig& cfg, const std::vector<double>& theta,
                                  const driftscope::ParamLayout& layout, const driftscope::Batch& batch,
                                  double lambda) {
  const int D = cfg.d_model, H = cfg.heads, HD = D / H, F = cfg.d_ff, V = cfg.vocab, S = batch.seq_len;
  auto P = [&](const std::string& name) { return theta.data() + layout.slot(name).offset; };
  using Vec = std::vector<double>;
  auto layer_norm = [](const Vec& x, const double* g, const double* b) {
    const double n = static_cast<double>(x.size());
    double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= n;
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * g[i] + b[i];
    return y;
  };
  // y[j] = b[j] + sum_i x[i] W[i][j], W stored in-major.
  auto affine = [](const Vec& x, const double* w, const double* b, int out) {
    Vec y(static_cast<std::size_t>(out));
    for (int j = 0; j < out; ++j) {
      double s = b[j];
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w[i * static_cast<std::size_t>(out) + static_cast<std::size_t>(j)];
      y[static_cast<std::size_t>(j)] = s;
    }
    return y;
  };

  double lm_sum = 0.0, probe_sum = 0.0;
  int lm_count = 0, probe_count = 0;
  for (int b = 0; b < batch.batch; ++b) {
    std::vector<Vec> x(static_cast<std::size_t>(S), Vec(static_cast<std::size_t>(D)));
    for (int t = 0; t < S; ++t)
      for (int j = 0; j < D; ++j)
        x[t][j] = P("tok_emb")[batch.token(b, t) * D + j] + P("pos_emb")[t * D + j];
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string pre = "blocks." + std::to_string(l) + ".";
      std::vector<Vec> qkv(static_cast<std::size_t>(S));
      for (int t = 0; t < S; ++t)
        qkv[t] = affine(layer_norm(x[t], P(pre + "ln1.gamma"), P(pre + "ln1.beta")), P(pre + "attn.qkv.weight"),
                        P(pre + "attn.qkv.bias"), 3 * D);
      for (int t = 0; t < S; ++t) {
        Vec att(static_cast<std::size_t>(D), 0.0);
        for (int h = 0; h < H; ++h) {
          Vec scores;
          for (int u = 0; u <= t; ++u) {
            double s = 0.0;
            for (int j = 0; j < HD; ++j) s += qkv[t][h * HD + j] * qkv[u][D + h * HD + j];
            scores.push_back(s / std::sqrt(static_cast<double>(HD)));
          }
          const double mx = *std::max_element(scores.begin(), scores.end());
          double z = 0.0;
          for (double& s : scores) z += (s = std::exp(s - mx));
          for (int u = 0; u <= t; ++u)
            for (int j = 0; j < HD; ++j) att[h * HD + j] += scores[u] / z * qkv[u][2 * D + h * HD + j];
        }
        const Vec proj = affine(att, P(pre + "attn.proj.weight"), P(pre + "attn.proj.bias"), D);
        for (int j = 0; j < D; ++j) x[t][j] += proj[j];
      }
      for (int t = 0; t < S; ++t) {
        Vec up = affine(layer_norm(x[t], P(pre + "ln2.gamma"), P(pre + "ln2.beta")), P(pre + "mlp.up.weight"),
                        P(pre + "mlp.up.bias"), F);
        for (double& u : up) u = 0.5 * u * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (u + 0.044715 * u * u * u)));
        const Vec down = affine(up, P(pre + "mlp.down.weight"), P(pre + "mlp.down.bias"), D);
        for (int j = 0; j < D; ++j) x[t][j] += down[j];
      }
    }
    auto ce_at = [&](int t, int target) {
      const Vec h = layer_norm(x[t], P("ln_f.gamma"), P("ln_f.beta"));
      Vec logits(static_cast<std::size_t>(V));
      for (int v = 0; v < V; ++v) {
        double s = 0.0;
        for (int j = 0; j < D; ++j) s += h[j] * P("tok_emb")[v * D + j];
        logits[v] = s;
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double lg : logits) z += std::exp(lg - mx);
      return std::log(z) + mx - logits[target];
    };
    const int ap = batch.answer_pos[b];
    if (ap >= 0) {
      probe_sum += ce_at(ap, batch.token(b, ap + 1));
      ++probe_count;
    } else {
      for (int t = 0; t + 1 < S; ++t) lm_sum += ce_at(t, batch.token(b, t + 1));
      lm_count += S - 1;
    }
  }
  ForwardResult r;
  r.lm = lm_count ? lm_sum / lm_count : 0.0;
  r.probe = probe_count ? probe_sum / probe_count : 0.0;
  r.composite = r.lm + lambda * r.probe;
  return r;
}

// ---------------------------------------------------------------------------
// Textbook per-coordinate optimizer recurrences. Moments are kept raw and bias
// correction is applied when forming the update.

struct ScalarOptimizer {
  driftscope::OptimizerConfig cfg;
  std::vector<double> m, v;
  std::vector<std::uint8_t> decay;
  long t = 0;

  ScalarOptimizer(const driftscope::OptimizerConfig& c, std::size_t n, std::vector<std::uint8_t> mask)
      : cfg(c), m(n, 0.0), v(n, 0.0), decay(std::move(mask)) {
    if (decay.empty()) decay.assign(n, 1);
  }

  void step(std::vector<double>& theta, std::vector<double> g, double lr) {
    double ss = 0.0;
    for (double x : g) ss += x * x;
    if (std::sqrt(ss) > cfg.clip)
      for (double& x : g) x *= cfg.clip / std::sqrt(ss);
    ++t;
    const bool l2 = cfg.coupling == driftscope::DecayCoupling::L2;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double mu = decay[i] ? cfg.weight_decay : 0.0;
      const double gi = l2 ? g[i] + mu * theta[i] : g[i];
      switch (cfg.kind) {
        case driftscope::OptimizerKind::AdamW: {
          m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * gi;
          v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * gi * gi;
          const double mh = m[i] / (1 - std::pow(cfg.beta1, t));
          const double vh = v[i] / (1 - std::pow(cfg.beta2, t));
          double u = mh / (std::sqrt(vh) + cfg.eps);
          if (!l2) u += mu * theta[i];
          theta[i] -= lr * u;
          break;
        }
        case driftscope::OptimizerKind::Sgd:
        case driftscope::OptimizerKind::SgdMomentum: {
          m[i] = cfg.momentum * m[i] + gi;
          const double old = theta[i];
          theta[i] -= lr * m[i];
          if (!l2) theta[i] -= lr * mu * old;
          break;
        }
        case driftscope::OptimizerKind::SgdwNesterov: {
          m[i] = cfg.momentum * m[i] + gi;
          theta[i] -= lr * (gi + cfg.momentum * m[i]);
          if (!l2) theta[i] -= lr * mu * theta[i];
          break;
        }
      }
    }
  }
};

// Optimizer settings exercised by the recurrence comparison.
inline driftscope::OptimizerConfig config_for(driftscope::OptimizerKind kind) {
  using driftscope::OptimizerKind;
  driftscope::OptimizerConfig c;
  c.kind = kind;
  c.weight_decay = 0.1;
  if (kind == OptimizerKind::SgdMomentum || kind == OptimizerKind::SgdwNesterov) c.momentum = 0.9;
  if (kind == OptimizerKind::Sgd || kind == OptimizerKind::SgdMomentum) c.coupling = driftscope::DecayCoupling::L2;
  return c;
}

// 100 steps with random gradients, a random decay mask and a varying rate; returns the
// largest per-coordinate difference between Optimizer<double> and ScalarOptimizer.
inline double recurrence_gap(const driftscope::OptimizerConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t n = 64;
  auto gaussian = [&](double scale) {
    std::normal_distribution<double> nd(0.0, scale);
    std::vector<double> v(n);
    for (double& x : v) x = nd(rng);
    return v;
  };
  std::vector<std::uint8_t> mask(n);
  for (auto& m : mask) m = static_cast<std::uint8_t>(rng() % 2);
  std::vector<double> theta = gaussian(1.0), ref = theta;
  driftscope::Optimizer<double> opt(cfg, n, mask);
  ScalarOptimizer o(cfg, n, mask);
  std::uniform_real_distribution<double> scale(0.01, 0.4);
  for (int t = 1; t <= 100; ++t) {
    auto g = gaussian(scale(rng));
    const double lr = cfg.lr * (1.0 + 0.5 * std::sin(t));
    o.step(ref, g, lr);
    opt.step(theta, g, lr);
  }
  double w = 0.0;
  for (std::size_t i = 0; i < n; ++i) w = std::max(w, std::abs(theta[i] - ref[i]));
  return w;
}

}  // namespace oracle
