#include "driftscope/model.hpp"

#include <algorithm>
#include <cmath>
#include <bit>
#include <limits>
#include <type_traits>

#include "driftscope/common.hpp"
#include "driftscope/kernels.hpp"

namespace driftscope {

void ModelConfig::validate() const {
  if (layers < 1 || d_model < 1 || heads < 1 || d_ff < 1 || vocab < 1 || seq_len < 2)
    throw Error("model: all dimensions must be positive");
  if (d_model % heads != 0) throw Error("model: d_model must be divisible by heads");
}

std::size_t ModelConfig::block_trunk_parameter_count() const {
  const auto d = static_cast<std::size_t>(d_model);
  const auto f = static_cast<std::size_t>(d_ff);
  return 3 * d * d + d * d + d * f + f * d;
}

std::size_t ModelConfig::trunk_parameter_count() const {
  return static_cast<std::size_t>(layers) * block_trunk_parameter_count();
}

std::size_t ModelConfig::parameter_count() const {
  const auto d = static_cast<std::size_t>(d_model);
  const auto f = static_cast<std::size_t>(d_ff);
  const std::size_t per_block = block_trunk_parameter_count() + 3 * d + d + f + d + 4 * d;
  return static_cast<std::size_t>(vocab) * d + static_cast<std::size_t>(seq_len) * d +
         static_cast<std::size_t>(layers) * per_block + 2 * d;
}

ParamLayout::ParamLayout(const ModelConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<std::uint64_t>(cfg.d_model);
  const auto f = static_cast<std::uint64_t>(cfg.d_ff);
  auto add = [&](std::string name, std::vector<std::uint64_t> shape, bool trunk) {
    ParamSlot s;
    s.name = std::move(name);
    s.shape = std::move(shape);
    s.size = 1;
    for (auto x : s.shape) s.size *= static_cast<std::size_t>(x);
    s.offset = total_;
    s.trunk = trunk;
    total_ += s.size;
    index_[s.name] = slots_.size();
    slots_.push_back(std::move(s));
  };
  add("tok_emb", {static_cast<std::uint64_t>(cfg.vocab), d}, false);
  add("pos_emb", {static_cast<std::uint64_t>(cfg.seq_len), d}, false);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string b = "blocks." + std::to_string(l) + ".";
    add(b + "ln1.gamma", {d}, false);
    add(b + "ln1.beta", {d}, false);
    add(b + "attn.qkv.weight", {d, 3 * d}, true);
    add(b + "attn.qkv.bias", {3 * d}, false);
    add(b + "attn.proj.weight", {d, d}, true);
    add(b + "attn.proj.bias", {d}, false);
    add(b + "ln2.gamma", {d}, false);
    add(b + "ln2.beta", {d}, false);
    add(b + "mlp.up.weight", {d, f}, true);
    add(b + "mlp.up.bias", {f}, false);
    add(b + "mlp.down.weight", {f, d}, true);
    add(b + "mlp.down.bias", {d}, false);
  }
  add("ln_f.gamma", {d}, false);
  add("ln_f.beta", {d}, false);
}

const ParamSlot& ParamLayout::slot(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("model: unknown parameter '" + name + "'");
  return slots_[it->second];
}

std::vector<std::uint8_t> ParamLayout::decay_mask() const {
  std::vector<std::uint8_t> m(total_, 0);
  for (const auto& s : slots_)
    if (s.trunk) std::fill(m.begin() + static_cast<std::ptrdiff_t>(s.offset),
                           m.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size), 1);
  return m;
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

template <typename T>
void layernorm_forward(const T* x, const T* gamma, const T* beta, T* xhat, T* rstd, T* y, std::size_t n,
                       std::size_t d) {
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = x + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T xh = (xr[j] - mean) * rs;
      xhat[r * d + j] = xh;
      y[r * d + j] = xh * gamma[j] + beta[j];
    }
  }
}

// dx (+)= LN backward of dy. dgamma/dbeta accumulate.
template <typename T>
void layernorm_backward(const T* dy, const T* xhat, const T* rstd, const T* gamma, T* dx, T* dgamma, T* dbeta,
                        std::size_t n, std::size_t d) {
  for (std::size_t r = 0; r < n; ++r) {
    const T* dyr = dy + r * d;
    const T* xh = xhat + r * d;
    T mean_dxh = 0, mean_dxh_xh = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const T g = dyr[j] * gamma[j];
      mean_dxh += g;
      mean_dxh_xh += g * xh[j];
      dgamma[j] += dyr[j] * xh[j];
      dbeta[j] += dyr[j];
    }
    mean_dxh /= static_cast<T>(d);
    mean_dxh_xh /= static_cast<T>(d);
    for (std::size_t j = 0; j < d; ++j)
      dx[r * d + j] += rstd[r] * (dyr[j] * gamma[j] - mean_dxh - xh[j] * mean_dxh_xh);
  }
}

// exp over a buffer. The float path is a Cephes-style range reduction plus degree-6
// polynomial (about 1 ulp) written so the loop vectorizes; double uses the libm call.
template <typename T>
void exp_inplace(T* x, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
#pragma omp simd
    for (std::size_t i = 0; i < n; ++i) {
      float v = x[i];
      v = v > 88.0f ? 88.0f : v;
      v = v < -87.0f ? -87.0f : v;
      const float fn = std::floor(v * 1.44269504088896341f + 0.5f);
      v = v - fn * 0.693359375f;
      v = v + fn * 2.12194440e-4f;
      const float z = v * v;
      float y = 1.9875691500e-4f;
      y = y * v + 1.3981999507e-3f;
      y = y * v + 8.3334519073e-3f;
      y = y * v + 4.1665795894e-2f;
      y = y * v + 1.6666665459e-1f;
      y = y * v + 5.0000001201e-1f;
      y = y * z + v + 1.0f;
      const std::int32_t e = (static_cast<std::int32_t>(fn) + 127) << 23;
      x[i] = y * std::bit_cast<float>(e);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) x[i] = std::exp(x[i]);
  }
}

// Causal multi-head attention over packed [q | k | v] rows. prob receives the
// softmax weights (row t, columns u <= t) for every (sequence, head).
template <typename T>
void attention_forward(const T* qkv, T* prob, T* out, std::size_t B, std::size_t S, std::size_t D, std::size_t H,
                       T scale) {
  const std::size_t HD = D / H;
#pragma omp parallel for schedule(static) if (B * H * S * S * HD > 65536)
  for (std::size_t bh = 0; bh < B * H; ++bh) {
    const std::size_t b = bh / H, h = bh % H;
    const T* base = qkv + b * S * 3 * D;
    std::vector<T> kt(HD * S);
    for (std::size_t u = 0; u < S; ++u)
      for (std::size_t j = 0; j < HD; ++j) kt[j * S + u] = base[u * 3 * D + D + h * HD + j];
    T* pb = prob + bh * S * S;
    for (std::size_t t = 0; t < S; ++t) {
      T* pr = pb + t * S;
      const std::size_t len = t + 1;
      std::fill(pr, pr + len, T(0));
      const T* q = base + t * 3 * D + h * HD;
      for (std::size_t j = 0; j < HD; ++j) {
        const T qj = q[j] * scale;
        const T* kj = kt.data() + j * S;
#pragma omp simd
        for (std::size_t u = 0; u < len; ++u) pr[u] += qj * kj[u];
      }
      T mx = pr[0];
      for (std::size_t u = 1; u < len; ++u) mx = std::max(mx, pr[u]);
      for (std::size_t u = 0; u < len; ++u) pr[u] -= mx;
      exp_inplace(pr, len);
      T sum = 0;
      for (std::size_t u = 0; u < len; ++u) sum += pr[u];
      const T inv = T(1) / sum;
      T* o = out + (b * S + t) * D + h * HD;
      for (std::size_t u = 0; u < len; ++u) {
        pr[u] *= inv;
        const T w = pr[u];
        const T* v = base + u * 3 * D + 2 * D + h * HD;
#pragma omp simd
        for (std::size_t j = 0; j < HD; ++j) o[j] += w * v[j];
      }
    }
  }
}

// dqkv must be zero on entry.
template <typename T>
void attention_backward(const T* qkv, const T* prob, const T* datt, T* dqkv, std::size_t B, std::size_t S,
                        std::size_t D, std::size_t H, T scale) {
  const std::size_t HD = D / H;
#pragma omp parallel for schedule(static) if (B * H * S * S * HD > 65536)
  for (std::size_t bh = 0; bh < B * H; ++bh) {
    const std::size_t b = bh / H, h = bh % H;
    const T* base = qkv + b * S * 3 * D;
    T* dbase = dqkv + b * S * 3 * D;
    std::vector<T> vt(HD * S), dp(S);
    for (std::size_t u = 0; u < S; ++u)
      for (std::size_t j = 0; j < HD; ++j) vt[j * S + u] = base[u * 3 * D + 2 * D + h * HD + j];
    const T* pb = prob + bh * S * S;
    for (std::size_t t = 0; t < S; ++t) {
      const T* pr = pb + t * S;
      const std::size_t len = t + 1;
      const T* dout = datt + (b * S + t) * D + h * HD;
      std::fill(dp.begin(), dp.begin() + static_cast<std::ptrdiff_t>(len), T(0));
      for (std::size_t j = 0; j < HD; ++j) {
        const T dj = dout[j];
        const T* vj = vt.data() + j * S;
#pragma omp simd
        for (std::size_t u = 0; u < len; ++u) dp[u] += dj * vj[u];
      }
      T dot_pd = 0;
      for (std::size_t u = 0; u < len; ++u) dot_pd += pr[u] * dp[u];
      const T* q = base + t * 3 * D + h * HD;
      T* dq = dbase + t * 3 * D + h * HD;
      for (std::size_t u = 0; u < len; ++u) {
        const T w = pr[u];
        const T ds = w * (dp[u] - dot_pd) * scale;
        const T* k = base + u * 3 * D + D + h * HD;
        T* dk = dbase + u * 3 * D + D + h * HD;
        T* dv = dbase + u * 3 * D + 2 * D + h * HD;
#pragma omp simd
        for (std::size_t j = 0; j < HD; ++j) {
          dq[j] += ds * k[j];
          dk[j] += ds * q[j];
          dv[j] += w * dout[j];
        }
      }
    }
  }
}

template <typename T>
T gelu_tanh_arg(T x) {
  return static_cast<T>(kGeluC) * (x + static_cast<T>(0.044715) * x * x * x);
}

template <typename T>
T gelu_grad(T x, T th) {
  const T du = static_cast<T>(kGeluC) * (T(1) + static_cast<T>(3 * 0.044715) * x * x);
  return static_cast<T>(0.5) * (T(1) + th) + static_cast<T>(0.5) * x * (T(1) - th * th) * du;
}

}  // namespace

template <typename T>
struct Transformer<T>::BlockCache {
  std::vector<T> ln1_xhat, ln1_rstd, h1, qkv, att_p, att_out, x1, ln2_xhat, ln2_rstd, h2, up, th, act;
};

template <typename T>
struct Transformer<T>::Workspace {
  std::vector<BlockCache> blocks;
  std::vector<T> x_final, lnf_xhat, lnf_rstd, hf;
};

template <typename T>
Transformer<T>::Transformer(const ModelConfig& cfg) : cfg_(cfg), layout_(cfg), params_(layout_.total(), T(0)) {}

template <typename T>
void Transformer<T>::initialize(std::mt19937_64& rng, double std) {
  std::normal_distribution<double> normal(0.0, std);
  for (const auto& s : layout_.slots()) {
    T* d = params_.data() + s.offset;
    const bool is_gain = s.name.ends_with(".gamma");
    const bool is_bias = s.name.ends_with(".bias") || s.name.ends_with(".beta");
    for (std::size_t i = 0; i < s.size; ++i)
      d[i] = is_gain ? T(1) : is_bias ? T(0) : static_cast<T>(normal(rng));
  }
}

template <typename T>
LossTerms Transformer<T>::loss(const Batch& batch, double lambda, std::span<T> grad) {
  const std::size_t B = static_cast<std::size_t>(batch.batch);
  const std::size_t S = static_cast<std::size_t>(batch.seq_len);
  const std::size_t D = static_cast<std::size_t>(cfg_.d_model);
  const std::size_t H = static_cast<std::size_t>(cfg_.heads);
  const std::size_t HD = D / H;
  const std::size_t F = static_cast<std::size_t>(cfg_.d_ff);
  const std::size_t V = static_cast<std::size_t>(cfg_.vocab);
  const std::size_t N = B * S;
  const bool want_grad = !grad.empty();
  if (S > static_cast<std::size_t>(cfg_.seq_len)) throw Error("model: batch sequence longer than context");
  if (want_grad && grad.size() != params_.size()) throw Error("model: gradient buffer size mismatch");
  for (auto tok : batch.tokens)
    if (tok < 0 || static_cast<std::size_t>(tok) >= V) throw Error("model: token id out of vocabulary");

  const T* tok_emb = p("tok_emb");
  const T* pos_emb = p("pos_emb");
  const T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(HD)));

  Workspace ws;
  ws.blocks.resize(static_cast<std::size_t>(cfg_.layers));
  std::vector<T> x(N * D);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < S; ++t) {
      const std::size_t r = b * S + t;
      const auto tok = static_cast<std::size_t>(batch.tokens[r]);
      for (std::size_t j = 0; j < D; ++j) x[r * D + j] = tok_emb[tok * D + j] + pos_emb[t * D + j];
    }

  // ---- forward ----
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string pre = "blocks." + std::to_string(l) + ".";
    BlockCache& c = ws.blocks[static_cast<std::size_t>(l)];
    c.ln1_xhat.resize(N * D);
    c.ln1_rstd.resize(N);
    c.h1.resize(N * D);
    layernorm_forward(x.data(), p(pre + "ln1.gamma"), p(pre + "ln1.beta"), c.ln1_xhat.data(), c.ln1_rstd.data(),
                      c.h1.data(), N, D);
    c.qkv.resize(N * 3 * D);
    kernels::linear_forward(c.h1.data(), p(pre + "attn.qkv.weight"), p(pre + "attn.qkv.bias"), c.qkv.data(), N, D,
                            3 * D);
    c.att_p.assign(B * H * S * S, T(0));
    c.att_out.assign(N * D, T(0));
    attention_forward(c.qkv.data(), c.att_p.data(), c.att_out.data(), B, S, D, H, att_scale);
    std::vector<T> proj(N * D);
    kernels::linear_forward(c.att_out.data(), p(pre + "attn.proj.weight"), p(pre + "attn.proj.bias"), proj.data(), N,
                            D, D);
    c.x1.resize(N * D);
    for (std::size_t i = 0; i < N * D; ++i) c.x1[i] = x[i] + proj[i];
    c.ln2_xhat.resize(N * D);
    c.ln2_rstd.resize(N);
    c.h2.resize(N * D);
    layernorm_forward(c.x1.data(), p(pre + "ln2.gamma"), p(pre + "ln2.beta"), c.ln2_xhat.data(), c.ln2_rstd.data(),
                      c.h2.data(), N, D);
    c.up.resize(N * F);
    kernels::linear_forward(c.h2.data(), p(pre + "mlp.up.weight"), p(pre + "mlp.up.bias"), c.up.data(), N, D, F);
    c.act.resize(N * F);
    c.th.resize(N * F);
    for (std::size_t i = 0; i < N * F; ++i) c.th[i] = T(2) * gelu_tanh_arg(c.up[i]);
    exp_inplace(c.th.data(), N * F);
    for (std::size_t i = 0; i < N * F; ++i) {
      c.th[i] = T(1) - T(2) / (T(1) + c.th[i]);
      c.act[i] = static_cast<T>(0.5) * c.up[i] * (T(1) + c.th[i]);
    }
    std::vector<T> down(N * D);
    kernels::linear_forward(c.act.data(), p(pre + "mlp.down.weight"), p(pre + "mlp.down.bias"), down.data(), N, F, D);
    for (std::size_t i = 0; i < N * D; ++i) x[i] = c.x1[i] + down[i];
  }
  ws.x_final = x;
  ws.lnf_xhat.resize(N * D);
  ws.lnf_rstd.resize(N);
  ws.hf.resize(N * D);
  layernorm_forward(x.data(), p("ln_f.gamma"), p("ln_f.beta"), ws.lnf_xhat.data(), ws.lnf_rstd.data(), ws.hf.data(),
                    N, D);

  // ---- scored positions ----
  struct Scored {
    std::size_t row;
    std::size_t target;
    bool probe;
  };
  std::vector<Scored> scored;
  LossTerms terms;
  for (std::size_t b = 0; b < B; ++b) {
    const int ap = batch.answer_pos[b];
    if (ap >= 0) {
      const std::size_t r = b * S + static_cast<std::size_t>(ap);
      scored.push_back({r, static_cast<std::size_t>(batch.tokens[r + 1]), true});
      ++terms.probe_sequences;
    } else {
      for (std::size_t t = 0; t + 1 < S; ++t)
        scored.push_back({b * S + t, static_cast<std::size_t>(batch.tokens[b * S + t + 1]), false});
      terms.lm_tokens += static_cast<int>(S - 1);
    }
  }
  const std::size_t R = scored.size();
  std::vector<T> hs(R * D), logits(R * V);
  for (std::size_t i = 0; i < R; ++i)
    std::copy_n(ws.hf.data() + scored[i].row * D, D, hs.data() + i * D);
  kernels::linear_backward_input(hs.data(), tok_emb, logits.data(), R, V, D, false);

  const double w_lm = terms.lm_tokens > 0 ? 1.0 / terms.lm_tokens : 0.0;
  const double w_probe = terms.probe_sequences > 0 ? lambda / terms.probe_sequences : 0.0;
  std::vector<T> dlogits(want_grad ? R * V : 0);
  std::vector<T> e(V);
  double lm_sum = 0.0, probe_sum = 0.0;
  for (std::size_t i = 0; i < R; ++i) {
    const T* z = logits.data() + i * V;
    const std::size_t arg = static_cast<std::size_t>(std::max_element(z, z + V) - z);
    const T mx = z[arg];
    for (std::size_t v = 0; v < V; ++v) e[v] = z[v] - mx;
    exp_inplace(e.data(), V);
    double sum = 0.0;
    for (std::size_t v = 0; v < V; ++v) sum += static_cast<double>(e[v]);
    const double ce = std::log(sum) - static_cast<double>(z[scored[i].target] - mx);
    if (scored[i].probe) {
      probe_sum += ce;
      if (arg == scored[i].target) ++terms.probe_correct;
    } else {
      lm_sum += ce;
    }
    if (want_grad) {
      const double w = (scored[i].probe ? w_probe : w_lm) / sum;
      T* dz = dlogits.data() + i * V;
      for (std::size_t v = 0; v < V; ++v) dz[v] = static_cast<T>(w * static_cast<double>(e[v]));
      dz[scored[i].target] -= static_cast<T>(scored[i].probe ? w_probe : w_lm);
    }
  }
  terms.lm = terms.lm_tokens > 0 ? lm_sum / terms.lm_tokens : 0.0;
  terms.probe = terms.probe_sequences > 0 ? probe_sum / terms.probe_sequences : 0.0;
  terms.composite = terms.lm + lambda * terms.probe;
  if (!std::isfinite(terms.composite)) throw Error("model: non-finite loss");
  if (!want_grad) return terms;

  // ---- backward ----
  std::fill(grad.begin(), grad.end(), T(0));
  auto g = [&](const std::string& name) { return grad.data() + layout_.slot(name).offset; };
  T* d_tok = g("tok_emb");

  std::vector<T> dhs(R * D);
  kernels::linear_forward(dlogits.data(), tok_emb, static_cast<const T*>(nullptr), dhs.data(), R, V, D);
  kernels::linear_backward_weight(dlogits.data(), hs.data(), d_tok, static_cast<T*>(nullptr), R, V, D);
  std::vector<T> dhf(N * D, T(0));
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < D; ++j) dhf[scored[i].row * D + j] += dhs[i * D + j];

  std::vector<T> dx(N * D, T(0));
  layernorm_backward(dhf.data(), ws.lnf_xhat.data(), ws.lnf_rstd.data(), p("ln_f.gamma"), dx.data(), g("ln_f.gamma"),
                     g("ln_f.beta"), N, D);

  std::vector<T> dact(N * F), dh(N * D), datt(N * D), dqkv(N * 3 * D);
  for (int l = cfg_.layers - 1; l >= 0; --l) {
    const std::string pre = "blocks." + std::to_string(l) + ".";
    const BlockCache& c = ws.blocks[static_cast<std::size_t>(l)];
    // MLP: dx is dL/dx_out; the residual passes it straight to x1
    kernels::linear_backward_input(dx.data(), p(pre + "mlp.down.weight"), dact.data(), N, F, D, false);
    kernels::linear_backward_weight(c.act.data(), dx.data(), g(pre + "mlp.down.weight"), g(pre + "mlp.down.bias"), N,
                                    F, D);
    for (std::size_t i = 0; i < N * F; ++i) dact[i] *= gelu_grad(c.up[i], c.th[i]);
    kernels::linear_backward_input(dact.data(), p(pre + "mlp.up.weight"), dh.data(), N, D, F, false);
    kernels::linear_backward_weight(c.h2.data(), dact.data(), g(pre + "mlp.up.weight"), g(pre + "mlp.up.bias"), N, D,
                                    F);
    layernorm_backward(dh.data(), c.ln2_xhat.data(), c.ln2_rstd.data(), p(pre + "ln2.gamma"), dx.data(),
                       g(pre + "ln2.gamma"), g(pre + "ln2.beta"), N, D);
    // dx is now dL/dx1
    kernels::linear_backward_input(dx.data(), p(pre + "attn.proj.weight"), datt.data(), N, D, D, false);
    kernels::linear_backward_weight(c.att_out.data(), dx.data(), g(pre + "attn.proj.weight"),
                                    g(pre + "attn.proj.bias"), N, D, D);
    std::fill(dqkv.begin(), dqkv.end(), T(0));
    attention_backward(c.qkv.data(), c.att_p.data(), datt.data(), dqkv.data(), B, S, D, H, att_scale);
    kernels::linear_backward_input(dqkv.data(), p(pre + "attn.qkv.weight"), dh.data(), N, D, 3 * D, false);
    kernels::linear_backward_weight(c.h1.data(), dqkv.data(), g(pre + "attn.qkv.weight"), g(pre + "attn.qkv.bias"), N,
                                    D, 3 * D);
    layernorm_backward(dh.data(), c.ln1_xhat.data(), c.ln1_rstd.data(), p(pre + "ln1.gamma"), dx.data(),
                       g(pre + "ln1.gamma"), g(pre + "ln1.beta"), N, D);
  }
  T* d_pos = g("pos_emb");
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < S; ++t) {
      const std::size_t r = b * S + t;
      const auto tok = static_cast<std::size_t>(batch.tokens[r]);
      for (std::size_t j = 0; j < D; ++j) {
        d_tok[tok * D + j] += dx[r * D + j];
        d_pos[t * D + j] += dx[r * D + j];
      }
    }
  for (const T x_ : grad)
    if (!std::isfinite(static_cast<double>(x_))) throw Error("model: non-finite gradient");
  return terms;
}

template <typename T>
Checkpoint Transformer<T>::to_checkpoint(std::int64_t step) const {
  Checkpoint c;
  c.step = step;
  for (const auto& s : layout_.slots()) {
    Tensor t;
    t.shape = s.shape;
    t.data.resize(s.size);
    for (std::size_t i = 0; i < s.size; ++i) t.data[i] = static_cast<float>(params_[s.offset + i]);
    c.tensors.emplace(s.name, std::move(t));
  }
  return c;
}

template <typename T>
void Transformer<T>::load_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.tensors.size() != layout_.slots().size()) throw Error("model: checkpoint incompatible with model config");
  for (const auto& s : layout_.slots()) {
    auto it = ckpt.tensors.find(s.name);
    if (it == ckpt.tensors.end() || it->second.shape != s.shape)
      throw Error("model: checkpoint incompatible with model config at '" + s.name + "'");
    for (std::size_t i = 0; i < s.size; ++i) params_[s.offset + i] = static_cast<T>(it->second.data[i]);
  }
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace driftscope
