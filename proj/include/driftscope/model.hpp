#pragma once

// Decoder-only pre-LN transformer with tied input/output embeddings and
// hand-written reverse-mode gradients. Templated on the scalar type so the same
// code runs in float for training and in double for gradient checks.

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "driftscope/checkpoint.hpp"
#include "driftscope/task.hpp"

namespace driftscope {

struct ModelConfig {
  int layers = 2;
  int d_model = 64;
  int heads = 4;
  int d_ff = 128;
  int vocab = 256;
  int seq_len = 64;

  void validate() const;
  std::size_t parameter_count() const;
  // Attention QKV/output and MLP up/down weight matrices over all blocks.
  std::size_t trunk_parameter_count() const;
  std::size_t block_trunk_parameter_count() const;
};

struct ParamSlot {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool trunk = false;  // weight matrix that receives weight decay and enters trunk analysis
};

class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& cfg);

  const std::vector<ParamSlot>& slots() const { return slots_; }
  const ParamSlot& slot(const std::string& name) const;
  std::size_t total() const { return total_; }
  // 1 for trunk weight coordinates, 0 elsewhere.
  std::vector<std::uint8_t> decay_mask() const;

 private:
  std::vector<ParamSlot> slots_;
  std::map<std::string, std::size_t> index_;
  std::size_t total_ = 0;
};

struct LossTerms {
  double composite = 0.0;
  double lm = 0.0;
  double probe = 0.0;
  int lm_tokens = 0;
  int probe_sequences = 0;
  int probe_correct = 0;
};

template <typename T>
class Transformer {
 public:
  explicit Transformer(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::vector<T>& params() { return params_; }
  const std::vector<T>& params() const { return params_; }

  // Gaussian(0, std) weights and embeddings, zero biases, unit layer-norm gains.
  void initialize(std::mt19937_64& rng, double std = 0.02);

  // Composite loss L_LM + lambda * L_probe. L_LM averages next-token cross-entropy over
  // language-model sequences; L_probe averages the answer-position cross-entropy over
  // probe sequences. When `grad` is non-empty it receives dL/dtheta (overwritten).
  LossTerms loss(const Batch& batch, double lambda, std::span<T> grad = {});

  Checkpoint to_checkpoint(std::int64_t step) const;
  void load_checkpoint(const Checkpoint& ckpt);

 private:
  struct BlockCache;
  struct Workspace;

  T* p(const std::string& name) { return params_.data() + layout_.slot(name).offset; }
  const T* p(const std::string& name) const { return params_.data() + layout_.slot(name).offset; }

  ModelConfig cfg_;
  ParamLayout layout_;
  std::vector<T> params_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace driftscope
