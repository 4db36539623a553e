#pragma once

// Synthetic training data: a Markov-chain "story" corpus for the language-model
// objective and codeword -> value retrieval probe sequences.

#include <cstdint>
#include <random>
#include <vector>

namespace driftscope {

struct TokenRange {
  int lo = 0;  // inclusive
  int hi = 0;  // exclusive
  int size() const { return hi - lo; }
};

struct GapRange {
  int lo = 0;  // inclusive
  int hi = 0;  // inclusive
};

struct TaskConfig {
  double p_probe = 0.10;
  TokenRange text_tokens{0, 192};
  TokenRange codewords{192, 224};
  TokenRange values{224, 256};
  GapRange train_gaps{4, 24};
  GapRange ood_gaps{32, 56};
  std::uint64_t corpus_seed = 1234;
  int markov_branching = 6;
  double markov_smoothing = 0.02;

  // Vocabulary split 3/4 text, 1/8 codewords, 1/8 values; gaps scaled to the sequence length.
  static TaskConfig scaled(int vocab, int seq_len);
  void validate(int vocab, int seq_len) const;
};

enum class BatchMode { Train, EvalId, EvalOod, EvalLm };

struct Batch {
  int batch = 0;
  int seq_len = 0;
  std::vector<std::int32_t> tokens;       // batch x seq_len
  std::vector<std::int32_t> answer_pos;   // position whose prediction is scored; -1 for LM sequences
  std::vector<std::uint8_t> probe_mask;   // batch x seq_len, 1 at the value token position

  bool is_probe(int b) const { return answer_pos[static_cast<std::size_t>(b)] >= 0; }
  std::int32_t token(int b, int t) const { return tokens[static_cast<std::size_t>(b * seq_len + t)]; }
  int probe_count() const;
};

class MarkovCorpus {
 public:
  explicit MarkovCorpus(const TaskConfig& cfg);

  void sample(std::mt19937_64& rng, std::int32_t* out, int length) const;

 private:
  TokenRange range_;
  double smoothing_;
  std::vector<std::int32_t> successors_;  // per token, `branching_` successors
  std::vector<double> cdf_;               // cumulative successor weights
  int branching_;
};

Batch generate_batch(const TaskConfig& cfg, const MarkovCorpus& corpus, std::mt19937_64& rng, BatchMode mode,
                     int batch_size, int seq_len);

}  // namespace driftscope
