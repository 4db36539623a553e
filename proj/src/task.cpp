#include "driftscope/task.hpp"

#include <algorithm>
#include <numeric>

#include "driftscope/common.hpp"

namespace driftscope {

namespace {

// uniform integer in [lo, hi] from raw 64-bit draws; std::uniform_int_distribution
// is implementation-defined, this is not
int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo + 1);
  return lo + static_cast<int>(rng() % span);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

TaskConfig TaskConfig::scaled(int vocab, int seq_len) {
  TaskConfig c;
  const int text_hi = vocab * 3 / 4;
  const int code_hi = vocab * 7 / 8;
  c.text_tokens = {0, text_hi};
  c.codewords = {text_hi, code_hi};
  c.values = {code_hi, vocab};
  c.train_gaps = {std::max(2, seq_len / 16), seq_len * 3 / 8};
  c.ood_gaps = {seq_len / 2, seq_len * 7 / 8};
  return c;
}

void TaskConfig::validate(int vocab, int seq_len) const {
  if (p_probe < 0.0 || p_probe > 1.0) throw Error("task: p_probe must lie in [0,1]");
  for (const TokenRange& r : {text_tokens, codewords, values})
    if (r.lo < 0 || r.hi > vocab || r.size() < 1) throw Error("task: token range outside vocabulary");
  auto overlaps = [](TokenRange a, TokenRange b) { return a.lo < b.hi && b.lo < a.hi; };
  if (overlaps(text_tokens, codewords) || overlaps(text_tokens, values) || overlaps(codewords, values))
    throw Error("task: token ranges overlap");
  for (const GapRange& g : {train_gaps, ood_gaps}) {
    if (g.lo < 2 || g.hi < g.lo) throw Error("task: invalid gap range (gaps start at 2)");
    if (g.hi + 2 > seq_len) throw Error("task: gap range exceeds sequence length");
  }
  if (!(train_gaps.hi < ood_gaps.lo || ood_gaps.hi < train_gaps.lo))
    throw Error("task: OOD gaps must be disjoint from training gaps");
  if (markov_branching < 1) throw Error("task: markov branching must be positive");
}

int Batch::probe_count() const {
  return static_cast<int>(std::count_if(answer_pos.begin(), answer_pos.end(), [](int p) { return p >= 0; }));
}

MarkovCorpus::MarkovCorpus(const TaskConfig& cfg)
    : range_(cfg.text_tokens), smoothing_(cfg.markov_smoothing), branching_(cfg.markov_branching) {
  auto rng = make_stream(cfg.corpus_seed, "markov-corpus");
  const int n = range_.size();
  const int k = std::min(branching_, n);
  branching_ = k;
  std::vector<std::int32_t> pool(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::iota(pool.begin(), pool.end(), range_.lo);
    // partial Fisher-Yates for k distinct successors
    for (int j = 0; j < k; ++j) std::swap(pool[static_cast<std::size_t>(j)], pool[static_cast<std::size_t>(uniform_int(rng, j, n - 1))]);
    double total = 0.0;
    std::vector<double> w(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
      w[static_cast<std::size_t>(j)] = 1.0 / (1.0 + j);
      total += w[static_cast<std::size_t>(j)];
    }
    double cum = 0.0;
    for (int j = 0; j < k; ++j) {
      successors_.push_back(pool[static_cast<std::size_t>(j)]);
      cum += w[static_cast<std::size_t>(j)] / total;
      cdf_.push_back(cum);
    }
    cdf_.back() = 1.0;
  }
}

void MarkovCorpus::sample(std::mt19937_64& rng, std::int32_t* out, int length) const {
  std::int32_t cur = uniform_int(rng, range_.lo, range_.hi - 1);
  for (int t = 0; t < length; ++t) {
    out[t] = cur;
    if (uniform01(rng) < smoothing_) {
      cur = uniform_int(rng, range_.lo, range_.hi - 1);
    } else {
      const double u = uniform01(rng);
      const std::size_t base = static_cast<std::size_t>(cur - range_.lo) * static_cast<std::size_t>(branching_);
      std::size_t j = 0;
      while (j + 1 < static_cast<std::size_t>(branching_) && u > cdf_[base + j]) ++j;
      cur = successors_[base + j];
    }
  }
}

Batch generate_batch(const TaskConfig& cfg, const MarkovCorpus& corpus, std::mt19937_64& rng, BatchMode mode,
                     int batch_size, int seq_len) {
  if (batch_size < 1) throw Error("generate_batch: batch size must be positive");
  for (const GapRange& g : {cfg.train_gaps, cfg.ood_gaps})
    if (g.hi + 2 > seq_len) throw Error("generate_batch: gap range exceeds sequence length");
  Batch b;
  b.batch = batch_size;
  b.seq_len = seq_len;
  b.tokens.resize(static_cast<std::size_t>(batch_size * seq_len));
  b.answer_pos.assign(static_cast<std::size_t>(batch_size), -1);
  b.probe_mask.assign(b.tokens.size(), 0);
  for (int s = 0; s < batch_size; ++s) {
    std::int32_t* row = b.tokens.data() + static_cast<std::size_t>(s * seq_len);
    corpus.sample(rng, row, seq_len);
    bool probe = false;
    GapRange gaps = cfg.train_gaps;
    switch (mode) {
      case BatchMode::Train:
        probe = cfg.p_probe >= 1.0 || (cfg.p_probe > 0.0 && uniform01(rng) < cfg.p_probe);
        break;
      case BatchMode::EvalId:
        probe = true;
        break;
      case BatchMode::EvalOod:
        probe = true;
        gaps = cfg.ood_gaps;
        break;
      case BatchMode::EvalLm:
        break;
    }
    if (!probe) continue;
    const int gap = uniform_int(rng, gaps.lo, gaps.hi);
    const int first = uniform_int(rng, 0, seq_len - 2 - gap);
    const int query = first + gap;
    const std::int32_t code = uniform_int(rng, cfg.codewords.lo, cfg.codewords.hi - 1);
    const std::int32_t value = uniform_int(rng, cfg.values.lo, cfg.values.hi - 1);
    row[first] = code;
    row[first + 1] = value;
    row[query] = code;
    row[query + 1] = value;
    b.answer_pos[static_cast<std::size_t>(s)] = query;
    b.probe_mask[static_cast<std::size_t>(s * seq_len + query + 1)] = 1;
  }
  return b;
}

}  // namespace driftscope
