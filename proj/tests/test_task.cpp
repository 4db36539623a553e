#include <doctest.h>

#include "driftscope/common.hpp"
#include "driftscope/task.hpp"

using namespace driftscope;

TEST_CASE("task: default config is valid and scaled configs validate") {
  TaskConfig{}.validate(256, 64);
  for (auto [v, s] : {std::pair{32, 16}, {64, 32}, {256, 64}, {512, 128}}) TaskConfig::scaled(v, s).validate(v, s);
  TaskConfig bad;
  bad.train_gaps = {1, 5};
  CHECK_THROWS_AS(bad.validate(256, 64), Error);
  bad = TaskConfig{};
  bad.ood_gaps = {20, 30};
  CHECK_THROWS_AS(bad.validate(256, 64), Error);
  bad = TaskConfig{};
  bad.codewords = {180, 224};
  CHECK_THROWS_AS(bad.validate(256, 64), Error);
}

TEST_CASE("task: probe mixture extremes") {
  TaskConfig cfg;
  const MarkovCorpus corpus(cfg);
  auto rng = make_stream(1, "t");
  cfg.p_probe = 0.0;
  CHECK(generate_batch(cfg, corpus, rng, BatchMode::Train, 64, 64).probe_count() == 0);
  cfg.p_probe = 1.0;
  CHECK(generate_batch(cfg, corpus, rng, BatchMode::Train, 64, 64).probe_count() == 64);
  CHECK(generate_batch(cfg, corpus, rng, BatchMode::EvalLm, 8, 64).probe_count() == 0);
}

TEST_CASE("task: probe sequences repeat the codeword-value pair at the sampled gap") {
  TaskConfig cfg;
  const MarkovCorpus corpus(cfg);
  auto rng = make_stream(2, "t");
  for (BatchMode mode : {BatchMode::EvalId, BatchMode::EvalOod}) {
    const GapRange gaps = mode == BatchMode::EvalId ? cfg.train_gaps : cfg.ood_gaps;
    const Batch b = generate_batch(cfg, corpus, rng, mode, 200, 64);
    for (int s = 0; s < b.batch; ++s) {
      REQUIRE(b.is_probe(s));
      const int q = b.answer_pos[s];
      const auto code = b.token(s, q), value = b.token(s, q + 1);
      CHECK(code >= cfg.codewords.lo);
      CHECK(code < cfg.codewords.hi);
      CHECK(value >= cfg.values.lo);
      CHECK(value < cfg.values.hi);
      CHECK(b.probe_mask[static_cast<std::size_t>(s * 64 + q + 1)] == 1);
      bool found = false;
      for (int g = gaps.lo; g <= gaps.hi && !found; ++g)
        found = q - g >= 0 && b.token(s, q - g) == code && b.token(s, q - g + 1) == value;
      CHECK(found);
    }
  }
}

TEST_CASE("task: text tokens stay in range and batches are reproducible") {
  TaskConfig cfg;
  cfg.p_probe = 0.3;
  const MarkovCorpus corpus(cfg);
  auto r1 = make_stream(3, "train-batches");
  auto r2 = make_stream(3, "train-batches");
  const Batch a = generate_batch(cfg, corpus, r1, BatchMode::Train, 32, 64);
  const Batch b = generate_batch(cfg, corpus, r2, BatchMode::Train, 32, 64);
  CHECK(a.tokens == b.tokens);
  CHECK(a.answer_pos == b.answer_pos);
  for (int s = 0; s < a.batch; ++s)
    if (!a.is_probe(s))
      for (int t = 0; t < 64; ++t) {
        CHECK(a.token(s, t) >= cfg.text_tokens.lo);
        CHECK(a.token(s, t) < cfg.text_tokens.hi);
      }
  auto r3 = make_stream(4, "train-batches");
  CHECK(generate_batch(cfg, corpus, r3, BatchMode::Train, 32, 64).tokens != a.tokens);
}

TEST_CASE("streams: labels and seeds separate") {
  auto a = make_stream(1, "x"), b = make_stream(1, "y"), c = make_stream(2, "x"), d = make_stream(1, "x");
  const auto va = a();
  CHECK(va != b());
  CHECK(va != c());
  CHECK(va == d());
}
