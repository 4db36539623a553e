#include <doctest.h>

#include <algorithm>

#include "driftscope/checkpoint.hpp"
#include "driftscope/common.hpp"
#include "driftscope/report.hpp"
#include "driftscope/trainer.hpp"
#include "test_util.hpp"

using namespace driftscope;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny() {
  TrainConfig c;
  c.model = {1, 16, 2, 32, 32, 16};
  c.task = TaskConfig::scaled(32, 16);
  c.steps = 40;
  c.ckpt_every = 10;
  c.batch_size = 8;
  c.eval_id = 32;
  c.eval_ood = 32;
  c.eval_lm = 8;
  return c;
}

std::string bytes_of(const fs::path& p) { return read_text_file(p); }

}  // namespace

TEST_CASE("train config: lambda switch and schedule resolution") {
  TrainConfig c;
  CHECK(c.switch_step() == 800);
  CHECK(c.lambda_at(0) == 2.0);
  CHECK(c.lambda_at(799) == 2.0);
  CHECK(c.lambda_at(800) == 4.0);
  CHECK(c.lambda_at(2000) == 4.0);
  c.switch_fraction.reset();
  CHECK_FALSE(c.switch_step().has_value());
  CHECK(c.lambda_at(2000) == 2.0);
  const TrainConfig r = TrainConfig{}.resolved();
  CHECK(r.optimizer.total_steps == 2000);
  CHECK(r.optimizer.warmup_steps == 300);
}

TEST_CASE("train config: JSON round trip and validation") {
  TrainConfig c = tiny();
  c.optimizer.kind = OptimizerKind::SgdwNesterov;
  c.optimizer.momentum = 0.9;
  c.optimizer.lr = 0.1 + 0.2;  // not exactly representable as a short decimal
  c.switch_fraction.reset();
  c.seed = 123456789012345ULL;
  const Json j = c.to_json();
  const TrainConfig back = TrainConfig::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(back.optimizer.lr == c.optimizer.lr);
  CHECK_FALSE(back.switch_fraction.has_value());
  TrainConfig bad = tiny();
  bad.ckpt_every = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = tiny();
  bad.model.seq_len = 8;  // too short for the gap ranges
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("eval csv round trip") {
  std::vector<EvalRecord> recs{{0, 5.5, 0.0, 0.0, 2.0, 0.0}, {40, 1.0 / 3.0, 0.25, 0.125, 4.0, 1e-3 / 7}};
  const auto back = parse_eval_csv(eval_csv(recs));
  REQUIRE(back.size() == 2);
  CHECK(back[1].val_loss == recs[1].val_loss);
  CHECK(back[1].lr == recs[1].lr);
  CHECK(checkpoint_name(40) == "ckpt_40.dsck");
}

TEST_CASE("train: writes the expected artifacts and is byte-deterministic") {
  const auto a = testutil::scratch("train_a"), b = testutil::scratch("train_b");
  const TrainConfig c = tiny();
  const TrainResult ra = train(c, a);
  train(c, b);
  CHECK(ra.checkpoints.size() == 5);
  CHECK(ra.records.size() == 5);
  CHECK(ra.records.front().val_loss > ra.records.back().val_loss);
  for (int s = 0; s <= 40; s += 10) {
    const std::string n = checkpoint_name(s);
    REQUIRE(fs::exists(a / n));
    CHECK(bytes_of(a / n) == bytes_of(b / n));
    CHECK(read_checkpoint_step(a / n) == s);
  }
  CHECK(bytes_of(a / "eval.csv") == bytes_of(b / "eval.csv"));
  CHECK(bytes_of(a / "config.json") == bytes_of(b / "config.json"));

  TrainConfig other = c;
  other.seed = 43;
  const auto d = testutil::scratch("train_c");
  train(other, d);
  CHECK(bytes_of(a / "ckpt_40.dsck") != bytes_of(d / "ckpt_40.dsck"));
}

TEST_CASE("train: gradient accumulation averages micro-batches") {
  TrainConfig c = tiny();
  c.steps = 10;
  c.accumulation = 2;
  const auto dir = testutil::scratch("train_accum");
  const TrainResult r = train(c, dir);
  CHECK(r.records.back().step == 10);
  CHECK(std::isfinite(r.records.back().val_loss));
}

TEST_CASE("train: divergence is reported and recorded") {
  TrainConfig c = tiny();
  c.optimizer.kind = OptimizerKind::Sgd;
  c.optimizer.coupling = DecayCoupling::L2;
  c.optimizer.lr = 1e12;
  c.optimizer.clip = 1e300;
  c.warmup_fraction = 0.0;
  const auto dir = testutil::scratch("train_diverge");
  CHECK_THROWS_WITH_AS(train(c, dir), doctest::Contains("diverged"), Error);
  CHECK(fs::exists(dir / "divergence.json"));
}

TEST_CASE("reheat: zero learning rate keeps every evaluation identical") {
  const auto src = testutil::scratch("reheat_src"), out = testutil::scratch("reheat_out");
  const TrainConfig c = tiny();
  train(c, src);
  const Checkpoint last = read_checkpoint(src / "ckpt_40.dsck");
  const Checkpoint first = read_checkpoint(src / "ckpt_0.dsck");
  const auto anchor = flatten_trunk(first, TrunkSelector{});
  auto drift = flatten_trunk(last, TrunkSelector{});
  for (std::size_t i = 0; i < drift.size(); ++i) drift[i] -= anchor[i];
  double n = 0.0;
  for (double x : drift) n += x * x;
  for (double& x : drift) x /= std::sqrt(n);

  ReheatConfig rc;
  rc.lrs = {0.0, 1e-3};
  rc.steps = 20;
  rc.eval_every = 5;
  const auto series = reheat(last, c, rc, anchor, drift, out);
  REQUIRE(series.size() == 2);
  const auto& frozen = series[0];
  REQUIRE(frozen.records.size() == 5);
  for (const auto& r : frozen.records) {
    CHECK(r.p_ood == frozen.records.front().p_ood);
    CHECK(r.val_loss == frozen.records.front().val_loss);
    CHECK(r.lambda == 4.0);
  }
  for (const auto& p : frozen.track) CHECK(p.a == frozen.track.front().a);
  CHECK(fs::exists(frozen.dir / "eval.csv"));
  CHECK(fs::exists(frozen.dir / "backbone.csv"));
  CHECK(fs::exists(frozen.dir / "reheat.json"));
  CHECK(series[1].records.back().val_loss != frozen.records.back().val_loss);
  CHECK(lr_dir_name(6e-4) != lr_dir_name(3e-4));
}

TEST_CASE("reheat: from initialization with a large probe weight learns the probe") {
  const auto src = testutil::scratch("reheat0_src"), out = testutil::scratch("reheat0_out");
  TrainConfig zero = tiny();
  zero.model.layers = 2;
  zero.task.p_probe = 0.5;
  zero.steps = 10;
  zero.ckpt_every = 10;
  train(zero, src);
  const Checkpoint init = read_checkpoint(src / "ckpt_0.dsck");
  const auto anchor = flatten_trunk(init, TrunkSelector{});
  std::vector<double> axis(anchor.size(), 0.0);
  axis[0] = 1.0;
  ReheatConfig rc;
  rc.lrs = {3e-3};
  rc.lambda_new = 8.0;
  rc.steps = 400;
  rc.eval_every = 50;
  const auto series = reheat(init, zero, rc, anchor, axis, out);
  const double chance = 1.0 / zero.task.values.size();
  double best = 0.0;
  for (const auto& r : series[0].records) best = std::max(best, r.p_id);
  CHECK(series[0].records.front().p_id <= 2 * chance);
  CHECK(best > 2 * chance);
}
