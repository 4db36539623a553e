#include "driftscope/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "driftscope/common.hpp"
#include "driftscope/linalg.hpp"

namespace driftscope {

namespace fs = std::filesystem;

namespace {

constexpr int kEvalChunk = 64;

Json range_json(int lo, int hi) { return Json::array({lo, hi}); }

std::pair<int, int> range_from(const Json& j) {
  if (!j.is_array() || j.size() != 2) throw Error("config: expected a [lo, hi] pair");
  return {j[0].get<int>(), j[1].get<int>()};
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  task.validate(model.vocab, model.seq_len);
  optimizer.validate();
  if (steps < 1) throw Error("train: steps must be positive");
  if (ckpt_every < 1) throw Error("train: checkpoint interval must be positive");
  if (batch_size < 1 || accumulation < 1) throw Error("train: batch size and accumulation must be positive");
  if (!(lambda0 >= 0.0) || !(lambda_factor >= 0.0)) throw Error("train: lambda must be non-negative");
  if (switch_fraction && !(*switch_fraction > 0.0 && *switch_fraction <= 1.0))
    throw Error("train: switch fraction must lie in (0,1]");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw Error("train: warmup fraction must lie in [0,1)");
  if (!(init_std > 0.0)) throw Error("train: init std must be positive");
  if (eval_id < 1 || eval_ood < 1 || eval_lm < 1) throw Error("train: evaluation set sizes must be positive");
}

std::optional<int> TrainConfig::switch_step() const {
  if (!switch_fraction) return std::nullopt;
  return static_cast<int>(std::lround(*switch_fraction * steps));
}

double TrainConfig::lambda_at(std::int64_t step) const {
  const auto sw = switch_step();
  return sw && step >= *sw ? lambda0 * lambda_factor : lambda0;
}

TrainConfig TrainConfig::resolved() const {
  TrainConfig c = *this;
  c.optimizer.total_steps = steps;
  c.optimizer.warmup_steps = static_cast<int>(std::lround(warmup_fraction * steps));
  return c;
}

Json TrainConfig::to_json() const {
  Json j;
  j["model"] = {{"layers", model.layers}, {"d_model", model.d_model}, {"heads", model.heads},
                {"d_ff", model.d_ff},     {"vocab", model.vocab},       {"seq_len", model.seq_len},
                {"parameters", model.parameter_count()}};
  j["task"] = {{"p_probe", task.p_probe},
               {"text_tokens", range_json(task.text_tokens.lo, task.text_tokens.hi)},
               {"codewords", range_json(task.codewords.lo, task.codewords.hi)},
               {"values", range_json(task.values.lo, task.values.hi)},
               {"train_gaps", range_json(task.train_gaps.lo, task.train_gaps.hi)},
               {"ood_gaps", range_json(task.ood_gaps.lo, task.ood_gaps.hi)},
               {"corpus_seed", task.corpus_seed},
               {"markov_branching", task.markov_branching},
               {"markov_smoothing", task.markov_smoothing}};
  j["optimizer"] = {{"kind", to_string(optimizer.kind)},
                    {"lr", optimizer.lr},
                    {"warmup_steps", optimizer.warmup_steps},
                    {"total_steps", optimizer.total_steps},
                    {"floor_fraction", optimizer.floor_fraction},
                    {"beta1", optimizer.beta1},
                    {"beta2", optimizer.beta2},
                    {"eps", optimizer.eps},
                    {"weight_decay", optimizer.weight_decay},
                    {"coupling", to_string(optimizer.coupling)},
                    {"momentum", optimizer.momentum},
                    {"clip", optimizer.clip}};
  j["steps"] = steps;
  j["ckpt_every"] = ckpt_every;
  j["batch_size"] = batch_size;
  j["accumulation"] = accumulation;
  j["seed"] = seed;
  j["lambda0"] = lambda0;
  j["lambda_factor"] = lambda_factor;
  j["switch_fraction"] = switch_fraction ? Json(*switch_fraction) : Json(nullptr);
  j["switch_step"] = switch_step() ? Json(*switch_step()) : Json(nullptr);
  j["warmup_fraction"] = warmup_fraction;
  j["init_std"] = init_std;
  j["eval_id"] = eval_id;
  j["eval_ood"] = eval_ood;
  j["eval_lm"] = eval_lm;
  return j;
}

TrainConfig TrainConfig::from_json(const Json& j) {
  TrainConfig c;
  try {
    const Json& m = j.at("model");
    c.model.layers = m.at("layers");
    c.model.d_model = m.at("d_model");
    c.model.heads = m.at("heads");
    c.model.d_ff = m.at("d_ff");
    c.model.vocab = m.at("vocab");
    c.model.seq_len = m.at("seq_len");
    const Json& t = j.at("task");
    c.task.p_probe = t.at("p_probe");
    std::tie(c.task.text_tokens.lo, c.task.text_tokens.hi) = range_from(t.at("text_tokens"));
    std::tie(c.task.codewords.lo, c.task.codewords.hi) = range_from(t.at("codewords"));
    std::tie(c.task.values.lo, c.task.values.hi) = range_from(t.at("values"));
    std::tie(c.task.train_gaps.lo, c.task.train_gaps.hi) = range_from(t.at("train_gaps"));
    std::tie(c.task.ood_gaps.lo, c.task.ood_gaps.hi) = range_from(t.at("ood_gaps"));
    c.task.corpus_seed = t.at("corpus_seed");
    c.task.markov_branching = t.at("markov_branching");
    c.task.markov_smoothing = t.at("markov_smoothing");
    const Json& o = j.at("optimizer");
    c.optimizer.kind = parse_optimizer_kind(o.at("kind"));
    c.optimizer.lr = o.at("lr");
    c.optimizer.warmup_steps = o.at("warmup_steps");
    c.optimizer.total_steps = o.at("total_steps");
    c.optimizer.floor_fraction = o.at("floor_fraction");
    c.optimizer.beta1 = o.at("beta1");
    c.optimizer.beta2 = o.at("beta2");
    c.optimizer.eps = o.at("eps");
    c.optimizer.weight_decay = o.at("weight_decay");
    c.optimizer.coupling = parse_decay_coupling(o.at("coupling"));
    c.optimizer.momentum = o.at("momentum");
    c.optimizer.clip = o.at("clip");
    c.steps = j.at("steps");
    c.ckpt_every = j.at("ckpt_every");
    c.batch_size = j.at("batch_size");
    c.accumulation = j.at("accumulation");
    c.seed = j.at("seed");
    c.lambda0 = j.at("lambda0");
    c.lambda_factor = j.at("lambda_factor");
    if (j.at("switch_fraction").is_null())
      c.switch_fraction.reset();
    else
      c.switch_fraction = j.at("switch_fraction").get<double>();
    c.warmup_fraction = j.at("warmup_fraction");
    c.init_std = j.at("init_std");
    c.eval_id = j.at("eval_id");
    c.eval_ood = j.at("eval_ood");
    c.eval_lm = j.at("eval_lm");
  } catch (const Json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------

Evaluator::Evaluator(const TrainConfig& cfg, const MarkovCorpus& corpus) {
  const int S = cfg.model.seq_len;
  auto fill = [&](std::vector<Batch>& out, int total, BatchMode mode, const char* label) {
    auto rng = make_stream(cfg.task.corpus_seed, label);
    for (int done = 0; done < total; done += kEvalChunk)
      out.push_back(generate_batch(cfg.task, corpus, rng, mode, std::min(kEvalChunk, total - done), S));
  };
  fill(id_, cfg.eval_id, BatchMode::EvalId, "eval-id");
  fill(ood_, cfg.eval_ood, BatchMode::EvalOod, "eval-ood");
  fill(lm_, cfg.eval_lm, BatchMode::EvalLm, "eval-lm");
}

EvalRecord Evaluator::evaluate(Transformer<float>& model, std::int64_t step, double lambda, double lr) const {
  EvalRecord r;
  r.step = step;
  r.lambda = lambda;
  r.lr = lr;
  auto accuracy = [&model](const std::vector<Batch>& set) {
    long correct = 0, total = 0;
    for (const Batch& b : set) {
      const LossTerms t = model.loss(b, 1.0);
      correct += t.probe_correct;
      total += t.probe_sequences;
    }
    return static_cast<double>(correct) / static_cast<double>(total);
  };
  r.p_id = accuracy(id_);
  r.p_ood = accuracy(ood_);
  double sum = 0.0;
  long tokens = 0;
  for (const Batch& b : lm_) {
    const LossTerms t = model.loss(b, 0.0);
    sum += t.lm * t.lm_tokens;
    tokens += t.lm_tokens;
  }
  r.val_loss = sum / static_cast<double>(tokens);
  return r;
}

std::string eval_csv(std::span<const EvalRecord> records) {
  CsvTable t({"step", "val_loss", "p_id", "p_ood", "lambda", "lr"});
  for (const auto& r : records)
    t.row({format_int(r.step), format_double(r.val_loss), format_double(r.p_id), format_double(r.p_ood),
           format_double(r.lambda), format_double(r.lr)});
  return t.str();
}

std::vector<EvalRecord> parse_eval_csv(const std::string& text) {
  std::vector<EvalRecord> out;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "step,val_loss,p_id,p_ood,lambda,lr") throw Error("eval.csv: unexpected header");
      header = true;
      continue;
    }
    EvalRecord r;
    long long step = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf,%lf", &step, &r.val_loss, &r.p_id, &r.p_ood, &r.lambda,
                    &r.lr) != 6)
      throw Error("eval.csv: malformed row '" + line + "'");
    r.step = step;
    out.push_back(r);
  }
  if (!header) throw Error("eval.csv: missing header");
  return out;
}

std::string checkpoint_name(std::int64_t step) { return "ckpt_" + std::to_string(step) + ".dsck"; }

TrainResult train(const TrainConfig& cfg_in, const fs::path& out_dir, const EvalObserver& observer) {
  const TrainConfig cfg = cfg_in.resolved();
  cfg.validate();
  fs::create_directories(out_dir);
  write_text_file(out_dir / "config.json", cfg.to_json().dump(2) + "\n");

  const MarkovCorpus corpus(cfg.task);
  Transformer<float> model(cfg.model);
  {
    auto init_rng = make_stream(cfg.seed, "init");
    model.initialize(init_rng, cfg.init_std);
  }
  Optimizer<float> opt(cfg.optimizer, model.params().size(), model.layout().decay_mask());
  auto batch_rng = make_stream(cfg.seed, "train-batches");
  const Evaluator evaluator(cfg, corpus);

  TrainResult result;
  auto checkpoint = [&](std::int64_t step) {
    const fs::path path = out_dir / checkpoint_name(step);
    write_checkpoint(model.to_checkpoint(step), path);
    result.checkpoints.push_back(path);
    result.records.push_back(evaluator.evaluate(model, step, cfg.lambda_at(step), cfg.optimizer.lr_at(step)));
    write_text_file(out_dir / "eval.csv", eval_csv(result.records));
    if (observer) observer(result.records.back());
  };
  checkpoint(0);

  const std::size_t n = model.params().size();
  std::vector<float> grad(n), micro(cfg.accumulation > 1 ? n : 0);
  for (int step = 1; step <= cfg.steps; ++step) {
    const double lambda = cfg.lambda_at(step);
    for (int a = 0; a < cfg.accumulation; ++a) {
      const Batch batch = generate_batch(cfg.task, corpus, batch_rng, BatchMode::Train, cfg.batch_size,
                                         cfg.model.seq_len);
      try {
        if (cfg.accumulation == 1) {
          model.loss(batch, lambda, grad);
        } else {
          model.loss(batch, lambda, micro);
          const float w = 1.0f / static_cast<float>(cfg.accumulation);
          for (std::size_t i = 0; i < n; ++i) grad[i] = (a == 0 ? 0.0f : grad[i]) + w * micro[i];
        }
      } catch (const Error& e) {
        Json d = {{"step", step}, {"micro_batch", a}, {"lambda", lambda}, {"lr", cfg.optimizer.lr_at(step)},
                  {"error", e.what()}};
        write_text_file(out_dir / "divergence.json", d.dump(2) + "\n");
        throw Error("train: diverged at step " + std::to_string(step) + " (micro-batch " + std::to_string(a) +
                    "): " + e.what());
      }
    }
    opt.step(model.params(), grad, cfg.optimizer.lr_at(step));
    if (step % cfg.ckpt_every == 0 || step == cfg.steps) checkpoint(step);
  }
  return result;
}

// ---------------------------------------------------------------------------

void ReheatConfig::validate() const {
  if (lrs.empty()) throw Error("reheat: at least one learning rate is required");
  for (double lr : lrs)
    if (!(lr >= 0.0)) throw Error("reheat: learning rates must be non-negative");
  if (!(lambda_new > 0.0)) throw Error("reheat: lambda must be positive");
  if (steps < 1) throw Error("reheat: steps must be positive");
  if (eval_every < 0) throw Error("reheat: eval interval must be non-negative");
}

int ReheatConfig::eval_interval() const { return eval_every > 0 ? eval_every : std::max(1, steps / 20); }

std::string lr_dir_name(double lr) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "lr_%g", lr);
  return buf;
}

std::string backbone_track_csv(std::span<const BackboneTrackPoint> track) {
  CsvTable t({"step", "a", "residual_norm", "drift_norm"});
  for (const auto& p : track)
    t.row({format_int(p.step), format_double(p.a), format_double(p.residual_norm), format_double(p.drift_norm)});
  return t.str();
}

std::vector<ReheatSeries> reheat(const Checkpoint& source, const TrainConfig& base_in, const ReheatConfig& rcfg,
                                 std::span<const double> anchor_trunk, std::span<const double> backbone,
                                 const fs::path& out_dir, const EvalObserver& observer) {
  rcfg.validate();
  const TrainConfig base = base_in.resolved();
  base.validate();
  if (anchor_trunk.size() != backbone.size()) throw Error("reheat: anchor and backbone dimensions differ");
  if (std::abs(norm(backbone) - 1.0) > 1e-8) throw Error("reheat: backbone must be a unit vector");

  const MarkovCorpus corpus(base.task);
  const Evaluator evaluator(base, corpus);
  Transformer<float> model(base.model);
  model.load_checkpoint(source);
  if (trunk_dimension(source, TrunkSelector{}) != backbone.size())
    throw Error("reheat: backbone dimension does not match the checkpoint trunk");

  std::vector<ReheatSeries> out;
  for (double lr : rcfg.lrs) {
    model.load_checkpoint(source);
    OptimizerConfig oc = base.optimizer;
    oc.lr = lr;
    oc.warmup_steps = 0;
    oc.total_steps = rcfg.steps;
    Optimizer<float> opt(oc, model.params().size(), model.layout().decay_mask());
    auto batch_rng = make_stream(rcfg.seed, "reheat-batches");

    ReheatSeries series;
    series.lr = lr;
    series.dir = out_dir / lr_dir_name(lr);
    fs::create_directories(series.dir);
    Json meta = {{"source_step", source.step}, {"lr", lr},           {"lambda", rcfg.lambda_new},
                 {"steps", rcfg.steps},        {"seed", rcfg.seed},  {"eval_every", rcfg.eval_interval()},
                 {"optimizer", to_string(oc.kind)}};
    write_text_file(series.dir / "reheat.json", meta.dump(2) + "\n");

    auto record = [&](int step) {
      series.records.push_back(evaluator.evaluate(model, step, rcfg.lambda_new, oc.lr_at(step)));
      const std::vector<double> theta = flatten_trunk(model.to_checkpoint(step), TrunkSelector{});
      std::vector<double> delta(theta.size());
      for (std::size_t i = 0; i < theta.size(); ++i) delta[i] = theta[i] - anchor_trunk[i];
      BackboneTrackPoint p;
      p.step = step;
      p.a = dot(delta, backbone);
      p.drift_norm = norm(delta);
      axpy(-p.a, backbone, delta);
      p.residual_norm = norm(delta);
      series.track.push_back(p);
      write_text_file(series.dir / "eval.csv", eval_csv(series.records));
      write_text_file(series.dir / "backbone.csv", backbone_track_csv(series.track));
      if (observer) observer(series.records.back());
    };
    record(0);
    std::vector<float> grad(model.params().size());
    const int every = rcfg.eval_interval();
    for (int step = 1; step <= rcfg.steps; ++step) {
      const Batch batch = generate_batch(base.task, corpus, batch_rng, BatchMode::Train, base.batch_size,
                                         base.model.seq_len);
      model.loss(batch, rcfg.lambda_new, grad);
      opt.step(model.params(), grad, oc.lr_at(step));
      if (step % every == 0 || step == rcfg.steps) record(step);
    }
    out.push_back(std::move(series));
  }
  return out;
}

}  // namespace driftscope
