#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftscope/model.hpp"
#include "driftscope/optimizer.hpp"
#include "driftscope/report.hpp"
#include "driftscope/task.hpp"

namespace driftscope {

struct TrainConfig {
  ModelConfig model;
  TaskConfig task;
  OptimizerConfig optimizer;
  int steps = 2000;
  int ckpt_every = 40;
  int batch_size = 16;
  int accumulation = 1;  // micro-batches averaged per optimizer step
  std::uint64_t seed = 42;
  double lambda0 = 2.0;
  double lambda_factor = 2.0;
  std::optional<double> switch_fraction = 0.4;  // nullopt disables the switch
  double warmup_fraction = 0.15;
  double init_std = 0.02;
  int eval_id = 256;
  int eval_ood = 512;
  int eval_lm = 32;

  void validate() const;
  std::optional<int> switch_step() const;
  // lambda used by the gradient of optimizer step `step` and reported at checkpoint `step`.
  double lambda_at(std::int64_t step) const;
  // Copy with the optimizer schedule filled in from steps and warmup_fraction.
  TrainConfig resolved() const;

  Json to_json() const;
  static TrainConfig from_json(const Json& j);
};

struct EvalRecord {
  std::int64_t step = 0;
  double val_loss = 0.0;
  double p_id = 0.0;
  double p_ood = 0.0;
  double lambda = 0.0;
  double lr = 0.0;
};

// Fixed evaluation sets drawn from the task's corpus seed, so every run and every
// reheat on the same task is scored on identical sequences.
class Evaluator {
 public:
  Evaluator(const TrainConfig& cfg, const MarkovCorpus& corpus);
  EvalRecord evaluate(Transformer<float>& model, std::int64_t step, double lambda, double lr) const;

 private:
  std::vector<Batch> id_, ood_, lm_;
};

std::string eval_csv(std::span<const EvalRecord> records);
std::vector<EvalRecord> parse_eval_csv(const std::string& text);
std::string checkpoint_name(std::int64_t step);

struct TrainResult {
  std::vector<EvalRecord> records;
  std::vector<std::filesystem::path> checkpoints;
};

using EvalObserver = std::function<void(const EvalRecord&)>;

// Writes config.json, ckpt_<step>.dsck at step 0 and every ckpt_every steps, and eval.csv.
// A non-finite loss writes divergence.json and throws.
TrainResult train(const TrainConfig& cfg, const std::filesystem::path& out_dir, const EvalObserver& observer = {});

struct ReheatConfig {
  std::vector<double> lrs{1e-3, 6e-4, 3e-4};
  double lambda_new = 4.0;
  int steps = 400;
  int eval_every = 0;  // 0: steps / 20
  std::uint64_t seed = 42;

  void validate() const;
  int eval_interval() const;
};

struct BackboneTrackPoint {
  std::int64_t step = 0;
  double a = 0.0;
  double residual_norm = 0.0;
  double drift_norm = 0.0;
};

struct ReheatSeries {
  double lr = 0.0;
  std::filesystem::path dir;
  std::vector<EvalRecord> records;
  std::vector<BackboneTrackPoint> track;
};

// Restarts from `source` with a fresh optimizer of the base kind, lambda fixed at
// lambda_new and a cosine schedule (no warmup) over the reheat horizon, once per lr.
// `anchor_trunk` and the unit `backbone` define a(t) and ||r(t)|| for the trunk drift.
// Sub-runs go to out_dir/lr_<lr>/.
std::vector<ReheatSeries> reheat(const Checkpoint& source, const TrainConfig& base, const ReheatConfig& rcfg,
                                 std::span<const double> anchor_trunk, std::span<const double> backbone,
                                 const std::filesystem::path& out_dir, const EvalObserver& observer = {});

std::string lr_dir_name(double lr);
std::string backbone_track_csv(std::span<const BackboneTrackPoint> track);

}  // namespace driftscope
