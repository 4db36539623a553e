#pragma once
// Central finite-difference gradient check for the 64-bit model.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "driftscope/common.hpp"
#include "driftscope/model.hpp"
#include "driftscope/task.hpp"

namespace fdcheck {

struct Report {
  std::size_t coordinates = 0;
  std::size_t slots_covered = 0;
  double max_rel_error = 0.0;
  std::string worst_slot;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
// derivative is near zero from being judged on round-off alone.
inline constexpr double kDenominatorFloor = 1e-4;

struct Setup {
  driftscope::ModelConfig cfg{2, 16, 2, 32, 32, 16};
  driftscope::TaskConfig task = driftscope::TaskConfig::scaled(32, 16);
  double lambda = 2.0;
  int batch = 4;
  int per_slot = 20;
  double h = 1e-5;
  std::uint64_t seed = 5;
};

inline Report run(const Setup& s) {
  driftscope::Transformer<double> model(s.cfg);
  auto rng = driftscope::make_stream(s.seed, "fd-init");
  model.initialize(rng, 0.3);
  // Move every parameter off its structured initial value so biases and gains
  // carry generic gradients too.
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (double& p : model.params()) p += jitter(rng);

  driftscope::TaskConfig task = s.task;
  task.p_probe = 0.5;
  const driftscope::MarkovCorpus corpus(task);
  auto brng = driftscope::make_stream(s.seed, "fd-batch");
  driftscope::Batch batch =
      driftscope::generate_batch(task, corpus, brng, driftscope::BatchMode::Train, s.batch, s.cfg.seq_len);
  // Guarantee both sequence kinds are present.
  batch.answer_pos[0] = -1;
  if (batch.answer_pos[1] < 0) {
    const auto probe = driftscope::generate_batch(task, corpus, brng, driftscope::BatchMode::EvalId, 1, s.cfg.seq_len);
    std::copy(probe.tokens.begin(), probe.tokens.end(), batch.tokens.begin() + s.cfg.seq_len);
    batch.answer_pos[1] = probe.answer_pos[0];
  }

  std::vector<double> grad(model.params().size());
  model.loss(batch, s.lambda, grad);

  Report rep;
  for (const auto& slot : model.layout().slots()) {
    std::vector<std::size_t> idx(slot.size);
    for (std::size_t i = 0; i < slot.size; ++i) idx[i] = slot.offset + i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(s.per_slot)));
    ++rep.slots_covered;
    for (std::size_t i : idx) {
      double& p = model.params()[i];
      const double saved = p;
      p = saved + s.h;
      const double up = model.loss(batch, s.lambda).composite;
      p = saved - s.h;
      const double down = model.loss(batch, s.lambda).composite;
      p = saved;
      const double numeric = (up - down) / (2.0 * s.h);
      const double denom = std::max({std::abs(numeric), std::abs(grad[i]), kDenominatorFloor});
      const double rel = std::abs(numeric - grad[i]) / denom;
      ++rep.coordinates;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_slot = slot.name;
        rep.worst_analytic = grad[i];
        rep.worst_numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace fdcheck
