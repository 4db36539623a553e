#include "driftscope/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

#include "driftscope/backbone.hpp"
#include "driftscope/checkpoint.hpp"
#include "driftscope/common.hpp"
#include "driftscope/curvature.hpp"
#include "driftscope/kernels.hpp"
#include "driftscope/linalg.hpp"
#include "driftscope/pca.hpp"
#include "driftscope/report.hpp"
#include "driftscope/trainer.hpp"

namespace driftscope::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : Error {
  using Error::Error;
};

std::string join(const std::vector<std::string>& args) {
  std::string s;
  for (const auto& a : args) {
    if (!s.empty()) s += ' ';
    s += a;
  }
  return s;
}

StepInterval parse_interval(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw UsageError("expected lo,hi but got '" + s + "'");
  try {
    StepInterval iv{std::stoll(s.substr(0, comma)), std::stoll(s.substr(comma + 1))};
    if (iv.hi < iv.lo) throw UsageError("interval '" + s + "' has hi < lo");
    return iv;
  } catch (const std::logic_error&) {
    throw UsageError("malformed interval '" + s + "'");
  }
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw UsageError("malformed number '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("empty number list");
  return out;
}

// ---------------------------------------------------------------------------
// run directories

struct RunData {
  fs::path dir;
  TrainConfig config;
  std::vector<std::pair<std::int64_t, fs::path>> checkpoints;  // ascending step
};

RunData open_run(const fs::path& dir) {
  RunData r;
  r.dir = dir;
  if (!fs::is_directory(dir)) throw Error("run directory not found: " + dir.string());
  if (!fs::exists(dir / "config.json")) throw Error("run directory has no config.json: " + dir.string());
  r.config = TrainConfig::from_json(Json::parse(read_text_file(dir / "config.json")));
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.starts_with("ckpt_") && name.ends_with(".dsck"))
      r.checkpoints.emplace_back(read_checkpoint_step(e.path()), e.path());
  }
  std::sort(r.checkpoints.begin(), r.checkpoints.end());
  if (r.checkpoints.size() < 2) throw Error("run directory needs at least two checkpoints: " + dir.string());
  return r;
}

fs::path checkpoint_path(const RunData& run, std::int64_t step) {
  for (const auto& [s, p] : run.checkpoints)
    if (s == step) return p;
  throw Error("no checkpoint at step " + std::to_string(step));
}

Trajectory load_run_trajectory(const RunData& run, const TrunkSelector& sel, std::optional<std::int64_t> last) {
  std::vector<fs::path> paths;
  for (const auto& [s, p] : run.checkpoints)
    if (!last || s <= *last) paths.push_back(p);
  return load_trajectory(paths, sel);
}

TrajectorySpectrum spectrum_of(const Trajectory& traj, std::int64_t anchor, bool row_normalize,
                               std::optional<std::int64_t> last, std::size_t top_k) {
  const DriftMatrix x = build_drift_matrix(traj, anchor, row_normalize, last);
  return uncentered_svd(x, std::min<std::size_t>(top_k, x.rows()));
}

std::vector<double> resolve_backbone(const std::string& which, const Trajectory& traj, std::int64_t anchor,
                                     bool row_normalize, std::optional<std::int64_t> last) {
  if (which == "global") return spectrum_of(traj, anchor, row_normalize, last, 1).right_vectors.at(0);
  std::vector<double> v = read_direction(which);
  if (v.size() != traj.dim)
    throw Error("direction dimension " + std::to_string(v.size()) + " does not match trunk dimension " +
                std::to_string(traj.dim));
  if (std::abs(norm(v) - 1.0) > 1e-8) throw Error("direction file is not a unit vector: " + which);
  return v;
}

TrunkSelector selector_for(int block) { return block < 0 ? TrunkSelector{} : TrunkSelector::for_block(block); }

// Collects report files and records them in the run manifest.
class Reporter {
 public:
  Reporter(fs::path run_dir, fs::path out_dir, std::vector<std::string> args)
      : run_dir_(std::move(run_dir)), out_dir_(std::move(out_dir)), args_(std::move(args)) {}

  std::string flags() const { return join(args_); }

  void csv(const std::string& name, const std::vector<std::string>& header,
           const std::vector<std::vector<std::string>>& rows) {
    CsvTable t(header, flags());
    for (const auto& r : rows) t.row(r);
    write(name, t.str());
  }

  void json(const std::string& name, Json j) {
    j["flags"] = args_;
    j["tool_version"] = kToolVersion;
    write(name, j.dump(2) + "\n");
  }

  void finish() {
    if (written_.empty()) return;
    RunManifest m = load_manifest(run_dir_, run_dir_.filename().string());
    bool any = false;
    for (const auto& p : written_) {
      const fs::path rel = fs::relative(p, run_dir_);
      if (rel.empty() || rel.string().starts_with("..")) continue;
      m.outputs.push_back(rel.generic_string());
      any = true;
    }
    if (any) {
      m.invocation = args_;
      save_manifest(run_dir_, m);
    }
  }

 private:
  void write(const std::string& name, const std::string& content) {
    const fs::path p = out_dir_ / name;
    write_text_file(p, content);
    written_.push_back(fs::absolute(p));
  }

  fs::path run_dir_;
  fs::path out_dir_;
  std::vector<std::string> args_;
  std::vector<fs::path> written_;
};

void prepare_output_dir(const fs::path& dir, bool force) {
  if (!fs::exists(dir)) {
    fs::create_directories(dir);
    return;
  }
  if (!fs::is_directory(dir)) throw Error("output path exists and is not a directory: " + dir.string());
  std::vector<fs::path> known;
  bool other = false;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string n = e.path().filename().string();
    const bool artifact = (n.starts_with("ckpt_") && n.ends_with(".dsck")) || n == "config.json" ||
                          n == "eval.csv" || n == "manifest.json" || n == "divergence.json" || n == "analysis" ||
                          n == "backbone.vec" || n.starts_with("lr_");
    if (artifact)
      known.push_back(e.path());
    else if (n != ".lock")
      other = true;
  }
  if (known.empty() && !other) return;
  if (!force) throw Error("output directory is not empty (use --force to overwrite): " + dir.string());
  if (other) throw Error("refusing to overwrite a directory holding files driftscope did not write: " + dir.string());
  for (const auto& p : known) fs::remove_all(p);
}

// ---------------------------------------------------------------------------
// train

struct TrainFlags {
  std::string out;
  bool force = false, quiet = false;
  std::string optimizer = "adamw";
  std::optional<double> lr, beta1, beta2, eps, wd, momentum, clip, floor;
  std::optional<std::string> decay;
  double warmup_frac = 0.15;
  int steps = 2000, ckpt_every = 40, batch = 16, accum = 1;
  std::uint64_t seed = 42;
  double lambda = 2.0, lambda_factor = 2.0, switch_frac = 0.4;
  bool no_switch = false;
  std::optional<double> p_probe;
  int layers = 2, d_model = 64, heads = 4, d_ff = 128, vocab = 256, seq_len = 64;
  int eval_id = 256, eval_ood = 512, eval_lm = 32;
};

void add_train_options(CLI::App* c, TrainFlags& f) {
  c->add_option("--out", f.out, "Run directory")->required();
  c->add_flag("--force", f.force, "Overwrite an existing run directory");
  c->add_flag("--quiet", f.quiet, "No progress output");
  c->add_option("--optimizer", f.optimizer)->check(CLI::IsMember({"adamw", "sgd", "sgd-momentum", "sgdw-nesterov"}));
  c->add_option("--lr", f.lr);
  c->add_option("--beta1", f.beta1);
  c->add_option("--beta2", f.beta2);
  c->add_option("--eps", f.eps);
  c->add_option("--wd", f.wd, "Weight decay");
  c->add_option("--decay", f.decay, "Weight-decay coupling")->check(CLI::IsMember({"decoupled", "l2"}));
  c->add_option("--momentum", f.momentum);
  c->add_option("--clip", f.clip, "Global gradient-norm clip");
  c->add_option("--floor", f.floor, "Cosine floor as a fraction of the peak rate");
  c->add_option("--warmup-frac", f.warmup_frac);
  c->add_option("--steps", f.steps);
  c->add_option("--ckpt-every", f.ckpt_every);
  c->add_option("--batch", f.batch);
  c->add_option("--accum", f.accum, "Micro-batches per optimizer step");
  c->add_option("--seed", f.seed);
  c->add_option("--lambda", f.lambda, "Initial probe-loss weight");
  c->add_option("--lambda-factor", f.lambda_factor, "Multiplier applied at the switch");
  c->add_option("--switch-frac", f.switch_frac, "Switch step as a fraction of total steps");
  c->add_flag("--no-switch", f.no_switch);
  c->add_option("--p-probe", f.p_probe);
  c->add_option("--layers", f.layers);
  c->add_option("--d-model", f.d_model);
  c->add_option("--heads", f.heads);
  c->add_option("--d-ff", f.d_ff);
  c->add_option("--vocab", f.vocab);
  c->add_option("--seq-len", f.seq_len);
  c->add_option("--eval-id", f.eval_id);
  c->add_option("--eval-ood", f.eval_ood);
  c->add_option("--eval-lm", f.eval_lm);
}

TrainConfig resolve_train_config(const TrainFlags& f) {
  TrainConfig c;
  c.model = {f.layers, f.d_model, f.heads, f.d_ff, f.vocab, f.seq_len};
  if (f.vocab != 256 || f.seq_len != 64) c.task = TaskConfig::scaled(f.vocab, f.seq_len);
  if (f.p_probe) c.task.p_probe = *f.p_probe;

  OptimizerConfig& o = c.optimizer;
  o.kind = parse_optimizer_kind(f.optimizer);
  const bool adam = o.kind == OptimizerKind::AdamW;
  if (adam && f.momentum) throw UsageError("--momentum is not an adamw option (adamw uses --beta1)");
  if (!adam && (f.beta1 || f.beta2 || f.eps))
    throw UsageError("--beta1/--beta2/--eps apply only to adamw");
  if (o.kind == OptimizerKind::Sgd && f.momentum && *f.momentum > 0.0) o.kind = OptimizerKind::SgdMomentum;
  switch (o.kind) {
    case OptimizerKind::AdamW:
      o.lr = 1e-3, o.weight_decay = 0.5, o.coupling = DecayCoupling::Decoupled;
      break;
    case OptimizerKind::Sgd:
      o.lr = 1e-3, o.weight_decay = 0.5, o.coupling = DecayCoupling::L2, o.momentum = 0.0;
      break;
    case OptimizerKind::SgdMomentum:
      o.lr = 1e-2, o.weight_decay = 0.05, o.coupling = DecayCoupling::L2, o.momentum = 0.9;
      break;
    case OptimizerKind::SgdwNesterov:
      o.lr = 1e-2, o.weight_decay = 0.5, o.coupling = DecayCoupling::Decoupled, o.momentum = 0.9;
      break;
  }
  if (f.lr) o.lr = *f.lr;
  if (f.beta1) o.beta1 = *f.beta1;
  if (f.beta2) o.beta2 = *f.beta2;
  if (f.eps) o.eps = *f.eps;
  if (f.wd) o.weight_decay = *f.wd;
  if (f.decay) o.coupling = parse_decay_coupling(*f.decay);
  if (f.momentum) o.momentum = *f.momentum;
  if (f.clip) o.clip = *f.clip;
  if (f.floor) o.floor_fraction = *f.floor;
  if (o.kind == OptimizerKind::SgdMomentum && o.momentum == 0.0)
    throw UsageError("sgd-momentum needs a positive --momentum");

  c.steps = f.steps;
  c.ckpt_every = f.ckpt_every;
  c.batch_size = f.batch;
  c.accumulation = f.accum;
  c.seed = f.seed;
  c.lambda0 = f.lambda;
  c.lambda_factor = f.lambda_factor;
  c.switch_fraction = f.no_switch ? std::nullopt : std::optional<double>(f.switch_frac);
  c.warmup_fraction = f.warmup_frac;
  c.eval_id = f.eval_id;
  c.eval_ood = f.eval_ood;
  c.eval_lm = f.eval_lm;
  try {
    c.resolved().validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  return c;
}

void print_record(std::ostream& out, const EvalRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "step %6lld  val_loss %.4f  p_id %.4f  p_ood %.4f  lambda %.2f  lr %.3g\n",
                static_cast<long long>(r.step), r.val_loss, r.p_id, r.p_ood, r.lambda, r.lr);
  out << buf << std::flush;
}

int cmd_train(const TrainFlags& f, const std::vector<std::string>& args, std::ostream& out) {
  const TrainConfig cfg = resolve_train_config(f);
  const fs::path dir = f.out;
  prepare_output_dir(dir, f.force);
  RunLock lock(dir);
  EvalObserver obs;
  if (!f.quiet) obs = [&out](const EvalRecord& r) { print_record(out, r); };
  const TrainResult res = train(cfg, dir, obs);
  RunManifest m;
  m.run_id = dir.filename().string();
  for (const auto& p : res.checkpoints) m.checkpoints.push_back(p.filename().string());
  m.outputs = {"config.json", "eval.csv"};
  m.invocation = args;
  save_manifest(dir, m);
  if (!f.quiet) out << "wrote " << res.checkpoints.size() << " checkpoints to " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeFlags {
  std::string run;
  std::string out_dir;
  int block = -1;
  bool row_normalize = false;
  std::int64_t anchor = 0;
  std::optional<std::int64_t> last;
  // per-kind
  std::size_t top_k = 10;
  std::string save_direction;
  int width = 10, stride = 1;
  bool global = false;
  std::string early, late;
  std::string backbone = "global";
  std::string series = "a";
  std::vector<std::string> windows;
  std::int64_t interval = 0;
  int grad_batches = 0;
  std::vector<std::int64_t> grad_steps;
  std::uint64_t seed = 7;
  std::string pairs;
  int radius = 3;
  double prominence = 0.05;
};

void add_common_analyze_options(CLI::App* c, AnalyzeFlags& f) {
  c->add_option("--run", f.run, "Run directory")->required();
  c->add_option("--out-dir", f.out_dir, "Report directory (default <run>/analysis)");
  c->add_option("--block", f.block, "Restrict the trunk to one block");
  c->add_flag("--row-normalize", f.row_normalize);
  c->add_option("--anchor", f.anchor, "Anchor step");
  c->add_option("--last", f.last, "Ignore checkpoints after this step");
}

Json spectrum_json(const TrajectorySpectrum& s) {
  Json j;
  j["singular_values"] = s.singular_values;
  j["variance_fractions"] = s.variance_fractions;
  j["rho1"] = s.variance_fractions.at(0);
  j["k95"] = s.k95;
  j["k99"] = s.k99;
  j["pc1_unstable"] = s.pc1_unstable;
  return j;
}

std::string opt_double(bool present, double v) { return present ? format_double(v) : std::string(); }

int cmd_analyze(const std::string& kind, const AnalyzeFlags& f, const std::vector<std::string>& args,
                std::ostream& out, std::ostream& err) {
  const RunData run = open_run(f.run);
  const fs::path out_dir = f.out_dir.empty() ? run.dir / "analysis" : fs::path(f.out_dir);
  RunLock lock(run.dir);
  Reporter rep(run.dir, out_dir, args);
  const TrunkSelector sel = selector_for(f.block);
  const Trajectory traj = load_run_trajectory(run, sel, f.last);
  int failures = 0;

  if (kind == "pca") {
    const DriftMatrix x = build_drift_matrix(traj, f.anchor, f.row_normalize, f.last);
    const TrajectorySpectrum s = uncentered_svd(x, std::min(f.top_k, x.rows()));
    Json j = spectrum_json(s);
    j["anchor"] = f.anchor;
    j["selector"] = traj.label;
    j["row_normalized"] = f.row_normalize;
    j["T"] = x.rows();
    j["D"] = x.dim;
    j["steps"] = x.steps;
    rep.json("pca.json", j);
    std::vector<std::vector<std::string>> rows;
    double cum = 0.0;
    for (std::size_t k = 0; k < s.rank(); ++k) {
      cum += s.variance_fractions[k];
      rows.push_back({format_int(static_cast<std::int64_t>(k + 1)), format_double(s.singular_values[k]),
                      format_double(s.variance_fractions[k]), format_double(cum)});
    }
    rep.csv("pca.csv", {"k", "sigma", "rho", "cumulative"}, rows);
    if (!f.save_direction.empty()) write_direction(f.save_direction, s.right_vectors.at(0));
    out << "rho1 " << format_double(s.variance_fractions[0]) << "  k95 " << s.k95 << "  k99 " << s.k99 << "\n";
  } else if (kind == "rolling") {
    std::optional<std::vector<double>> global;
    if (f.global) global = resolve_backbone("global", traj, f.anchor, f.row_normalize, f.last);
    const RollingBackboneSeries r =
        rolling_backbones(traj, f.width, f.stride, f.row_normalize,
                          global ? std::optional<std::span<const double>>(*global) : std::nullopt);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t w = 0; w < r.centers.size(); ++w)
      rows.push_back({format_double(r.centers[w]), format_int(r.window_start[w]), format_int(r.window_end[w]),
                      opt_double(w < r.adjacent_alignment.size(), w < r.adjacent_alignment.size() ? r.adjacent_alignment[w] : 0),
                      opt_double(!r.global_alignment.empty(), r.global_alignment.empty() ? 0 : r.global_alignment[w]),
                      r.unstable[w] ? "1" : "0"});
    rep.csv("rolling.csv", {"center", "window_start", "window_end", "rho_next", "c_global", "unstable"}, rows);
    Json j;
    j["width"] = f.width;
    j["stride"] = f.stride;
    j["row_normalized"] = f.row_normalize;
    j["windows"] = r.centers.size();
    if (!r.adjacent_alignment.empty()) {
      j["min_rho"] = *std::min_element(r.adjacent_alignment.begin(), r.adjacent_alignment.end());
      double s = 0.0;
      for (double v : r.adjacent_alignment) s += v;
      j["mean_rho"] = s / static_cast<double>(r.adjacent_alignment.size());
    }
    rep.json("rolling.json", j);
  } else if (kind == "phases") {
    StepInterval early, late;
    const std::int64_t first = traj.steps.front(), last = traj.steps.back();
    const std::int64_t mid =
        run.config.switch_step() ? static_cast<std::int64_t>(*run.config.switch_step()) : (first + last) / 2;
    early = f.early.empty() ? StepInterval{first, mid} : parse_interval(f.early);
    late = f.late.empty() ? StepInterval{mid, last} : parse_interval(f.late);
    const RollingBackboneSeries roll = rolling_backbones(traj, f.width, f.stride, f.row_normalize);
    const PhaseBackbones p = phase_backbones(traj, early, late, f.row_normalize, &roll);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < p.centers.size(); ++i)
      rows.push_back({format_double(p.centers[i]), format_double(p.early_alignment[i]), format_double(p.late_alignment[i])});
    rep.csv("phases.csv", {"center", "A_E", "A_L"}, rows);
    Json j;
    j["early"] = {p.early.lo, p.early.hi};
    j["late"] = {p.late.lo, p.late.hi};
    j["early_rho1"] = p.early_rho1;
    j["late_rho1"] = p.late_rho1;
    j["overlap"] = p.overlap;
    if (!roll.adjacent_alignment.empty())
      j["min_adjacent_rho"] = *std::min_element(roll.adjacent_alignment.begin(), roll.adjacent_alignment.end());
    rep.json("phases.json", j);
    out << "overlap " << format_double(p.overlap) << "\n";
  } else if (kind == "decompose" || kind == "powerlaw" || kind == "correlate") {
    const std::vector<double> vb = resolve_backbone(f.backbone, traj, f.anchor, f.row_normalize, f.last);
    const DriftMatrix x = build_drift_matrix(traj, f.anchor, false, f.last);
    const BackboneDecomposition d = decompose(x, vb);
    if (kind == "decompose") {
      std::vector<std::vector<std::string>> rows;
      double worst_identity = 0.0, worst_orth = 0.0;
      for (std::size_t t = 0; t < d.steps.size(); ++t) {
        rows.push_back({format_int(d.steps[t]), format_double(d.coordinates[t]), format_double(d.residual_norms[t]),
                        format_double(d.backbone_fractions[t]), format_double(d.drift_norms[t])});
        const double dn2 = d.drift_norms[t] * d.drift_norms[t];
        if (dn2 > 0.0) {
          const double lhs = d.coordinates[t] * d.coordinates[t] + d.residual_norms[t] * d.residual_norms[t];
          worst_identity = std::max(worst_identity, std::abs(lhs - dn2) / dn2);
        }
        if (d.residual_norms[t] > 0.0)
          worst_orth = std::max(worst_orth, std::abs(d.residual_backbone_dots[t]) / d.residual_norms[t]);
      }
      rep.csv("decompose.csv", {"step", "a", "r_norm", "f_b", "drift_norm"}, rows);
      Json j;
      j["backbone"] = f.backbone;
      j["anchor"] = f.anchor;
      j["max_identity_rel_error"] = worst_identity;
      j["max_residual_backbone_cos"] = worst_orth;
      j["final_f_b"] = d.backbone_fractions.back();
      rep.json("decompose.json", j);
    } else if (kind == "powerlaw") {
      std::vector<double> steps(d.steps.begin(), d.steps.end()), values;
      if (f.series == "a")
        values = d.coordinates;
      else if (f.series == "r")
        values = d.residual_norms;
      else if (f.series == "drift")
        values = d.drift_norms;
      else
        throw UsageError("--series must be a, r or drift");
      std::vector<std::string> windows = f.windows;
      if (windows.empty())
        windows.push_back(std::to_string(traj.steps.front()) + "," + std::to_string(traj.steps.back()));
      std::vector<std::vector<std::string>> rows;
      for (const auto& w : windows) {
        const StepInterval iv = parse_interval(w);
        try {
          const PowerLawFit fit =
              fit_power_law(steps, values, static_cast<double>(iv.lo), static_cast<double>(iv.hi));
          rows.push_back({f.series, format_int(iv.lo), format_int(iv.hi), format_double(fit.exponent),
                          format_double(fit.coefficient), format_double(fit.r_squared),
                          format_int(static_cast<std::int64_t>(fit.samples))});
        } catch (const Error& e) {
          err << "powerlaw window " << w << ": " << e.what() << "\n";
          ++failures;
        }
      }
      rep.csv("powerlaw.csv", {"series", "window_lo", "window_hi", "gamma", "C", "R2", "samples"}, rows);
    } else {
      const std::vector<EvalRecord> evals = parse_eval_csv(read_text_file(run.dir / "eval.csv"));
      std::vector<double> steps, pood, rnorm;
      for (std::size_t t = 0; t < d.steps.size(); ++t)
        for (const auto& e : evals)
          if (e.step == d.steps[t]) {
            steps.push_back(static_cast<double>(d.steps[t]));
            pood.push_back(e.p_ood);
            rnorm.push_back(d.residual_norms[t]);
          }
      std::vector<std::string> windows = f.windows;
      if (windows.empty())
        windows.push_back(std::to_string(traj.steps.front()) + "," + std::to_string(traj.steps.back()));
      std::vector<std::vector<std::string>> rows;
      for (const auto& w : windows) {
        const StepInterval iv = parse_interval(w);
        try {
          const CorrelationReport c =
              correlate_window(steps, pood, rnorm, static_cast<double>(iv.lo), static_cast<double>(iv.hi));
          rows.push_back({format_int(iv.lo), format_int(iv.hi), format_double(c.r),
                          format_int(static_cast<std::int64_t>(c.samples))});
        } catch (const Error& e) {
          err << "correlate window " << w << ": " << e.what() << "\n";
          ++failures;
        }
      }
      rep.csv("correlate.csv", {"window_lo", "window_hi", "r", "samples"}, rows);
    }
  } else if (kind == "align") {
    const std::vector<double> vb = resolve_backbone(f.backbone, traj, f.anchor, f.row_normalize, f.last);
    const std::int64_t interval = f.interval > 0 ? f.interval : run.config.ckpt_every;
    const AlignmentSeries a = update_alignment(traj, vb, interval);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < a.steps.size(); ++i)
      rows.push_back({format_int(a.steps[i]), format_double(a.signed_cosines[i]), format_double(a.abs_cosines[i]),
                      format_double(a.noise_floor)});
    rep.csv("align.csv", {"step", "signed_cos", "abs_cos", "noise_floor"}, rows);
    Json j;
    j["interval"] = interval;
    j["noise_floor"] = a.noise_floor;
    j["update_mean_abs_cos"] = a.mean_abs();
    j["update_ratio_to_floor"] = a.mean_abs() / a.noise_floor;
    if (f.grad_batches > 0) {
      // M batches at each requested checkpoint, pooled; one stream across all of them.
      const std::vector<std::int64_t> steps =
          f.grad_steps.empty() ? std::vector<std::int64_t>{traj.steps.back()} : f.grad_steps;
      const MarkovCorpus corpus(run.config.task);
      auto rng = make_stream(f.seed, "gradient-batches");
      std::vector<std::vector<double>> grads;
      std::vector<std::int64_t> labels;
      for (const std::int64_t step : steps) {
        Transformer<float> model(run.config.model);
        model.load_checkpoint(read_checkpoint(checkpoint_path(run, step)));
        std::vector<Batch> batches;
        for (int i = 0; i < f.grad_batches; ++i)
          batches.push_back(generate_batch(run.config.task, corpus, rng, BatchMode::Train, run.config.batch_size,
                                           run.config.model.seq_len));
        const GradientMatrix g = collect_gradients(model, batches, run.config.lambda_at(step), sel);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          grads.emplace_back(g.row(i).begin(), g.row(i).end());
          labels.push_back(step);
        }
      }
      const AlignmentSeries ga = gradient_alignment(grads, vb, labels);
      std::vector<std::vector<std::string>> grows;
      for (std::size_t i = 0; i < ga.abs_cosines.size(); ++i)
        grows.push_back({format_int(labels[i]), format_int(static_cast<std::int64_t>(i % f.grad_batches)),
                         format_double(ga.signed_cosines[i]), format_double(ga.abs_cosines[i]),
                         format_double(ga.noise_floor)});
      rep.csv("align_gradients.csv", {"step", "batch", "signed_cos", "abs_cos", "noise_floor"}, grows);
      j["gradient_steps"] = steps;
      j["gradient_batches"] = f.grad_batches;
      j["gradient_mean_abs_cos"] = ga.mean_abs();
      j["gradient_ratio_to_floor"] = ga.mean_abs() / ga.noise_floor;
    }
    rep.json("align.json", j);
    out << "update |cos| " << format_double(a.mean_abs()) << "  noise floor " << format_double(a.noise_floor) << "\n";
  } else if (kind == "switch") {
    const std::vector<double> vb = resolve_backbone(f.backbone, traj, f.anchor, f.row_normalize, f.last);
    const TrajectorySpectrum spectrum = spectrum_of(traj, f.anchor, f.row_normalize, f.last, 6);
    std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
    if (!f.pairs.empty()) {
      std::stringstream ss(f.pairs);
      std::string item;
      while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw UsageError("--pairs expects peak:trough entries");
        try {
          pairs.emplace_back(std::stoll(item.substr(0, colon)), std::stoll(item.substr(colon + 1)));
        } catch (const std::logic_error&) {
          throw UsageError("malformed pair '" + item + "'");
        }
      }
    } else {
      const std::vector<EvalRecord> evals = parse_eval_csv(read_text_file(run.dir / "eval.csv"));
      std::vector<EvalRecord> in_traj;
      for (const auto& e : evals)
        if (traj.contains(e.step)) in_traj.push_back(e);
      std::vector<double> pood;
      for (const auto& e : in_traj) pood.push_back(e.p_ood);
      const auto ext = find_extrema(pood, f.radius, f.prominence);
      for (const auto& p : pair_peaks_with_troughs(ext)) pairs.emplace_back(in_traj[p.peak].step, in_traj[p.trough].step);
    }
    std::vector<SwitchAnalysis> results;
    std::vector<std::vector<std::string>> rows;
    for (const auto& [peak, trough] : pairs) {
      try {
        const SwitchAnalysis s = switch_direction(traj.at(traj.index_of(peak)), peak, traj.at(traj.index_of(trough)),
                                                  trough, vb, spectrum);
        rows.push_back({format_int(peak), format_int(trough), format_double(s.overlap), format_double(s.signed_overlap),
                        format_double(s.residual_capture), format_int(s.components_used), s.degenerate ? "1" : "0"});
        results.push_back(s);
      } catch (const Error& e) {
        err << "switch pair " << peak << ":" << trough << ": " << e.what() << "\n";
        ++failures;
      }
    }
    rep.csv("switch.csv",
            {"peak", "trough", "overlap", "signed_overlap", "residual_capture_pc2_6", "components", "degenerate"}, rows);
    Json j;
    j["pairs"] = rows.size();
    j["pairwise_cosines"] = pairwise_cosines(results);
    j["truncated_spectrum"] = spectrum.right_vectors.size() < 6;
    rep.json("switch.json", j);
    out << rows.size() << " switch pairs\n";
  } else {
    throw UsageError("unknown analysis '" + kind + "'");
  }
  rep.finish();
  return failures ? 1 : 0;
}

// ---------------------------------------------------------------------------
// rayleigh

struct RayleighFlags {
  std::string run;
  std::vector<std::string> dirs;
  int k = 10, m = 32;
  std::uint64_t seed = 7;
  std::string steps;
  int block = -1;
  std::optional<int> batch;
  std::string out;
};

int cmd_rayleigh(const RayleighFlags& f, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (f.k < 1) throw UsageError("--K must be at least 1");
  if (f.m < 1) throw UsageError("--M must be at least 1");
  const RunData run = open_run(f.run);
  const TrunkSelector sel = selector_for(f.block);
  std::vector<std::int64_t> steps;
  if (f.steps.empty())
    for (const auto& [s, p] : run.checkpoints) steps.push_back(s);
  else
    for (double s : parse_double_list(f.steps)) steps.push_back(static_cast<std::int64_t>(s));

  struct Dir {
    std::string label;
    std::vector<double> v;
  };
  std::vector<Dir> dirs;
  for (const auto& d : f.dirs) dirs.push_back({fs::path(d).stem().string(), read_direction(d)});

  const fs::path out_path = f.out.empty() ? run.dir / "analysis" / "rayleigh.csv" : fs::path(f.out);
  RunLock lock(run.dir);
  Reporter rep(run.dir, out_path.parent_path(), args);
  const MarkovCorpus corpus(run.config.task);
  const int batch = f.batch ? *f.batch : run.config.batch_size;
  std::vector<std::vector<std::string>> rows;
  int failures = 0;
  for (std::int64_t step : steps) {
    Transformer<float> model(run.config.model);
    model.load_checkpoint(read_checkpoint(checkpoint_path(run, step)));
    auto rng = make_stream(f.seed, "rayleigh-batches");
    std::vector<Batch> batches;
    for (int i = 0; i < f.m; ++i)
      batches.push_back(generate_batch(run.config.task, corpus, rng, BatchMode::Train, batch, run.config.model.seq_len));
    const GradientMatrix g = collect_gradients(model, batches, run.config.lambda_at(step), sel);
    for (const auto& d : dirs) {
      try {
        if (d.v.size() != g.dim)
          throw Error("direction dimension " + std::to_string(d.v.size()) + " does not match trunk dimension " +
                      std::to_string(g.dim));
        const RayleighResult r = anisotropy(g, d.v, f.k, f.seed, d.label);
        rows.push_back({format_int(step), d.label, format_double(r.quotient), format_double(r.alpha),
                        format_int(f.k), format_int(f.m), std::to_string(f.seed), format_double(r.mean_random),
                        r.degenerate ? "1" : "0"});
      } catch (const Error& e) {
        err << "rayleigh step " << step << " direction " << d.label << ": " << e.what() << "\n";
        ++failures;
      }
    }
  }
  rep.csv(out_path.filename().string(),
          {"step", "direction_label", "q", "alpha", "K", "M", "seed", "mean_random_q", "degenerate"}, rows);
  rep.finish();
  out << rows.size() << " rayleigh rows\n";
  return failures ? 1 : 0;
}

// ---------------------------------------------------------------------------
// reheat

struct ReheatFlags {
  std::string from, out, backbone;
  std::string lrs = "1e-3,6e-4,3e-4";
  double lambda = 4.0;
  int steps = 400, eval_every = 0;
  std::uint64_t seed = 42;
  bool force = false, quiet = false;
};

int cmd_reheat(const ReheatFlags& f, const std::vector<std::string>& args, std::ostream& out) {
  const fs::path from = f.from;
  if (!fs::exists(from)) throw Error("source checkpoint not found: " + from.string());
  const RunData src = open_run(from.parent_path().empty() ? fs::path(".") : from.parent_path());
  const Checkpoint source = read_checkpoint(from);
  ReheatConfig rc;
  rc.lrs = parse_double_list(f.lrs);
  rc.lambda_new = f.lambda;
  rc.steps = f.steps;
  rc.eval_every = f.eval_every;
  rc.seed = f.seed;
  try {
    rc.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const TrunkSelector sel;
  const std::int64_t anchor = src.checkpoints.front().first;
  const Trajectory traj = load_run_trajectory(src, sel, source.step);
  const std::vector<double> vb =
      f.backbone.empty() ? resolve_backbone("global", traj, anchor, false, source.step)
                         : resolve_backbone(f.backbone, traj, anchor, false, source.step);
  const std::vector<double> anchor_trunk(traj.at(0).begin(), traj.at(0).end());

  const fs::path dir = f.out;
  prepare_output_dir(dir, f.force);
  RunLock lock(dir);
  write_direction(dir / "backbone.vec", vb);
  EvalObserver obs;
  if (!f.quiet) obs = [&out](const EvalRecord& r) { print_record(out, r); };
  const auto series = reheat(source, src.config, rc, anchor_trunk, vb, dir, obs);
  RunManifest m;
  m.run_id = dir.filename().string();
  m.outputs.push_back("backbone.vec");
  for (const auto& s : series)
    for (const char* n : {"eval.csv", "backbone.csv", "reheat.json"})
      m.outputs.push_back((fs::relative(s.dir, dir) / n).generic_string());
  m.invocation = args;
  save_manifest(dir, m);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (const char* t = std::getenv("DRIFTSCOPE_THREADS")) {
    const int n = std::atoi(t);
    if (n > 0) kernels::set_thread_limit(n);
  }

  CLI::App app{"driftscope: training-trajectory geometry toolkit"};
  app.name("driftscope");
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  TrainFlags tf;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a desk-scale model and write checkpoints");
  add_train_options(train_cmd, tf);

  AnalyzeFlags af;
  CLI::App* analyze_cmd = app.add_subcommand("analyze", "Trajectory analyses over a run directory");
  analyze_cmd->require_subcommand(1);
  std::map<std::string, CLI::App*> kinds;
  const std::vector<std::pair<const char*, const char*>> analyses{
      {"pca", "Uncentered SVD of the drift matrix: spectrum, rho_k, k95, k99"},
      {"rolling", "PC1 of sliding checkpoint windows and adjacent-window alignment"},
      {"phases", "Early and late interval backbones, their overlap and A_E/A_L"},
      {"decompose", "Backbone coordinate a(t), residual norm and backbone fraction"},
      {"powerlaw", "Log-log least-squares fits of a(t), ||r(t)|| or ||drift||"},
      {"align", "Update and per-batch gradient cosines against the backbone"},
      {"switch", "Switching directions between probe-accuracy peaks and troughs"},
      {"correlate", "Pearson correlation of p_ood with the residual norm per window"},
  };
  for (const auto& [k, desc] : analyses) {
    CLI::App* c = analyze_cmd->add_subcommand(k, desc);
    add_common_analyze_options(c, af);
    kinds[k] = c;
  }
  kinds["pca"]->add_option("--top-k", af.top_k);
  kinds["pca"]->add_option("--save-direction", af.save_direction, "Write PC1 as a direction file");
  for (const char* k : {"rolling", "phases"}) {
    kinds[k]->add_option("--width", af.width);
    kinds[k]->add_option("--stride", af.stride);
  }
  kinds["rolling"]->add_flag("--global", af.global, "Also report alignment with the global backbone");
  kinds["phases"]->add_option("--early", af.early, "Early interval lo,hi");
  kinds["phases"]->add_option("--late", af.late, "Late interval lo,hi");
  for (const char* k : {"decompose", "powerlaw", "align", "switch", "correlate"})
    kinds[k]->add_option("--backbone", af.backbone, "'global' or a direction file");
  kinds["powerlaw"]->add_option("--series", af.series)->check(CLI::IsMember({"a", "r", "drift"}));
  for (const char* k : {"powerlaw", "correlate"}) kinds[k]->add_option("--window", af.windows, "lo,hi (repeatable)");
  kinds["align"]->add_option("--interval", af.interval, "Update interval in steps");
  kinds["align"]->add_option("--grad-batches", af.grad_batches, "Per-batch gradients to compare");
  kinds["align"]->add_option("--grad-step", af.grad_steps, "Checkpoints for the gradient samples (default last)")
      ->delimiter(',');
  kinds["align"]->add_option("--seed", af.seed);
  kinds["switch"]->add_option("--pairs", af.pairs, "Manual peak:trough list");
  kinds["switch"]->add_option("--radius", af.radius);
  kinds["switch"]->add_option("--prominence", af.prominence);

  RayleighFlags rf;
  CLI::App* ray_cmd = app.add_subcommand("rayleigh", "Empirical Fisher quotients along direction files");
  ray_cmd->add_option("--run", rf.run)->required();
  ray_cmd->add_option("--dir", rf.dirs, "Direction file (repeatable)")->required();
  ray_cmd->add_option("--K", rf.k, "Random orthogonal directions");
  ray_cmd->add_option("--M", rf.m, "Gradient batches");
  ray_cmd->add_option("--seed", rf.seed);
  ray_cmd->add_option("--steps", rf.steps, "Comma-separated checkpoint steps (default all)");
  ray_cmd->add_option("--block", rf.block);
  ray_cmd->add_option("--batch", rf.batch);
  ray_cmd->add_option("--out", rf.out);

  ReheatFlags hf;
  CLI::App* reheat_cmd = app.add_subcommand("reheat", "Restart from a checkpoint with fresh optimizer state");
  reheat_cmd->add_option("--from", hf.from)->required();
  reheat_cmd->add_option("--out", hf.out)->required();
  reheat_cmd->add_option("--lrs", hf.lrs);
  reheat_cmd->add_option("--lambda", hf.lambda);
  reheat_cmd->add_option("--steps", hf.steps);
  reheat_cmd->add_option("--eval-every", hf.eval_every);
  reheat_cmd->add_option("--seed", hf.seed);
  reheat_cmd->add_option("--backbone", hf.backbone, "Direction file (default: source run global PC1)");
  reheat_cmd->add_flag("--force", hf.force);
  reheat_cmd->add_flag("--quiet", hf.quiet);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == static_cast<int>(CLI::ExitCodes::Success) ? 0 : 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(tf, args, out);
    if (ray_cmd->parsed()) return cmd_rayleigh(rf, args, out, err);
    if (reheat_cmd->parsed()) return cmd_reheat(hf, args, out);
    for (const auto& [name, c] : kinds)
      if (c->parsed()) return cmd_analyze(name, af, args, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace driftscope::cli
