// End-to-end acceptance runner. One PASS/FAIL line per criterion; exit 1 if
// any selected criterion fails.
//
//   acceptance [--criteria 1,2,...] [--work DIR]
//
// Criteria 7 and 8 train real models on the synthetic shapes dataset and take
// tens of minutes on one core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mscn/data/synthetic.hpp"
#include "mscn/eval/kernels.hpp"
#include "mscn/eval/probe.hpp"
#include "mscn/eval/sweep.hpp"
#include "mscn/verify/checks.hpp"

#ifndef MSCN_SOURCE_DIR
#error "MSCN_SOURCE_DIR must point at the repository root"
#endif

using namespace mscn;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigDir = fs::path(MSCN_SOURCE_DIR) / "configs";

struct Outcome {
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

/// Aggregates named verify checks into one outcome, listing failures by name.
Outcome all_pass(const std::vector<verify::CheckResult>& rows, std::ostream& log) {
  verify::print_table(log, rows);
  Outcome o{true, ""};
  std::vector<std::string> failed;
  for (const auto& r : rows)
    if (!r.passed) failed.push_back(r.name);
  o.passed = failed.empty();
  o.detail = std::to_string(rows.size() - failed.size()) + "/" + std::to_string(rows.size()) +
             " checks";
  for (const auto& f : failed) o.detail += ", failed " + f;
  return o;
}

/// The synthetic shapes dataset (4 classes, 2000 train / 500 val, 64 px),
/// generated once under the work directory.
struct Data {
  fs::path manifest;
  Dataset train, val;
};

Data& shapes_data(const fs::path& work) {
  static std::optional<Data> d;
  if (d) return *d;
  d.emplace();
  const fs::path root = work / "shapes";
  d->manifest = root / "manifest.json";
  SyntheticShapesSpec spec;
  if (!fs::exists(d->manifest)) {
    std::cerr << "generating synthetic shapes under " << root << "\n";
    generate_synthetic_shapes(spec, root);
  }
  const auto m = load_manifest(d->manifest);
  d->train = load_split(m, "train");
  d->val = load_split(m, "val");
  require(d->train.size() == 2000 && d->val.size() == 500 && d->train.num_classes() == 4,
          "unexpected synthetic dataset shape under ", root.string());
  return *d;
}

RunConfig load_profile(const std::string& name, const Data& data) {
  RunConfig c = load_config(kConfigDir / name);
  c.data.manifest = data.manifest.string();
  return c;
}

// ---------------------------------------------------------------- criteria

Outcome criterion_gradients(std::ostream& log) {
  const auto t0 = Clock::now();
  Outcome o = all_pass(verify::gradient_checks(5), log);
  const double s = seconds_since(t0);
  o.detail += ", 5 seeds, " + fmt(s, 1) + " s (limit 60 s)";
  o.passed = o.passed && s < 60.0;
  return o;
}

Outcome criterion_losses(std::ostream& log) { return all_pass(verify::loss_closed_form_checks(), log); }

Outcome criterion_masks(std::ostream& log) {
  const auto t0 = Clock::now();
  Outcome o = all_pass(verify::mask_checks(10000), log);
  const double s = seconds_since(t0);
  o.detail += ", 10000 draws, " + fmt(s, 2) + " s (limit 30 s)";
  o.passed = o.passed && s < 30.0;
  return o;
}

Outcome criterion_highpass(std::ostream& log) { return all_pass({verify::highpass_null_check()}, log); }

Outcome criterion_determinism(const fs::path& work, std::ostream& log) {
  // 80 real images, batch 16: 5 steps per epoch, 10 steps over two epochs
  const Data& d = shapes_data(work);
  std::vector<std::size_t> idx(80);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Dataset sub = d.train.subset(idx);
  RunConfig cfg = load_profile("desk_simclr.json", d);
  cfg.schedule.batch_size = 16;
  cfg.schedule.epochs = 2;
  cfg.schedule.warmup_epochs = 0.5;
  std::vector<verify::CheckResult> rows;
  rows.push_back(verify::determinism_check(cfg, sub, 10, "determinism.simclr_10_steps"));
  rows.push_back(verify::resume_check(cfg, sub, "resume.simclr_epoch1"));
  RunConfig byol = load_profile("desk_byol.json", d);
  byol.schedule.batch_size = 16;
  byol.schedule.epochs = 2;
  byol.schedule.warmup_epochs = 0.5;
  rows.push_back(verify::determinism_check(byol, sub, 10, "determinism.byol_10_steps"));
  rows.push_back(verify::resume_check(byol, sub, "resume.byol_epoch1"));
  return all_pass(rows, log);
}

Outcome criterion_ema(std::ostream& log) { return all_pass(verify::ema_checks(), log); }

Outcome criterion_desk_run(const fs::path& work, std::ostream& log) {
  const auto t0 = Clock::now();
  const Data& d = shapes_data(work);
  const RunConfig cfg = load_profile("desk_simclr.json", d);
  const fs::path out = work / "desk_simclr";
  fs::remove_all(out);
  TrainOptions opt;
  opt.out_dir = out;
  opt.log = &log;
  const auto tr = Trainer(cfg, d.train).run(opt);
  const auto probe = linear_probe(tr.online, d.train, d.val, cfg.eval.probe, cfg.augment, cfg.seed);
  const double s = seconds_since(t0);
  log << "desk SimCLR probe accuracy " << probe.accuracy << " (train " << probe.train_accuracy
      << "), final epoch loss " << detail::last_epoch_mean(tr.metrics) << "\n";
  Outcome o;
  o.passed = probe.accuracy >= 0.60 && s < 30 * 60.0;
  o.detail = "probe top-1 " + fmt(probe.accuracy) + " (threshold 0.60), " +
             std::to_string(cfg.schedule.epochs) + " epochs, " + fmt(s / 60, 1) +
             " min (limit 30 min)";
  return o;
}

double mean_of(const std::vector<SweepRow>& rows, const std::string& value) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& r : rows)
    if (r.value == value) s += r.probe_acc, ++n;
  return n ? s / static_cast<double>(n) : std::nan("");
}

SweepResult run_ablation_sweep(const std::string& spec_name, const Data& d, const fs::path& out,
                               std::ostream& log) {
  std::ifstream in(kConfigDir / "sweeps" / spec_name);
  std::stringstream ss;
  ss << in.rdbuf();
  SweepSpec spec = parse_sweep_spec(Json::parse(ss.str()), kConfigDir / "sweeps");
  spec.base.data.manifest = d.manifest.string();
  SweepOptions opt;
  opt.log = &log;
  auto res = run_sweep(spec, d.train, d.val, out, opt);
  log << res.summary;
  return res;
}

Outcome criterion_ablations(const fs::path& work, std::ostream& log) {
  const auto t0 = Clock::now();
  const Data& d = shapes_data(work);
  const fs::path out = work / "ablations";
  fs::remove_all(out);

  const auto views = run_ablation_sweep("view_sharing.json", d, out, log);
  const double different = mean_of(views.rows, "false"), shared = mean_of(views.rows, "true");
  const bool a = different > shared;

  const auto ratio = run_ablation_sweep("masking_ratio.json", d, out, log);
  const double r015 = mean_of(ratio.rows, "0.15"), r09 = mean_of(ratio.rows, "0.9");
  const bool b = r015 >= r09;

  // (c) stem kernels: full config vs naive masking, same seeds and schedule
  std::size_t full_zero = 0, naive_zero = 0;
  const RunConfig full = load_profile("ablation_base.json", d);
  RunConfig naive = full;
  naive.augment.highpass_enabled = false;
  naive.mask.noise_std_min = naive.mask.noise_std_max = 0.0;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    RunConfig f = full, n = naive;
    f.seed = n.seed = seed;
    // the full run for this seed already exists as a view-sharing cell
    const fs::path cell = out / "view_sharing" / detail::cell_name("mask.shared_view", false, seed);
    const auto fnet = load_checkpoint(cell / (output_prefix(f) + "-final.ckpt")).online;
    TrainOptions opt;
    opt.out_dir = out / "naive" / ("seed" + std::to_string(seed));
    opt.log = &log;
    const auto nnet = Trainer(n, d.train).run(opt).online;
    export_kernel_grid(fnet, opt.out_dir / "full_kernels.png", opt.out_dir / "full_kernels.csv");
    const std::size_t fz = count_near_zero_kernels(kernel_variances(first_layer_kernels(fnet)));
    const std::size_t nz = count_near_zero_kernels(
        export_kernel_grid(nnet, opt.out_dir / "naive_kernels.png", opt.out_dir / "naive_kernels.csv"));
    log << "seed " << seed << ": near-zero stem kernels full " << fz << ", naive " << nz << "\n";
    full_zero += fz;
    naive_zero += nz;
  }
  const bool c = full_zero < naive_zero;
  const double s = seconds_since(t0);

  Outcome o;
  o.passed = a && b && c && s < 3 * 3600.0;
  o.detail = std::string("(a) ") + (a ? "ok" : "FAIL") + " different " + fmt(different) +
             " vs shared " + fmt(shared) + "; (b) " + (b ? "ok" : "FAIL") + " ratio0.15 " +
             fmt(r015) + " vs 0.9 " + fmt(r09) + "; (c) " + (c ? "ok" : "FAIL") +
             " near-zero kernels full " + std::to_string(full_zero) + " vs naive " +
             std::to_string(naive_zero) + "; " + fmt(s / 60, 1) + " min (limit 180 min)";
  return o;
}

Outcome criterion_byol(const fs::path& work, std::ostream& log) {
  const Data& d = shapes_data(work);
  RunConfig cfg = load_profile("desk_byol.json", d);
  Trainer t(cfg, d.train);
  const std::size_t spe = t.steps_per_epoch();
  double worst_target_grad = 0;
  std::size_t steps = 0;
  TrainOptions opt;
  opt.max_steps = spe;  // epoch 1 of the desk run
  opt.log = &log;
  opt.on_step = [&](const StepEvent& e) {
    worst_target_grad = std::max(worst_target_grad, e.target_grad_max_abs);
    ++steps;
  };
  const auto r = t.run(opt);
  const double std_after = r.metrics.back().embedding_std;
  // also on held-out images in eval mode, through the projector
  Network<float> net = r.online;
  std::vector<std::size_t> idx(256);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Dataset sub = d.val.subset(idx);
  const auto f = extract_features(net, sub, cfg.augment);
  Tape<float> tape(false);
  const auto& z = tape.value(l2_normalize(
      tape, projector_forward(tape, net, tape.constant(f), Mode::eval)));
  const double std_eval = embedding_std(z);
  Outcome o;
  o.passed = std_after > 1e-3 && std_eval > 1e-3 && worst_target_grad == 0.0 && steps == spe;
  std::ostringstream os;
  os << "embedding std after epoch 1: " << std::scientific << std::setprecision(3) << std_after
     << " (train batch), " << std_eval << " (val, eval mode); max |target grad| over " << steps
     << " steps = " << worst_target_grad;
  o.detail = os.str();
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria runner"};
  std::vector<int> selected;
  std::string work = "acceptance_work";
  app.add_option("--criteria", selected, "criteria to run (default: all)")->delimiter(',');
  app.add_option("--work", work, "scratch directory for datasets and runs");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  const fs::path wd = fs::absolute(work);
  fs::create_directories(wd);

  std::ofstream logfile(wd / "acceptance.log", std::ios::app);
  std::ostream& log = logfile;

  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria = {
      {1, {"gradient oracle", [&] { return criterion_gradients(log); }}},
      {2, {"loss closed forms", [&] { return criterion_losses(log); }}},
      {3, {"mask statistics", [&] { return criterion_masks(log); }}},
      {4, {"high-pass null property", [&] { return criterion_highpass(log); }}},
      {5, {"determinism and resume", [&] { return criterion_determinism(wd, log); }}},
      {6, {"EMA schedule", [&] { return criterion_ema(log); }}},
      {7, {"desk SimCLR run", [&] { return criterion_desk_run(wd, log); }}},
      {8, {"ablation trends", [&] { return criterion_ablations(wd, log); }}},
      {9, {"BYOL non-collapse", [&] { return criterion_byol(wd, log); }}},
  };

  bool all_ok = true;
  for (int id : selected) {
    const auto it = criteria.find(id);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << id << "\n";
      return 2;
    }
    log << "==== criterion " << id << ": " << it->second.first << "\n";
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all_ok = all_ok && o.passed;
    std::cout << (o.passed ? "PASS" : "FAIL") << " [" << id << "] " << it->second.first << ": "
              << o.detail << "  (" << fmt(seconds_since(t0), 1) << " s)" << std::endl;
    log << (o.passed ? "PASS" : "FAIL") << " [" << id << "] " << o.detail << "\n" << std::flush;
  }
  return all_ok ? 0 : 1;
}
