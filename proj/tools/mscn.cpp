#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mscn/data/synthetic.hpp"
#include "mscn/eval/kernels.hpp"
#include "mscn/eval/probe.hpp"
#include "mscn/eval/sweep.hpp"
#include "mscn/mask/views.hpp"
#include "mscn/train/trainer.hpp"
#include "mscn/verify/checks.hpp"

namespace fs = std::filesystem;
using namespace mscn;

namespace {

constexpr int kExitOk = 0, kExitFailure = 1, kExitUsage = 2;

/// Common config resolution: defaults, then the file, then MSCN_SEED, then
/// flags. Every overridden key is logged with its source.
struct ConfigSources {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> workers;
  std::optional<bool> deterministic;
  std::optional<std::string> data;
  std::vector<std::string> sets;  // dotted.key=json
  // Dedicated flags that map onto a config key: (dotted.key=json, flag name).
  std::vector<std::pair<std::string, std::string>> flag_sets;

  void add_to(CLI::App* cmd, bool training = true) {
    cmd->add_option("--config", config_path, "run config JSON (defaults if omitted)");
    cmd->add_option("--seed", seed, "override the config seed");
    cmd->add_option("--data", data, "override data.manifest");
    cmd->add_option("--set", sets, "override any config key: dotted.key=json_value");
    if (!training) return;
    cmd->add_option("--epochs", epochs, "override schedule.epochs");
    cmd->add_option("--workers", workers, "view-generation threads (run.workers)");
    cmd->add_flag("--deterministic,!--no-deterministic", deterministic,
                  "force single-threaded, bit-reproducible execution");
  }
};

void log_key(const std::string& key, const Json& value, const std::string& source) {
  std::cerr << "[config] " << key << " = " << value.dump() << "  (" << source << ")\n";
}

Json apply_set(Json j, const std::string& assignment, const std::string& source = "flag --set") {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw CLI::ValidationError("--set", "expected dotted.key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;  // bare strings need no quotes
  std::string ptr = "/" + key;
  std::replace(ptr.begin(), ptr.end(), '.', '/');
  const Json::json_pointer jp(ptr);
  require<ConfigError>(j.contains(jp), "unknown config key '", key, "' in --set");
  j[jp] = value;
  log_key(key, value, source);
  return j;
}

RunConfig resolve_config(const ConfigSources& s, const RunConfig* fallback = nullptr) {
  RunConfig cfg;
  if (!s.config_path.empty()) {
    cfg = load_config(s.config_path);
    std::cerr << "[config] file " << s.config_path << "\n";
  } else if (fallback) {
    cfg = *fallback;
    std::cerr << "[config] taken from checkpoint\n";
  } else {
    std::cerr << "[config] built-in defaults\n";
  }
  Json j = to_json(cfg);
  if (const char* env = std::getenv("MSCN_SEED"); env && *env) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(env, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require<ConfigError>(used == std::string(env).size(), "MSCN_SEED must be an unsigned integer, got '",
                         env, "'");
    j["seed"] = v;
    log_key("seed", v, "env MSCN_SEED");
  }
  if (s.seed) j["seed"] = *s.seed, log_key("seed", *s.seed, "flag --seed");
  if (s.epochs) j["schedule"]["epochs"] = *s.epochs, log_key("schedule.epochs", *s.epochs, "flag --epochs");
  if (s.workers) j["run"]["workers"] = *s.workers, log_key("run.workers", *s.workers, "flag --workers");
  if (s.deterministic)
    j["run"]["deterministic"] = *s.deterministic,
    log_key("run.deterministic", *s.deterministic, "flag --deterministic");
  if (s.data) j["data"]["manifest"] = *s.data, log_key("data.manifest", *s.data, "flag --data");
  for (const auto& [a, flag] : s.flag_sets) j = apply_set(std::move(j), a, "flag " + flag);
  for (const auto& a : s.sets) j = apply_set(std::move(j), a);
  cfg = config_from_json(j);
  cfg.validate();
  std::cerr << "[config] seed " << cfg.seed << ", hash " << hash_hex(config_hash(cfg)) << "\n";
  return cfg;
}

std::pair<Dataset, Dataset> load_data(const RunConfig& cfg) {
  const auto m = load_manifest(cfg.data.manifest);
  const std::size_t workers = cfg.run.deterministic ? 1 : cfg.run.workers;
  Dataset train = load_split(m, cfg.data.train_split, workers);
  Dataset val = load_split(m, cfg.data.val_split, workers);
  require<ConfigError>(train.size() > 0, "split '", cfg.data.train_split, "' of ", cfg.data.manifest,
                       " is empty");
  require<ConfigError>(val.size() > 0, "split '", cfg.data.val_split, "' of ", cfg.data.manifest,
                       " is empty");
  std::cerr << "[data] " << train.size() << " train / " << val.size() << " val images, "
            << train.num_classes() << " classes\n";
  return {std::move(train), std::move(val)};
}

/// Writes via a .incomplete sibling so a crash never leaves a plausible file.
void write_text(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".incomplete";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string fraction_tag(double f) {
  std::ostringstream os;
  os << f;
  return os.str();
}

/// Checkpoint plus the config it should be interpreted with. A --config that
/// disagrees with the checkpoint is refused.
struct LoadedModel {
  Checkpoint ckpt;
  RunConfig cfg;
};

LoadedModel load_model(const std::string& ckpt_path, const ConfigSources& src) {
  LoadedModel m;
  m.ckpt = load_checkpoint(ckpt_path);
  const RunConfig stored = m.ckpt.config();
  if (!src.config_path.empty()) require_matching_config(m.ckpt, load_config(src.config_path));
  ConfigSources s = src;
  s.config_path.clear();
  m.cfg = resolve_config(s, &stored);
  // model identity comes from the checkpoint whatever the overrides say
  m.ckpt.online.config = stored.model;
  return m;
}

// ---- subcommands ----

struct SynthArgs {
  std::string out = "data/shapes";
  std::size_t per_class = 625, size = 64, workers = 1;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  SyntheticShapesSpec spec;
  spec.samples_per_class = a.per_class;
  spec.image_size = a.size;
  spec.seed = a.seed;
  const auto m = generate_synthetic_shapes(spec, a.out, a.workers);
  std::cout << "wrote " << m.entries.size() << " images to " << a.out << " (manifest "
            << (fs::path(a.out) / "manifest.json").string() << ", checksum "
            << hash_hex(dataset_checksum(m)) << ")\n";
  return kExitOk;
}

struct PreviewArgs {
  ConfigSources src;
  std::string image, out;
  std::optional<std::size_t> views;
  std::uint64_t sample = 0;
};

int cmd_preview(PreviewArgs a) {
  if (a.views) a.src.flag_sets.emplace_back("mask.num_masked_views=" + std::to_string(*a.views), "--views");
  const RunConfig cfg = resolve_config(a.src);
  const ImageTensor img = decode_image(a.image);
  fs::create_directories(a.out);
  const auto views = generate_views(img, cfg.augment, cfg.mask, cfg.seed, 0, a.sample);
  const std::string prefix = output_prefix(cfg);
  std::cout << std::left << std::setw(6) << "view" << std::setw(8) << "branch" << std::setw(7)
            << "type" << std::setw(8) << "groups" << std::setw(12) << "masked" << std::setw(12)
            << "expected" << "noise_std\n";
  for (std::size_t k = 0; k < views.size(); ++k) {
    const auto& v = views[k];
    const std::string stem = prefix + "-view" + std::to_string(k);
    write_png_rgb8(to_rgb8_stretched(v.image), fs::path(a.out) / (stem + ".png"));
    write_png_rgb8(to_rgb8(mask_overlay(v.mask)), fs::path(a.out) / (stem + "-mask.png"));
    std::string expected = "-";
    if (v.mask.kind == MaskKind::grid) {
      std::ostringstream e;
      e << std::fixed << std::setprecision(4)
        << double(masked_cell_count(cfg.mask.masking_ratio, v.mask.cells())) / double(v.mask.cells());
      expected = e.str();
    } else if (v.mask.kind == MaskKind::none) {
      expected = "0.0000";
    }
    std::cout << std::left << std::setw(6) << k << std::setw(8)
              << (v.branch == Branch::a ? "A" : "B") << std::setw(7) << to_string(v.mask.kind)
              << std::setw(8) << v.mask.groups << std::fixed << std::setprecision(4) << std::setw(12)
              << v.mask.masked_fraction() << std::setw(12) << expected << v.noise_std << '\n'
              << std::defaultfloat;
  }
  std::cout << "wrote " << 2 * views.size() << " PNGs to " << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  ConfigSources src;
  std::string out = "runs";
  std::string resume;
  std::optional<std::size_t> max_steps;
};

int cmd_train(const TrainArgs& a) {
  ConfigSources s = a.src;
  if (a.max_steps) s.flag_sets.emplace_back("run.max_steps=" + std::to_string(*a.max_steps), "--max-steps");
  const RunConfig cfg = resolve_config(s);
  const auto [train, val] = load_data(cfg);
  Trainer trainer(cfg, train);
  TrainOptions opt;
  opt.out_dir = a.out;
  if (!a.resume.empty()) opt.resume = a.resume;
  opt.log = &std::cerr;
  const auto res = trainer.run(opt);
  if (!res.complete) {
    std::cout << "stopped early at step " << res.checkpoint.step << "; partial outputs marked "
              << ".incomplete in " << a.out << "\n";
    return kExitOk;
  }
  std::cout << "training complete: " << res.metrics.size() << " steps, final checkpoint "
            << res.checkpoint_path.string() << ", metrics " << res.metrics_path.string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  ConfigSources src;
  std::string checkpoint, out = "runs";
  std::optional<double> label_fraction;
  std::optional<std::size_t> epochs;
};

int cmd_probe(const EvalArgs& a) {
  ConfigSources s = a.src;
  if (a.label_fraction) s.flag_sets.emplace_back("eval.probe.label_fraction=" + Json(*a.label_fraction).dump(), "--label-fraction");
  if (a.epochs) s.flag_sets.emplace_back("eval.probe.epochs=" + std::to_string(*a.epochs), "--epochs");
  const auto m = load_model(a.checkpoint, s);
  const auto [train, val] = load_data(m.cfg);
  const auto before = parameter_checksum(m.ckpt.online.params, "encoder.");
  const auto r = linear_probe(m.ckpt.online, train, val, m.cfg.eval.probe, m.cfg.augment, m.cfg.seed);
  require(parameter_checksum(m.ckpt.online.params, "encoder.") == before,
          "linear probe modified the encoder");
  const std::string prefix = output_prefix(m.ckpt.config());
  fs::create_directories(a.out);
  const fs::path path =
      fs::path(a.out) / (prefix + ".probe-f" + fraction_tag(m.cfg.eval.probe.label_fraction) + ".json");
  Json j = {{"checkpoint", a.checkpoint},
            {"config_hash", hash_hex(m.ckpt.config_hash)},
            {"accuracy", r.accuracy},
            {"train_accuracy", r.train_accuracy},
            {"train_samples", r.train_samples},
            {"label_fraction", m.cfg.eval.probe.label_fraction},
            {"epochs", m.cfg.eval.probe.epochs},
            {"epoch_loss", r.epoch_loss},
            {"encoder_checksum", hash_hex(before)}};
  write_text(path, j.dump(2) + "\n");
  std::cout << "probe accuracy " << std::fixed << std::setprecision(4) << r.accuracy << " (train "
            << r.train_accuracy << ", " << r.train_samples << " labelled samples) -> "
            << path.string() << "\n";
  return kExitOk;
}

int cmd_finetune(const EvalArgs& a) {
  ConfigSources s = a.src;
  if (a.label_fraction)
    s.flag_sets.emplace_back("eval.finetune.label_fraction=" + Json(*a.label_fraction).dump(),
                             "--label-fraction");
  if (a.epochs) s.flag_sets.emplace_back("eval.finetune.epochs=" + std::to_string(*a.epochs), "--epochs");
  const auto m = load_model(a.checkpoint, s);
  const auto [train, val] = load_data(m.cfg);
  const auto before = parameter_checksum(m.ckpt.online.params, "encoder.");
  const auto r = finetune(m.ckpt.online, train, val, m.cfg.eval.finetune, m.cfg.augment, m.cfg.seed);
  const auto after = parameter_checksum(r.network.params, "encoder.");
  const std::string prefix = output_prefix(m.ckpt.config());
  fs::create_directories(a.out);
  const fs::path path = fs::path(a.out) / (prefix + ".finetune-f" +
                                           fraction_tag(m.cfg.eval.finetune.label_fraction) + ".json");
  Json trace = Json::array();
  for (std::size_t e = 0; e < r.lr_trace.size(); ++e)
    trace.push_back({{"epoch", e}, {"encoder_lr", r.lr_trace[e].first}, {"classifier_lr", r.lr_trace[e].second}});
  Json j = {{"checkpoint", a.checkpoint},
            {"config_hash", hash_hex(m.ckpt.config_hash)},
            {"accuracy", r.accuracy},
            {"label_fraction", m.cfg.eval.finetune.label_fraction},
            {"epochs", m.cfg.eval.finetune.epochs},
            {"epoch_loss", r.epoch_loss},
            {"lr_trace", trace},
            {"encoder_checksum_before", hash_hex(before)},
            {"encoder_checksum_after", hash_hex(after)}};
  write_text(path, j.dump(2) + "\n");
  std::cout << "finetune accuracy " << std::fixed << std::setprecision(4) << r.accuracy << " -> "
            << path.string() << "\n";
  return kExitOk;
}

int cmd_kernels(const EvalArgs& a) {
  const auto m = load_model(a.checkpoint, a.src);
  const std::string prefix = output_prefix(m.ckpt.config());
  fs::create_directories(a.out);
  const fs::path png = fs::path(a.out) / (prefix + ".kernels.png");
  const fs::path csv = fs::path(a.out) / (prefix + ".kernels.csv");
  const auto var = export_kernel_grid(m.ckpt.online, png, csv);
  std::cout << var.size() << " stem kernels, " << count_near_zero_kernels(var)
            << " near-zero (variance < 1% of median) -> " << png.string() << ", " << csv.string()
            << "\n";
  return kExitOk;
}

struct SweepArgs {
  std::string spec, out = "runs/sweeps";
  bool resume = false;
  std::optional<std::string> data;
};

int cmd_sweep(const SweepArgs& a) {
  std::ifstream in(a.spec);
  if (!in) throw IoError("sweep spec not found: " + a.spec);
  std::stringstream ss;
  ss << in.rdbuf();
  const Json j = Json::parse(ss.str(), nullptr, false);
  require<ConfigError>(!j.is_discarded(), "sweep spec ", a.spec, " is not valid JSON");
  SweepSpec spec = parse_sweep_spec(j, fs::path(a.spec).parent_path());
  if (a.data) {
    spec.base.data.manifest = *a.data;
    log_key("data.manifest", *a.data, "flag --data");
  }
  if (const char* env = std::getenv("MSCN_SEED"); env && *env)
    std::cerr << "[config] MSCN_SEED ignored by sweep: replicate seeds come from the sweep file\n";
  const auto [train, val] = load_data(spec.base);
  SweepOptions opt;
  opt.resume = a.resume;
  opt.log = &std::cerr;
  const auto r = run_sweep(spec, train, val, a.out, opt);
  std::cout << r.summary << "results: " << r.csv_path.string() << "\n";
  const bool any_failed = std::any_of(r.rows.begin(), r.rows.end(),
                                      [](const SweepRow& row) { return !std::isfinite(row.probe_acc); });
  return any_failed ? kExitFailure : kExitOk;
}

struct SelftestArgs {
  std::string fault;
  bool list = false;
};

int cmd_selftest(const SelftestArgs& a) {
  const auto names = verify::fault_names();
  if (a.list) {
    for (const auto& n : names) std::cout << n << "\n";
    return kExitOk;
  }
  if (!a.fault.empty() && std::find(names.begin(), names.end(), a.fault) == names.end())
    throw CLI::ValidationError("--inject-fault", "unknown check '" + a.fault + "' (see --list-faults)");
  const auto rows = verify::selftest_suite(a.fault);
  verify::print_table(std::cout, rows);
  std::size_t failed = 0;
  double total = 0;
  for (const auto& r : rows) failed += !r.passed, total += r.seconds;
  std::cout << rows.size() - failed << "/" << rows.size() << " passed in " << std::fixed
            << std::setprecision(1) << total << " s\n";
  for (const auto& r : rows)
    if (!r.passed) std::cout << "failed: " << r.name << "\n";
  return failed ? kExitFailure : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked Siamese ConvNets: self-supervised pretraining and evaluation"};
  app.require_subcommand(1);
  int rc = kExitOk;

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate the synthetic shapes dataset");
  c_synth->add_option("--out", synth.out, "output directory")->capture_default_str();
  c_synth->add_option("--per-class", synth.per_class, "images per class")->capture_default_str();
  c_synth->add_option("--size", synth.size, "image side in pixels")->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  c_synth->add_option("--workers", synth.workers, "encoder threads")->capture_default_str();
  c_synth->callback([&] { rc = cmd_synth(synth); });

  PreviewArgs preview;
  auto* c_preview = app.add_subcommand("preview", "write augmented, masked views and mask overlays");
  preview.src.add_to(c_preview, false);
  c_preview->add_option("--image", preview.image, "input PNG")->required();
  c_preview->add_option("--out-dir,--out", preview.out, "output directory")->required();
  c_preview->add_option("--views", preview.views, "number of masked branch-A views (K)");
  c_preview->add_option("--sample", preview.sample, "sample index for stream selection")
      ->capture_default_str();
  c_preview->callback([&] { rc = cmd_preview(preview); });

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "self-supervised pretraining");
  train.src.add_to(c_train);
  c_train->add_option("--out", train.out, "output directory")->capture_default_str();
  c_train->add_option("--resume", train.resume, "checkpoint to resume from");
  c_train->add_option("--max-steps", train.max_steps, "stop after this many total steps");
  c_train->callback([&] { rc = cmd_train(train); });

  EvalArgs probe;
  auto* c_probe = app.add_subcommand("probe", "linear probe on frozen encoder features");
  probe.src.add_to(c_probe, false);
  c_probe->add_option("--checkpoint", probe.checkpoint, "pretrained checkpoint")->required();
  c_probe->add_option("--out", probe.out, "output directory")->capture_default_str();
  c_probe->add_option("--label-fraction", probe.label_fraction, "fraction of train labels used");
  c_probe->add_option("--epochs", probe.epochs, "probe epochs");
  c_probe->callback([&] { rc = cmd_probe(probe); });

  EvalArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "finetune encoder and classifier");
  ft.src.add_to(c_ft, false);
  c_ft->add_option("--checkpoint", ft.checkpoint, "pretrained checkpoint")->required();
  c_ft->add_option("--out", ft.out, "output directory")->capture_default_str();
  c_ft->add_option("--label-fraction", ft.label_fraction, "fraction of train labels used");
  c_ft->add_option("--epochs", ft.epochs, "finetune epochs");
  c_ft->callback([&] { rc = cmd_finetune(ft); });

  EvalArgs kern;
  auto* c_kern = app.add_subcommand("kernels", "export the stem kernel grid and variances");
  kern.src.add_to(c_kern, false);
  c_kern->add_option("--checkpoint", kern.checkpoint, "checkpoint")->required();
  c_kern->add_option("--out", kern.out, "output directory")->capture_default_str();
  c_kern->callback([&] { rc = cmd_kernels(kern); });

  SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep", "one-factor sweep: pretrain + probe per value and seed");
  c_sweep->add_option("--spec", sweep.spec, "sweep spec JSON")->required();
  c_sweep->add_option("--out", sweep.out, "output directory")->capture_default_str();
  c_sweep->add_flag("--resume", sweep.resume, "continue, skipping completed cells");
  c_sweep->add_option("--data", sweep.data, "override data.manifest of the base config");
  c_sweep->callback([&] { rc = cmd_sweep(sweep); });

  SelftestArgs st;
  auto* c_st = app.add_subcommand("selftest", "fast invariant suite");
  c_st->add_option("--inject-fault", st.fault, "sabotage one gradient check by name");
  c_st->add_flag("--list-faults", st.list, "list injectable check names");
  c_st->callback([&] { rc = cmd_selftest(st); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DecodeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CorruptionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return rc;
}
