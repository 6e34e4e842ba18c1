#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mscn/core/rng.hpp"
#include "mscn/image/augment.hpp"
#include "mscn/mask/mask.hpp"
#include "mscn/models/network.hpp"
#include "mscn/objectives/losses.hpp"
#include "mscn/train/optim.hpp"
#include "mscn/train/schedule.hpp"

namespace mscn {

inline constexpr int kConfigSchemaVersion = 1;

using Json = nlohmann::json;

struct DataConfig {
  std::string manifest = "data/shapes/manifest.json";
  std::string train_split = "train";
  std::string val_split = "val";
};

struct ProbeConfig {
  std::size_t epochs = 30;
  double base_lr = 0.3;
  std::size_t batch_size = 128;
  double label_fraction = 1.0;
  double momentum = 0.9;
  double weight_decay = 0.0;

  void validate() const {
    require<ConfigError>(epochs >= 1, "eval.probe.epochs must be >= 1");
    require<ConfigError>(base_lr > 0, "eval.probe.base_lr must be > 0");
    require<ConfigError>(batch_size >= 1, "eval.probe.batch_size must be >= 1");
    require<ConfigError>(label_fraction > 0 && label_fraction <= 1,
                         "eval.probe.label_fraction must lie in (0,1]");
    require<ConfigError>(momentum >= 0 && momentum < 1, "eval.probe.momentum must lie in [0,1)");
    require<ConfigError>(weight_decay >= 0, "eval.probe.weight_decay must be >= 0");
  }
};

struct FinetuneConfig {
  std::size_t epochs = 20;
  double encoder_lr = 0.002;
  double classifier_lr = 0.5;
  std::size_t batch_size = 64;
  double label_fraction = 1.0;
  double momentum = 0.9;
  double weight_decay = 0.0;
  // Learning rates are multiplied by decay_factor at these fractions of training.
  std::vector<double> decay_at{0.6, 0.8};
  double decay_factor = 0.2;

  void validate() const {
    require<ConfigError>(epochs >= 1, "eval.finetune.epochs must be >= 1");
    require<ConfigError>(encoder_lr >= 0 && classifier_lr > 0, "eval.finetune lrs must be > 0");
    require<ConfigError>(batch_size >= 2, "eval.finetune.batch_size must be >= 2");
    require<ConfigError>(label_fraction > 0 && label_fraction <= 1,
                         "eval.finetune.label_fraction must lie in (0,1]");
    require<ConfigError>(momentum >= 0 && momentum < 1, "eval.finetune.momentum must lie in [0,1)");
    for (double d : decay_at)
      require<ConfigError>(d > 0 && d < 1, "eval.finetune.decay_at entries must lie in (0,1)");
    require<ConfigError>(decay_factor > 0 && decay_factor <= 1,
                         "eval.finetune.decay_factor must lie in (0,1]");
  }
};

struct EvalConfig {
  ProbeConfig probe;
  FinetuneConfig finetune;
};

struct RunOptions {
  std::size_t checkpoint_every = 5;  // epochs; 0 = final only
  bool deterministic = true;
  std::size_t workers = 1;  // view-generation threads
  std::size_t max_steps = 0;  // 0 = no cap
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  AugmentationConfig augment;
  MaskConfig mask;
  ModelConfig model;
  LossConfig loss;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  EvalConfig eval;
  RunOptions run;

  void validate() const {
    augment.validate();
    mask.validate();
    model.validate();
    loss.validate();
    optimizer.validate();
    schedule.validate();
    eval.probe.validate();
    eval.finetune.validate();
    require<ConfigError>(model.encoder.input_size == augment.output_size,
                         "model.encoder.input_size (", model.encoder.input_size,
                         ") must equal augment.output_size (", augment.output_size, ")");
    require<ConfigError>(model.with_predictor == (loss.objective == Objective::byol),
                         "model.with_predictor must be true exactly for the byol objective");
    if (mask.grid_size != 0)
      require<ConfigError>(augment.output_size % mask.grid_size == 0, "mask.grid_size ",
                           mask.grid_size, " must divide augment.output_size ",
                           augment.output_size);
    require<ConfigError>(run.workers >= 1, "run.workers must be >= 1");
  }
};

namespace detail {

/// Reads the fields of one JSON object; anything left unread is an unknown key.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    require<ConfigError>(j.is_object(), "config section '", path_, "' must be an object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    if (!j_.contains(key)) return;
    seen_.push_back(key);
    const Json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<V, bool>) {
        require<ConfigError>(v.is_boolean(), "expected boolean");
      } else if constexpr (std::is_integral_v<V>) {
        require<ConfigError>(v.is_number_integer() && (std::is_signed_v<V> || v.get<long long>() >= 0),
                             "expected non-negative integer");
      } else if constexpr (std::is_floating_point_v<V>) {
        require<ConfigError>(v.is_number(), "expected number");
      }
      out = v.get<V>();
    } catch (const ConfigError& e) {
      throw ConfigError(detail::concat("config key '", path_, ".", key, "': ", e.what()));
    } catch (const Json::exception& e) {
      throw ConfigError(detail::concat("config key '", path_, ".", key, "': ", e.what()));
    }
  }

  template <typename F>
  void section(const char* key, F&& fn) {
    if (!j_.contains(key)) return;
    seen_.push_back(key);
    Reader r(j_.at(key), path_.empty() ? key : path_ + "." + key);
    fn(r);
    r.finish();
  }

  /// Marks `key` as known without reading it; true if present.
  bool claim(const char* key) {
    if (!j_.contains(key)) return false;
    seen_.push_back(key);
    return true;
  }

  void finish() const {
    std::vector<std::string> unknown;
    for (const auto& [k, v] : j_.items())
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end()) unknown.push_back(k);
    if (unknown.empty()) return;
    std::string msg = "unknown config key(s) in '" + (path_.empty() ? "<root>" : path_) + "':";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }

 private:
  const Json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table,
             const char* what) {
  for (const auto& [name, e] : table)
    if (s == name) return e;
  std::string opts;
  for (const auto& [name, e] : table) opts += std::string(opts.empty() ? "" : "|") + name;
  throw ConfigError(detail::concat("invalid ", what, " '", s, "' (expected ", opts, ")"));
}

}  // namespace detail

inline const char* to_string(Objective o) { return o == Objective::simclr ? "simclr" : "byol"; }

inline Json to_json(const RunConfig& c) {
  const auto& a = c.augment;
  const auto& m = c.mask;
  const auto& e = c.model.encoder;
  const auto& h = c.model.heads;
  const auto& p = c.eval.probe;
  const auto& f = c.eval.finetune;
  Json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["seed"] = c.seed;
  j["data"] = {{"manifest", c.data.manifest},
               {"train_split", c.data.train_split},
               {"val_split", c.data.val_split}};
  j["augment"] = {{"crop_scale_min", a.crop_scale_min},
                  {"crop_scale_max", a.crop_scale_max},
                  {"aspect_min", a.aspect_min},
                  {"aspect_max", a.aspect_max},
                  {"flip_prob", a.flip_prob},
                  {"jitter",
                   {{"brightness", a.jitter.brightness},
                    {"contrast", a.jitter.contrast},
                    {"saturation", a.jitter.saturation},
                    {"hue", a.jitter.hue},
                    {"apply_prob", a.jitter.apply_prob}}},
                  {"grayscale_prob", a.grayscale_prob},
                  {"blur",
                   {{"sigma_min", a.blur.sigma_min},
                    {"sigma_max", a.blur.sigma_max},
                    {"apply_prob", a.blur.apply_prob}}},
                  {"highpass_sigma", a.highpass_sigma},
                  {"highpass_enabled", a.highpass_enabled},
                  {"output_size", a.output_size}};
  j["mask"] = {{"masking_ratio", m.masking_ratio},
               {"grid_size", m.grid_size},
               {"focal_prob", m.focal_prob},
               {"focal_kept_min", m.focal_kept_min},
               {"focal_kept_max", m.focal_kept_max},
               {"channel_independent_prob", m.channel_independent_prob},
               {"noise_std_min", m.noise_std_min},
               {"noise_std_max", m.noise_std_max},
               {"branch_a", {{"mask_prob", m.branch_a.mask_prob}, {"blur_prob", m.branch_a.blur_prob}}},
               {"branch_b", {{"mask_prob", m.branch_b.mask_prob}, {"blur_prob", m.branch_b.blur_prob}}},
               {"num_masked_views", m.num_masked_views},
               {"shared_view", m.shared_view}};
  j["model"] = {{"encoder",
                 {{"input_size", e.input_size},
                  {"widths", e.widths},
                  {"blocks_per_stage", e.blocks_per_stage},
                  {"stem_kernel", e.stem_kernel},
                  {"residual", e.residual}}},
                {"projector", h.projector},
                {"predictor", h.predictor},
                {"projector_final_bn", h.projector_final_bn}};
  j["loss"] = {{"objective", to_string(c.loss.objective)},
               {"temperature", c.loss.temperature},
               {"ema_initial", c.loss.ema_initial},
               {"ema_final", c.loss.ema_final}};
  j["optimizer"] = {{"kind", to_string(c.optimizer.kind)},
                    {"momentum", c.optimizer.momentum},
                    {"weight_decay", c.optimizer.weight_decay},
                    {"trust_coefficient", c.optimizer.trust_coefficient},
                    {"eps", c.optimizer.eps},
                    {"adaptation", c.optimizer.adaptation}};
  j["schedule"] = {{"batch_size", c.schedule.batch_size},
                   {"epochs", c.schedule.epochs},
                   {"warmup_epochs", c.schedule.warmup_epochs},
                   {"base_lr", c.schedule.base_lr},
                   {"min_lr", c.schedule.min_lr}};
  j["eval"] = {{"probe",
                {{"epochs", p.epochs},
                 {"base_lr", p.base_lr},
                 {"batch_size", p.batch_size},
                 {"label_fraction", p.label_fraction},
                 {"momentum", p.momentum},
                 {"weight_decay", p.weight_decay}}},
               {"finetune",
                {{"epochs", f.epochs},
                 {"encoder_lr", f.encoder_lr},
                 {"classifier_lr", f.classifier_lr},
                 {"batch_size", f.batch_size},
                 {"label_fraction", f.label_fraction},
                 {"momentum", f.momentum},
                 {"weight_decay", f.weight_decay},
                 {"decay_at", f.decay_at},
                 {"decay_factor", f.decay_factor}}}};
  j["run"] = {{"checkpoint_every", c.run.checkpoint_every},
              {"deterministic", c.run.deterministic},
              {"workers", c.run.workers},
              {"max_steps", c.run.max_steps}};
  return j;
}

/// Strict parse: fields absent from `j` keep their defaults, unknown keys and
/// type mismatches are ConfigErrors. The result is validated.
inline RunConfig config_from_json(const Json& j) {
  RunConfig c;
  detail::Reader root(j, "");
  int version = -1;
  root.get("schema_version", version);
  require<ConfigError>(version == kConfigSchemaVersion, "config schema_version must be ",
                       kConfigSchemaVersion, ", got ", version);
  root.get("seed", c.seed);
  root.section("data", [&](detail::Reader& r) {
    r.get("manifest", c.data.manifest);
    r.get("train_split", c.data.train_split);
    r.get("val_split", c.data.val_split);
  });
  root.section("augment", [&](detail::Reader& r) {
    auto& a = c.augment;
    r.get("crop_scale_min", a.crop_scale_min);
    r.get("crop_scale_max", a.crop_scale_max);
    r.get("aspect_min", a.aspect_min);
    r.get("aspect_max", a.aspect_max);
    r.get("flip_prob", a.flip_prob);
    r.section("jitter", [&](detail::Reader& s) {
      s.get("brightness", a.jitter.brightness);
      s.get("contrast", a.jitter.contrast);
      s.get("saturation", a.jitter.saturation);
      s.get("hue", a.jitter.hue);
      s.get("apply_prob", a.jitter.apply_prob);
    });
    r.get("grayscale_prob", a.grayscale_prob);
    r.section("blur", [&](detail::Reader& s) {
      s.get("sigma_min", a.blur.sigma_min);
      s.get("sigma_max", a.blur.sigma_max);
      s.get("apply_prob", a.blur.apply_prob);
    });
    r.get("highpass_sigma", a.highpass_sigma);
    r.get("highpass_enabled", a.highpass_enabled);
    r.get("output_size", a.output_size);
  });
  root.section("mask", [&](detail::Reader& r) {
    auto& m = c.mask;
    r.get("masking_ratio", m.masking_ratio);
    r.get("grid_size", m.grid_size);
    r.get("focal_prob", m.focal_prob);
    r.get("focal_kept_min", m.focal_kept_min);
    r.get("focal_kept_max", m.focal_kept_max);
    r.get("channel_independent_prob", m.channel_independent_prob);
    r.get("noise_std_min", m.noise_std_min);
    r.get("noise_std_max", m.noise_std_max);
    auto branch = [](BranchOverrides& b) {
      return [&b](detail::Reader& s) {
        s.get("mask_prob", b.mask_prob);
        s.get("blur_prob", b.blur_prob);
      };
    };
    r.section("branch_a", branch(m.branch_a));
    r.section("branch_b", branch(m.branch_b));
    r.get("num_masked_views", m.num_masked_views);
    r.get("shared_view", m.shared_view);
  });
  root.section("model", [&](detail::Reader& r) {
    r.section("encoder", [&](detail::Reader& s) {
      auto& e = c.model.encoder;
      s.get("input_size", e.input_size);
      s.get("widths", e.widths);
      s.get("blocks_per_stage", e.blocks_per_stage);
      s.get("stem_kernel", e.stem_kernel);
      s.get("residual", e.residual);
    });
    r.get("projector", c.model.heads.projector);
    r.get("predictor", c.model.heads.predictor);
    r.get("projector_final_bn", c.model.heads.projector_final_bn);
  });
  root.section("loss", [&](detail::Reader& r) {
    std::string obj = to_string(c.loss.objective);
    r.get("objective", obj);
    c.loss.objective = detail::parse_enum<Objective>(
        obj, {{"simclr", Objective::simclr}, {"byol", Objective::byol}}, "loss.objective");
    r.get("temperature", c.loss.temperature);
    r.get("ema_initial", c.loss.ema_initial);
    r.get("ema_final", c.loss.ema_final);
  });
  root.section("optimizer", [&](detail::Reader& r) {
    std::string kind = to_string(c.optimizer.kind);
    r.get("kind", kind);
    c.optimizer.kind = detail::parse_enum<OptimizerKind>(
        kind, {{"lars", OptimizerKind::lars}, {"sgd_momentum", OptimizerKind::sgd_momentum}},
        "optimizer.kind");
    r.get("momentum", c.optimizer.momentum);
    r.get("weight_decay", c.optimizer.weight_decay);
    r.get("trust_coefficient", c.optimizer.trust_coefficient);
    r.get("eps", c.optimizer.eps);
    r.get("adaptation", c.optimizer.adaptation);
  });
  root.section("schedule", [&](detail::Reader& r) {
    r.get("batch_size", c.schedule.batch_size);
    r.get("epochs", c.schedule.epochs);
    r.get("warmup_epochs", c.schedule.warmup_epochs);
    r.get("base_lr", c.schedule.base_lr);
    r.get("min_lr", c.schedule.min_lr);
  });
  root.section("eval", [&](detail::Reader& r) {
    r.section("probe", [&](detail::Reader& s) {
      auto& p = c.eval.probe;
      s.get("epochs", p.epochs);
      s.get("base_lr", p.base_lr);
      s.get("batch_size", p.batch_size);
      s.get("label_fraction", p.label_fraction);
      s.get("momentum", p.momentum);
      s.get("weight_decay", p.weight_decay);
    });
    r.section("finetune", [&](detail::Reader& s) {
      auto& f = c.eval.finetune;
      s.get("epochs", f.epochs);
      s.get("encoder_lr", f.encoder_lr);
      s.get("classifier_lr", f.classifier_lr);
      s.get("batch_size", f.batch_size);
      s.get("label_fraction", f.label_fraction);
      s.get("momentum", f.momentum);
      s.get("weight_decay", f.weight_decay);
      s.get("decay_at", f.decay_at);
      s.get("decay_factor", f.decay_factor);
    });
  });
  root.section("run", [&](detail::Reader& r) {
    r.get("checkpoint_every", c.run.checkpoint_every);
    r.get("deterministic", c.run.deterministic);
    r.get("workers", c.run.workers);
    r.get("max_steps", c.run.max_steps);
  });
  root.finish();
  c.model.with_predictor = c.loss.objective == Objective::byol;
  c.validate();
  return c;
}

inline RunConfig parse_config(const std::string& text, const std::string& source = "<text>") {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config " + source + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

/// Canonical serialization: sorted keys, compact. Hash and checkpoint snapshot use it.
inline std::string canonical_config(const RunConfig& c) { return to_json(c).dump(); }

/// FNV-1a of the canonical form, excluding run-time-only knobs (workers,
/// max_steps, checkpoint cadence) that do not change the result.
inline std::uint64_t config_hash(const RunConfig& c) {
  Json j = to_json(c);
  j.erase("run");
  return fnv1a(j.dump());
}

inline std::string hash_hex(std::uint64_t h, std::size_t digits = 16) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str().substr(0, digits);
}

/// Dotted paths whose values differ, "path: a -> b", one per line.
inline std::vector<std::string> config_diff(const Json& a, const Json& b) {
  std::vector<std::string> out;
  for (const auto& op : Json::diff(a, b)) {
    const std::string ptr = op.at("path").get<std::string>();
    std::string dotted = ptr.substr(1);
    std::replace(dotted.begin(), dotted.end(), '/', '.');
    Json::json_pointer jp(ptr);
    const std::string before = a.contains(jp) ? a.at(jp).dump() : "<absent>";
    const std::string after = b.contains(jp) ? b.at(jp).dump() : "<absent>";
    out.push_back(dotted + ": " + before + " -> " + after);
  }
  return out;
}

}  // namespace mscn
