#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mscn/data/dataset.hpp"
#include "mscn/mask/views.hpp"
#include "mscn/models/network.hpp"
#include "mscn/objectives/losses.hpp"
#include "mscn/train/checkpoint.hpp"
#include "mscn/train/config.hpp"
#include "mscn/train/optim.hpp"
#include "mscn/train/schedule.hpp"

namespace mscn {

inline constexpr const char* kMetricsHeader = "epoch,step,loss,lr,ema_tau,embedding_std,wall_ms";

struct MetricsRow {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  double loss = 0;
  double lr = 0;
  std::optional<double> ema_tau;
  double embedding_std = 0;
  double wall_ms = 0;

  std::string csv() const {
    std::ostringstream os;
    os << std::setprecision(17) << epoch << ',' << step << ',' << loss << ',' << lr << ',';
    if (ema_tau) os << *ema_tau;
    os << ',' << embedding_std << ',' << std::setprecision(6) << std::fixed << wall_ms;
    return os.str();
  }
};

struct StepEvent {
  const MetricsRow& row;
  // Largest |grad| over target-network parameters after backward (BYOL only).
  double target_grad_max_abs = 0;
};

struct TrainOptions {
  // Empty: no files are written.
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  // Overrides run.max_steps when non-zero.
  std::size_t max_steps = 0;
  std::function<void(const StepEvent&)> on_step;
  std::ostream* log = nullptr;
};

struct TrainResult {
  Network<float> online;
  std::vector<MetricsRow> metrics;
  Checkpoint checkpoint;
  bool complete = false;
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_path;
};

/// File stem for every output of a run: "mscn-<first 8 hex digits of the config hash>".
inline std::string output_prefix(const RunConfig& cfg) {
  return "mscn-" + hash_hex(config_hash(cfg), 8);
}

namespace detail {

inline std::string view_statistics(const std::vector<std::vector<MaskedView>>& views,
                                   const std::vector<std::size_t>& samples) {
  std::ostringstream os;
  os << "sample,view,branch,mask,masked_fraction,noise_std,mean,std,min,max,finite\n";
  for (std::size_t i = 0; i < views.size(); ++i)
    for (std::size_t k = 0; k < views[i].size(); ++k) {
      const auto& v = views[i][k];
      double s = 0, sq = 0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (float x : v.image.data) {
        s += x;
        sq += double(x) * x;
        lo = std::min<double>(lo, x);
        hi = std::max<double>(hi, x);
      }
      const double n = static_cast<double>(v.image.size()), m = s / n;
      os << samples[i] << ',' << k << ',' << (v.branch == Branch::a ? 'A' : 'B') << ','
         << to_string(v.mask.kind) << ',' << v.mask.masked_fraction() << ',' << v.noise_std << ','
         << m << ',' << std::sqrt(std::max(0.0, sq / n - m * m)) << ',' << lo << ',' << hi << ','
         << (v.image.all_finite() ? 1 : 0) << '\n';
    }
  return os.str();
}

}  // namespace detail

/// SimCLR / BYOL pretraining over masked views.
class Trainer {
 public:
  Trainer(RunConfig cfg, const Dataset& data) : cfg_(std::move(cfg)), data_(data) {
    cfg_.validate();
    spe_ = data_.size() / cfg_.schedule.batch_size;
    require<ConfigError>(spe_ >= 1, "dataset of ", data_.size(),
                         " images is smaller than one batch of ", cfg_.schedule.batch_size);
    for (const auto& img : data_.images)
      require<ConfigError>(!img.highpassed, "training images must be raw (not high-passed)");
    online_ = init_network<float>(cfg_.model, cfg_.seed);
    opt_ = Optimizer<float>(cfg_.optimizer);
    if (byol()) {
      ModelConfig tcfg = cfg_.model;
      tcfg.with_predictor = false;
      target_ = init_network<float>(tcfg, cfg_.seed);
      // the target starts as an exact copy of the online encoder and projector
      for (auto& p : target_->params) p.value = online_.params.at(p.name).value;
      ema_tau_ = cfg_.loss.ema_initial;
    }
  }

  const RunConfig& config() const { return cfg_; }
  std::size_t steps_per_epoch() const { return spe_; }
  std::size_t total_steps() const { return spe_ * cfg_.schedule.epochs; }
  std::uint64_t epoch() const { return epoch_; }
  std::uint64_t step() const { return step_; }
  const Network<float>& online() const { return online_; }
  const std::optional<Network<float>>& target() const { return target_; }
  bool byol() const { return cfg_.loss.objective == Objective::byol; }

  double lr_at(std::size_t step) const { return cosine_warmup_lr(cfg_.schedule, step, spe_); }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.config_hash = config_hash(cfg_);
    c.config_json = canonical_config(cfg_);
    c.epoch = epoch_;
    c.step = step_;
    c.rng_states.emplace_back("shuffle", make_stream(cfg_.seed, "shuffle", epoch_).state());
    c.online = online_;
    c.optimizer_kind = to_string(cfg_.optimizer.kind);
    c.optimizer_buffers = opt_.buffers();
    if (target_) {
      c.target = *target_;
      c.ema_tau = ema_tau_;
      c.ema_step = ema_step_;
    }
    return c;
  }

  void restore(const Checkpoint& c) {
    require_matching_config(c, cfg_);
    require<CorruptionError>(c.epoch <= cfg_.schedule.epochs && c.step == c.epoch * spe_,
                             "checkpoint position (epoch ", c.epoch, ", step ", c.step,
                             ") is inconsistent with ", spe_, " steps per epoch");
    for (const auto& [name, st] : c.rng_states)
      if (name == "shuffle")
        require<CorruptionError>(st == make_stream(cfg_.seed, "shuffle", c.epoch).state(),
                                 "checkpoint shuffle stream does not match its epoch");
    require<CorruptionError>(c.online.params.size() == online_.params.size(),
                             "checkpoint parameter count mismatch");
    online_.params = c.online.params;
    online_.bn = c.online.bn;
    opt_.buffers() = c.optimizer_buffers;
    require<CorruptionError>(c.target.has_value() == byol(), "checkpoint target network mismatch");
    if (c.target) {
      target_->params = c.target->params;
      target_->bn = c.target->bn;
      ema_tau_ = c.ema_tau;
      ema_step_ = c.ema_step;
    }
    epoch_ = c.epoch;
    step_ = c.step;
  }

  /// Views for one batch, indexed [sample][view].
  std::vector<std::vector<MaskedView>> batch_views(const std::vector<std::size_t>& samples,
                                                   std::uint64_t epoch) const {
    std::vector<std::vector<MaskedView>> views(samples.size());
    const std::size_t workers = cfg_.run.deterministic ? 1 : cfg_.run.workers;
    parallel_for(samples.size(), workers, [&](std::size_t i) {
      views[i] = generate_views(data_.images[samples[i]], cfg_.augment, cfg_.mask, cfg_.seed,
                                epoch, samples[i]);
    });
    return views;
  }

  /// One optimizer step on the given samples. Throws NumericError on
  /// non-finite loss or gradients after writing a dump when `dump` is set.
  MetricsRow train_step(const std::vector<std::size_t>& samples, std::uint64_t epoch,
                        double& target_grad_max,
                        const std::optional<std::filesystem::path>& dump = std::nullopt) {
    const std::size_t B = samples.size(), K = cfg_.mask.num_masked_views, V = K + 1;
    const std::size_t S = cfg_.augment.output_size, pix = 3 * S * S;
    const auto views = batch_views(samples, epoch);
    Tensor<float> x({V * B, 3, S, S});
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t k = 0; k < V; ++k)
        std::copy(views[i][k].image.data.begin(), views[i][k].image.data.end(),
                  x.ptr() + (k * B + i) * pix);

    const double lr = lr_at(step_);
    MetricsRow row;
    row.epoch = epoch;
    row.step = step_;
    row.lr = lr;
    try {
      online_.params.zero_grad();
      if (target_) target_->params.zero_grad();
      Tape<float> tape(true);
      Var input = tape.constant(std::move(x));
      Var z = l2_normalize(tape, projector_forward(tape, online_,
                                                   encoder_forward(tape, online_, input, Mode::train),
                                                   Mode::train));
      row.embedding_std = embedding_std(tape.value(z));
      std::optional<Var> total;
      if (!byol()) {
        Var zb = slice_rows(tape, z, K * B, B);
        for (std::size_t k = 0; k < K; ++k) {
          Var l = info_nce_loss(tape, slice_rows(tape, z, k * B, B), zb, cfg_.loss.temperature);
          total = total ? add(tape, *total, l) : l;
        }
      } else {
        Var p = l2_normalize(tape, predictor_forward(tape, online_, z, Mode::train));
        Network<float>& tn = *target_;
        Var zt = detach(tape, l2_normalize(tape, projector_forward(
                                                     tape, tn,
                                                     encoder_forward(tape, tn, input, Mode::train),
                                                     Mode::train)));
        Var pb = slice_rows(tape, p, K * B, B), tb = slice_rows(tape, zt, K * B, B);
        for (std::size_t k = 0; k < K; ++k) {
          Var l = byol_symmetric_loss(tape, slice_rows(tape, p, k * B, B), tb, pb,
                                      slice_rows(tape, zt, k * B, B));
          total = total ? add(tape, *total, l) : l;
        }
      }
      Var loss = scale(tape, *total, 1.0f / static_cast<float>(K));
      row.loss = tape.value(loss)[0];
      if (!std::isfinite(row.loss)) throw NumericError("non-finite loss");
      tape.backward(loss);
    } catch (const NumericError& e) {
      halt(e.what(), views, samples, dump);
    }
    target_grad_max = 0;
    if (target_)
      for (const auto& p : target_->params)
        for (float g : p.grad.data()) target_grad_max = std::max<double>(target_grad_max, std::abs(g));

    const StepReport rep = opt_.step(online_.params, lr);
    if (!rep.ok) halt("non-finite gradient for " + rep.non_finite_param, views, samples, dump);
    if (target_) {
      const std::size_t last = std::max<std::size_t>(1, total_steps() - 1);
      const double t = std::min(1.0, static_cast<double>(step_) / static_cast<double>(last));
      ema_tau_ = ema_momentum(t, cfg_.loss.ema_initial, cfg_.loss.ema_final);
      ema_blend(target_->params, online_.params, ema_tau_);
      ++ema_step_;
      row.ema_tau = ema_tau_;
    }
    ++step_;
    return row;
  }

  TrainResult run(const TrainOptions& opts = {}) {
    const bool files = !opts.out_dir.empty();
    const std::string prefix = output_prefix(cfg_);
    TrainResult res;
    if (files) std::filesystem::create_directories(opts.out_dir);
    const auto metrics_final = files ? opts.out_dir / (prefix + ".metrics.csv") : std::filesystem::path{};
    auto metrics_tmp = metrics_final;
    metrics_tmp += ".incomplete";

    if (opts.resume) restore(load_checkpoint(*opts.resume));

    std::ofstream csv;
    if (files) {
      std::ofstream(opts.out_dir / (prefix + ".config.json")) << to_json(cfg_).dump(2) << "\n";
      std::vector<std::string> kept;
      if (step_ > 0) kept = previous_rows(metrics_final, metrics_tmp, step_);
      csv.open(metrics_tmp, std::ios::trunc);
      if (!csv) throw IoError("cannot write metrics " + metrics_tmp.string());
      csv << kMetricsHeader << '\n';
      for (const auto& l : kept) csv << l << '\n';
      csv.flush();
      std::filesystem::remove(metrics_final);
    }

    const std::size_t cap = opts.max_steps ? opts.max_steps : cfg_.run.max_steps;
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t B = cfg_.schedule.batch_size;
    bool stopped = false;
    const auto dump = files ? std::optional(opts.out_dir / (prefix + ".nan_dump.csv")) : std::nullopt;
    while (epoch_ < cfg_.schedule.epochs && !stopped) {
      const auto order = epoch_order(data_.size(), cfg_.seed, epoch_);
      double epoch_loss = 0;
      std::size_t epoch_steps = 0;
      for (std::size_t s = step_ - epoch_ * spe_; s < spe_; ++s) {
        if (cap && step_ >= cap) {
          stopped = true;
          break;
        }
        std::vector<std::size_t> samples(order.begin() + static_cast<std::ptrdiff_t>(s * B),
                                         order.begin() + static_cast<std::ptrdiff_t>((s + 1) * B));
        double tg = 0;
        MetricsRow row = train_step(samples, epoch_, tg, dump);
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (csv.is_open()) {
          csv << row.csv() << '\n';
          csv.flush();
        }
        epoch_loss += row.loss;
        ++epoch_steps;
        res.metrics.push_back(row);
        if (opts.on_step) opts.on_step(StepEvent{res.metrics.back(), tg});
      }
      if (stopped) break;
      ++epoch_;
      if (opts.log && epoch_steps)
        *opts.log << "epoch " << epoch_ << "/" << cfg_.schedule.epochs << " loss "
                  << std::setprecision(6) << epoch_loss / static_cast<double>(epoch_steps) << " emb_std "
                  << res.metrics.back().embedding_std << " lr " << res.metrics.back().lr << " "
                  << std::fixed << std::setprecision(1) << res.metrics.back().wall_ms / 1000.0
                  << "s" << std::defaultfloat << std::setprecision(6) << std::endl;
      const bool last = epoch_ == cfg_.schedule.epochs;
      const auto every = cfg_.run.checkpoint_every;
      if (files && !last && every && epoch_ % every == 0) {
        std::ostringstream name;
        name << prefix << "-e" << std::setw(4) << std::setfill('0') << epoch_ << ".ckpt";
        save_checkpoint(checkpoint(), opts.out_dir / name.str());
      }
    }
    res.complete = epoch_ == cfg_.schedule.epochs;
    res.checkpoint = checkpoint();
    if (files) {
      csv.close();
      if (res.complete) {
        std::filesystem::rename(metrics_tmp, metrics_final);
        res.metrics_path = metrics_final;
        res.checkpoint_path = opts.out_dir / (prefix + "-final.ckpt");
      } else {
        res.metrics_path = metrics_tmp;
        std::ostringstream name;
        name << prefix << "-s" << std::setw(6) << std::setfill('0') << step_ << ".ckpt.incomplete";
        res.checkpoint_path = opts.out_dir / name.str();
      }
      // mid-epoch snapshots cannot be resumed from; their name says so
      if (res.complete) {
        save_checkpoint(res.checkpoint, res.checkpoint_path);
      } else {
        std::ofstream out(res.checkpoint_path, std::ios::binary);
        const auto bytes = serialize_checkpoint(res.checkpoint);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      }
    }
    res.online = online_;
    return res;
  }

 private:
  [[noreturn]] void halt(const std::string& why, const std::vector<std::vector<MaskedView>>& views,
                         const std::vector<std::size_t>& samples,
                         const std::optional<std::filesystem::path>& dump) const {
    std::string where;
    if (dump) {
      std::ofstream out(*dump);
      out << "# step " << step_ << " epoch " << epoch_ << ": " << why << "\n"
          << detail::view_statistics(views, samples);
      where = "; view statistics written to " + dump->string();
    }
    throw NumericError(detail::concat("training halted at step ", step_, ": ", why, where));
  }

  static std::vector<std::string> previous_rows(const std::filesystem::path& a,
                                                const std::filesystem::path& b,
                                                std::uint64_t before_step) {
    std::vector<std::string> rows;
    for (const auto& p : {a, b}) {
      std::ifstream in(p);
      if (!in) continue;
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) continue;
        if (std::stoull(line.substr(c1 + 1, c2 - c1 - 1)) < before_step) rows.push_back(line);
      }
      if (!rows.empty()) break;
    }
    return rows;
  }

  RunConfig cfg_;
  const Dataset& data_;
  std::size_t spe_ = 0;
  Network<float> online_;
  std::optional<Network<float>> target_;
  Optimizer<float> opt_;
  double ema_tau_ = 0;
  std::uint64_t ema_step_ = 0;
  std::uint64_t epoch_ = 0;
  std::uint64_t step_ = 0;
};

}  // namespace mscn
