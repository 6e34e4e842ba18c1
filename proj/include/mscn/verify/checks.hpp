#pragma once

// Named invariant checks shared by `mscn selftest` and the acceptance runner.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mscn/data/synthetic.hpp"
#include "mscn/image/filters.hpp"
#include "mscn/mask/views.hpp"
#include "mscn/models/network.hpp"
#include "mscn/objectives/losses.hpp"
#include "mscn/tensor/gradcheck.hpp"
#include "mscn/train/trainer.hpp"

namespace mscn::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

/// Times `fn`; any exception counts as a failure with its message as detail.
inline CheckResult run_check(const std::string& name,
                             const std::function<bool(std::ostringstream&)>& fn) {
  CheckResult r;
  r.name = name;
  std::ostringstream detail;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    r.passed = fn(detail);
  } catch (const std::exception& e) {
    r.passed = false;
    detail << "exception: " << e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.detail = detail.str();
  return r;
}

inline void print_table(std::ostream& os, const std::vector<CheckResult>& rows) {
  std::size_t w = 4;
  for (const auto& r : rows) w = std::max(w, r.name.size());
  for (const auto& r : rows)
    os << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(static_cast<int>(w) + 2)
       << r.name << std::right << std::fixed << std::setprecision(2) << std::setw(8) << r.seconds
       << "s  " << r.detail << std::defaultfloat << '\n';
}

namespace detail {

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  Rng rng = make_stream(seed, "verify-tensor");
  for (auto& v : t.data()) v = rng.normal() * scale;
  return t;
}

inline Tensor<double> unit_rows(Tensor<double> t) {
  const std::size_t N = t.dim(0), D = t.dim(1);
  for (std::size_t n = 0; n < N; ++n) {
    double s = 0;
    for (std::size_t d = 0; d < D; ++d) s += t[n * D + d] * t[n * D + d];
    for (std::size_t d = 0; d < D; ++d) t[n * D + d] /= std::sqrt(s);
  }
  return t;
}

/// Identity forward whose backward is off by 0.1%: a deliberately broken op
/// used to prove the gradient checks catch real bugs.
inline Var faulty_identity(Tape<double>& tape, Var x) {
  return tape.record("faulty_identity", tape.value(x), {x}, [x](Tape<double>& t, const Tensor<double>& gy) {
    double* g = t.grad_buffer(x).ptr();
    for (std::size_t i = 0; i < gy.numel(); ++i) g[i] += 1.001 * gy[i];
  });
}

/// sum(out * R) for a fixed random R.
inline Var projection(Tape<double>& tape, Var out, std::uint64_t seed) {
  Var r = tape.constant(random_tensor(tape.value(out).shape(), seed ^ 0x5EEDull));
  return sum(tape, mul(tape, out, r));
}

/// Long-double NT-Xent written directly from its definition.
inline long double nt_xent_oracle(const Tensor<double>& a, const Tensor<double>& b, double tau) {
  const std::size_t N = a.dim(0), D = a.dim(1);
  auto row = [&](std::size_t i) { return i < N ? a.ptr() + i * D : b.ptr() + (i - N) * D; };
  auto sim = [&](std::size_t i, std::size_t k) {
    long double s = 0;
    for (std::size_t d = 0; d < D; ++d) s += static_cast<long double>(row(i)[d]) * row(k)[d];
    return s / tau;
  };
  long double total = 0;
  for (std::size_t i = 0; i < 2 * N; ++i) {
    const std::size_t pos = i < N ? i + N : i - N;
    long double denom = 0;
    for (std::size_t k = 0; k < 2 * N; ++k)
      if (k != i) denom += std::exp(sim(i, k));
    total += -std::log(std::exp(sim(i, pos)) / denom);
  }
  return total / (2 * N);
}

}  // namespace detail

/// One layer's loss builder: given a tape and the checked input, the scalar loss.
/// `constant_seed` fixes the other operands.
struct GradCase {
  std::string name;
  Shape input;
  std::function<Var(Tape<double>&, Var, std::uint64_t)> loss;
  bool unit_rows = false;
};

inline std::vector<GradCase> gradient_cases() {
  using detail::projection;
  using detail::random_tensor;
  std::vector<GradCase> c;
  c.push_back({"conv2d.input", {2, 3, 6, 6}, [](Tape<double>& t, Var x, std::uint64_t s) {
                 Var w = t.constant(random_tensor({4, 3, 3, 3}, s + 1));
                 Var b = t.constant(random_tensor({4}, s + 2));
                 return projection(t, conv2d(t, x, w, b, {2, 1}), s);
               }});
  c.push_back({"conv2d.weight", {4, 3, 3, 3}, [](Tape<double>& t, Var w, std::uint64_t s) {
                 Var x = t.constant(random_tensor({2, 3, 6, 6}, s + 1));
                 return projection(t, conv2d(t, x, w, std::nullopt, {1, 1}), s);
               }});
  c.push_back({"conv2d.bias", {4}, [](Tape<double>& t, Var b, std::uint64_t s) {
                 Var x = t.constant(random_tensor({2, 3, 5, 5}, s + 1));
                 Var w = t.constant(random_tensor({4, 3, 3, 3}, s + 2));
                 return projection(t, conv2d(t, x, w, b, {1, 0}), s);
               }});
  c.push_back({"batchnorm.input", {2, 2, 3, 3}, [](Tape<double>& t, Var x, std::uint64_t s) {
                 BatchNormState<double> st(2);
                 Var g = t.constant(random_tensor({2}, s + 1));
                 Var b = t.constant(random_tensor({2}, s + 2));
                 return projection(t, batchnorm(t, x, g, b, &st, Mode::train), s);
               }});
  c.push_back({"batchnorm.gamma", {3}, [](Tape<double>& t, Var g, std::uint64_t s) {
                 BatchNormState<double> st(3);
                 Var x = t.constant(random_tensor({5, 3}, s + 1));
                 Var b = t.constant(random_tensor({3}, s + 2));
                 return projection(t, batchnorm(t, x, g, b, &st, Mode::train), s);
               }});
  c.push_back({"batchnorm.beta", {3}, [](Tape<double>& t, Var b, std::uint64_t s) {
                 BatchNormState<double> st(3);
                 Var x = t.constant(random_tensor({5, 3}, s + 1));
                 Var g = t.constant(random_tensor({3}, s + 2));
                 return projection(t, batchnorm(t, x, g, b, &st, Mode::train), s);
               }});
  c.push_back({"linear.input", {3, 5}, [](Tape<double>& t, Var x, std::uint64_t s) {
                 Var w = t.constant(random_tensor({4, 5}, s + 1));
                 Var b = t.constant(random_tensor({4}, s + 2));
                 return projection(t, linear(t, x, w, b), s);
               }});
  c.push_back({"linear.weight", {4, 5}, [](Tape<double>& t, Var w, std::uint64_t s) {
                 Var x = t.constant(random_tensor({3, 5}, s + 1));
                 return projection(t, linear(t, x, w, std::nullopt), s);
               }});
  c.push_back({"linear.bias", {4}, [](Tape<double>& t, Var b, std::uint64_t s) {
                 Var x = t.constant(random_tensor({3, 5}, s + 1));
                 Var w = t.constant(random_tensor({4, 5}, s + 2));
                 return projection(t, linear(t, x, w, b), s);
               }});
  c.push_back({"relu", {3, 7}, [](Tape<double>& t, Var x, std::uint64_t s) {
                 return projection(t, relu(t, x), s);
               }});
  c.push_back({"max_pool2d", {2, 2, 6, 6}, [](Tape<double>& t, Var x, std::uint64_t s) {
                 return projection(t, max_pool2d(t, x, 2, 2), s);
               }});
  c.push_back({"global_avg_pool", {2, 3, 4, 4}, [](Tape<double>& t, Var x, std::uint64_t s) {
                 return projection(t, global_avg_pool(t, x), s);
               }});
  c.push_back({"add_mul_scale", {3, 4}, [](Tape<double>& t, Var x, std::uint64_t s) {
                 Var y = t.constant(random_tensor({3, 4}, s + 1));
                 return projection(t, scale(t, mul(t, add(t, x, y), x), 0.7), s);
               }});
  c.push_back({"slice_rows_mean", {6, 3}, [](Tape<double>& t, Var x, std::uint64_t s) {
                 return add(t, mean(t, slice_rows(t, x, 1, 4)), projection(t, slice_rows(t, x, 0, 2), s));
               }});
  c.push_back({"l2_normalize", {4, 5}, [](Tape<double>& t, Var x, std::uint64_t s) {
                 return projection(t, l2_normalize(t, x), s);
               }});
  c.push_back({"softmax_cross_entropy", {5, 4}, [](Tape<double>& t, Var x, std::uint64_t s) {
                 std::vector<int> labels(5);
                 Rng rng = make_stream(s, "labels");
                 for (auto& l : labels) l = static_cast<int>(rng.below(4));
                 return softmax_cross_entropy(t, x, labels);
               }});
  c.push_back({"info_nce_loss", {6, 5}, [](Tape<double>& t, Var x, std::uint64_t) {
                 Var z = l2_normalize(t, x);
                 return info_nce_loss(t, slice_rows(t, z, 0, 3), slice_rows(t, z, 3, 3), 0.2);
               }});
  c.push_back({"byol_loss", {3, 5}, [](Tape<double>& t, Var x, std::uint64_t s) {
                 Var target = t.constant(detail::unit_rows(random_tensor({3, 5}, s + 1)));
                 Var other = t.constant(detail::unit_rows(random_tensor({3, 5}, s + 2)));
                 Var p = l2_normalize(t, x);
                 return byol_symmetric_loss(t, p, target, l2_normalize(t, scale(t, x, -1.3)), other);
               }});
  return c;
}

/// Worst relative error of one case over `seeds`; optionally routes the
/// input through faulty_identity.
inline CheckResult check_gradient_case(const GradCase& gc, std::size_t seeds, bool inject_fault,
                                       double tolerance = 1e-4) {
  return run_check("grad." + gc.name, [&](std::ostringstream& os) {
    double worst = 0;
    for (std::uint64_t s = 1; s <= seeds; ++s) {
      const auto point = detail::random_tensor(gc.input, 1000 * s + gc.name.size());
      auto f = [&](Tape<double>& t, Var x) {
        return gc.loss(t, inject_fault ? detail::faulty_identity(t, x) : x, 77 * s);
      };
      worst = std::max(worst, finite_diff_check(f, point).max_rel_error);
    }
    os << "max rel err " << std::scientific << std::setprecision(2) << worst << " over " << seeds
       << " seeds";
    return worst < tolerance;
  });
}

/// Gradient through a whole tiny encoder + projector + infoNCE, w.r.t. a
/// selection of parameters.
inline CheckResult check_encoder_gradient(std::size_t seeds, bool residual) {
  return run_check(residual ? "grad.encoder_residual_end_to_end" : "grad.encoder_end_to_end",
                   [&](std::ostringstream& os) {
    ModelConfig cfg;
    cfg.encoder.input_size = 8;
    cfg.encoder.widths = {4, 6};
    cfg.encoder.blocks_per_stage = residual ? 2 : 1;
    cfg.encoder.residual = residual;
    cfg.heads.projector = {6, 16, 4};
    double worst = 0;
    for (std::uint64_t s = 1; s <= seeds; ++s) {
      auto net = init_network<double>(cfg, s);
      const auto xa = detail::random_tensor({4, 3, 8, 8}, 100 + s);
      const auto xb = detail::random_tensor({4, 3, 8, 8}, 200 + s);
      auto loss = [&](Tape<double>& t) {
        auto embed = [&](const Tensor<double>& x) {
          Var f = encoder_forward(t, net, t.constant(x), Mode::train);
          return l2_normalize(t, projector_forward(t, net, f, Mode::train));
        };
        return info_nce_loss(t, embed(xa), embed(xb), 0.2);
      };
      for (const char* name : {"encoder.stem.conv.weight", "encoder.stage2.block0.conv.weight",
                               "encoder.stem.bn.gamma", "projector.fc1.weight", "projector.fc2.bias"})
        worst = std::max(worst, finite_diff_check(loss, net.params.at(name)).max_rel_error);
    }
    os << "max rel err " << std::scientific << std::setprecision(2) << worst << " over " << seeds
       << " seeds";
    return worst < 1e-4;
  });
}

inline std::vector<CheckResult> gradient_checks(std::size_t seeds,
                                                const std::string& fault = "") {
  std::vector<CheckResult> out;
  for (const auto& gc : gradient_cases())
    out.push_back(check_gradient_case(gc, seeds, fault == "grad." + gc.name));
  out.push_back(check_encoder_gradient(seeds, false));
  out.push_back(check_encoder_gradient(seeds, true));
  return out;
}

inline double info_nce_value(const Tensor<double>& a, const Tensor<double>& b, double tau) {
  Tape<double> t(false);
  return t.value(info_nce_loss(t, t.constant(a), t.constant(b), tau)).item();
}

inline std::vector<CheckResult> loss_closed_form_checks() {
  std::vector<CheckResult> out;
  out.push_back(run_check("loss.info_nce_identical_ln3", [](std::ostringstream& os) {
    Tensor<double> e({2, 4}, std::vector<double>(8, 0.5));
    const double v = info_nce_value(e, e, 0.2);
    os << "loss " << std::setprecision(10) << v << " vs ln3 " << std::log(3.0);
    return std::abs(v - std::log(3.0)) <= 1e-6;
  }));
  out.push_back(run_check("loss.byol_identical_zero", [](std::ostringstream& os) {
    const auto p = detail::unit_rows(detail::random_tensor({4, 8}, 3));
    Tape<double> t(false);
    const double v = t.value(byol_symmetric_loss(t, t.constant(p), t.constant(p), t.constant(p),
                                                 t.constant(p))).item();
    os << "loss " << std::scientific << v;
    return std::abs(v) <= 1e-7;
  }));
  out.push_back(run_check("loss.info_nce_brute_force_oracle", [](std::ostringstream& os) {
    double worst = 0;
    std::size_t batches = 0;
    for (std::size_t N = 2; N <= 8; ++N)
      for (std::uint64_t s = 0; s < 5; ++s)
        for (double tau : {0.1, 0.2, 0.5, 1.0}) {
          const auto a = detail::unit_rows(detail::random_tensor({N, 6}, 10 * N + s));
          const auto b = detail::unit_rows(detail::random_tensor({N, 6}, 500 + 10 * N + s));
          worst = std::max(worst, std::abs(info_nce_value(a, b, tau) -
                                           static_cast<double>(detail::nt_xent_oracle(a, b, tau))));
          ++batches;
        }
    os << batches << " batches (N=2..8), max abs diff " << std::scientific << std::setprecision(2)
       << worst;
    return worst <= 1e-6;
  }));
  return out;
}

inline std::vector<CheckResult> mask_checks(std::size_t draws) {
  std::vector<CheckResult> out;
  out.push_back(run_check("mask.counts_round_half_up", [](std::ostringstream& os) {
    Rng rng = make_stream(1, "verify-mask-count");
    std::size_t checked = 0;
    for (std::size_t size : {64u, 224u, 32u})
      for (std::size_t grid : {default_grid_size(size), std::size_t{4}}) {
        const std::size_t cells = (size / grid) * (size / grid);
        for (int pct : {10, 15, 30, 50, 90}) {
          // integer form of round_half_up(pct/100 * cells)
          const std::size_t expected = (pct * cells + 50) / 100;
          if (masked_cell_count(pct / 100.0, cells) != expected) {
            os << pct << "% of " << cells << " cells: got " << masked_cell_count(pct / 100.0, cells)
               << " expected " << expected;
            return false;
          }
          for (std::size_t groups : {1u, 3u}) {
            const auto m = sample_grid_mask(size, grid, pct / 100.0, groups, rng);
            for (std::size_t g = 0; g < groups; ++g)
              if (m.masked_count(g) != expected) {
                os << "sampled mask has " << m.masked_count(g) << " masked cells, expected "
                   << expected;
                return false;
              }
            ++checked;
          }
        }
      }
    os << checked << " sampled masks exact";
    return true;
  }));
  out.push_back(run_check("mask.selection_frequencies_3sigma", [draws](std::ostringstream& os) {
    MaskConfig cfg;
    const BranchOverrides always{1.0, 1.0};
    Rng rng = make_stream(2, "verify-mask-freq");
    std::size_t focal = 0, channel = 0;
    for (std::size_t i = 0; i < draws; ++i) {
      const auto m = build_branch_mask(cfg, always, 64, rng);
      focal += m.kind == MaskKind::focal;
      channel += m.groups == 3;
    }
    auto within = [&](std::size_t k, double p, const char* what) {
      const double n = static_cast<double>(draws);
      const double z = (static_cast<double>(k) - n * p) / std::sqrt(n * p * (1 - p));
      os << what << " " << std::fixed << std::setprecision(4) << k / n << " (p=" << p
         << ", z=" << std::setprecision(2) << z << ") ";
      return std::abs(z) <= 3.0;
    };
    const bool a = within(focal, cfg.focal_prob, "focal");
    const bool b = within(channel, cfg.channel_independent_prob, "channel");
    os << "over " << draws << " draws";
    return a && b;
  }));
  return out;
}

inline CheckResult highpass_null_check() {
  return run_check("highpass.constant_image_zero_view", [](std::ostringstream& os) {
    double worst = 0;
    for (float c : {0.0f, 0.37f, 1.0f}) {
      const ImageTensor img(40, 52, c);
      for (double sigma : {1.0, 2.0, 5.0}) {
        const auto hp = high_pass_filter(img, sigma);
        for (float v : hp.data) worst = std::max(worst, double(std::abs(v)));
      }
    }
    // also through the full view pipeline with every random op disabled
    AugmentationConfig aug;
    aug.jitter.apply_prob = 0;
    aug.blur.apply_prob = 0;
    MaskConfig m;
    m.noise_std_min = m.noise_std_max = 0;
    for (const auto& v : generate_views(ImageTensor(80, 80, 0.6f), aug, m, 3, 0, 0))
      for (float x : v.image.data) worst = std::max(worst, double(std::abs(x)));
    os << "max |value| " << std::scientific << worst;
    return worst <= 1e-6;
  });
}

inline std::vector<CheckResult> ema_checks() {
  std::vector<CheckResult> out;
  out.push_back(run_check("ema.tau0_exact", [](std::ostringstream& os) {
    const double t0 = ema_momentum(0.0, 0.996, 1.0), t1 = ema_momentum(1.0, 0.996, 1.0);
    os << "tau(0)=" << std::setprecision(17) << t0 << " tau(1)=" << t1;
    return t0 == 0.996 && t1 == 1.0;
  }));
  out.push_back(run_check("ema.geometric_convergence", [](std::ostringstream& os) {
    ParameterSet<double> online, target;
    const auto p = detail::random_tensor({7}, 1), q = detail::random_tensor({7}, 2);
    online.add("w", p);
    target.add("w", q);
    EmaState<double> st{target, 0.996, 0};
    const double tau = 0.9;
    const int n = 25;
    for (int i = 0; i < n; ++i) ema_update(st, online, tau);
    double worst = 0;
    for (std::size_t i = 0; i < 7; ++i)
      worst = std::max(worst, std::abs(st.target.at("w").value[i] -
                                       (p[i] + std::pow(tau, n) * (q[i] - p[i]))));
    os << "max |target - (p + tau^n (q-p))| " << std::scientific << worst;
    return worst <= 1e-6;
  }));
  return out;
}

/// Small in-memory shapes dataset for trainer-level checks.
inline Dataset tiny_shapes(std::size_t per_class, std::size_t size, std::uint64_t seed) {
  SyntheticShapesSpec spec;
  spec.image_size = size;
  Dataset d;
  for (std::size_t c = 0; c < 4; ++c) d.classes.emplace_back(kShapeNames[c]);
  for (std::size_t i = 0; i < 4 * per_class; ++i) {
    Rng rng = make_stream(seed, "verify-shape", i);
    d.images.push_back(render_shape(spec, i % 4, rng));
    d.labels.push_back(i % 4);
  }
  return d;
}

inline RunConfig tiny_run_config(Objective obj) {
  RunConfig c;
  c.seed = 11;
  c.augment.output_size = 16;
  c.model.encoder.input_size = 16;
  c.model.encoder.widths = {4, 8};
  c.model.encoder.blocks_per_stage = 1;
  c.model.heads.projector = {8, 16, 8};
  c.model.heads.predictor = {8, 16, 8};
  c.loss.objective = obj;
  c.model.with_predictor = obj == Objective::byol;
  c.schedule.batch_size = 8;
  c.schedule.epochs = 2;
  c.schedule.warmup_epochs = 0.5;
  c.run.checkpoint_every = 0;
  return c;
}

/// Two runs with one seed must give bit-identical `steps`-step loss traces;
/// resuming from the epoch-`resume_epoch` checkpoint must reproduce the rest.
inline CheckResult determinism_check(const RunConfig& cfg, const Dataset& data, std::size_t steps,
                                     const std::string& name) {
  return run_check(name, [&](std::ostringstream& os) {
    auto trace = [&](Trainer& t, std::size_t cap) {
      TrainOptions o;
      o.max_steps = cap;
      std::vector<double> l;
      for (const auto& m : t.run(o).metrics) l.push_back(m.loss);
      return l;
    };
    Trainer a(cfg, data), b(cfg, data);
    const auto la = trace(a, steps), lb = trace(b, steps);
    if (la.size() != steps || la != lb) {
      os << "traces differ";
      return false;
    }
    os << steps << "-step traces bit-identical";
    return true;
  });
}

inline CheckResult resume_check(const RunConfig& cfg, const Dataset& data, const std::string& name) {
  return run_check(name, [&](std::ostringstream& os) {
    Trainer full(cfg, data);
    const std::size_t spe = full.steps_per_epoch();
    // stop after the first epoch, snapshot, then continue in a fresh trainer
    Trainer first(cfg, data);
    TrainOptions o1;
    o1.max_steps = spe;
    first.run(o1);
    const Checkpoint mid = deserialize_checkpoint(serialize_checkpoint(first.checkpoint()));
    const auto whole = full.run();
    Trainer resumed(cfg, data);
    resumed.restore(mid);
    const auto rest = resumed.run();
    if (rest.metrics.size() + spe != whole.metrics.size()) {
      os << "resumed run has " << rest.metrics.size() << " steps";
      return false;
    }
    for (std::size_t i = 0; i < rest.metrics.size(); ++i)
      if (rest.metrics[i].loss != whole.metrics[spe + i].loss) {
        os << "step " << spe + i << " differs after resume";
        return false;
      }
    const bool same_state =
        serialize_checkpoint(rest.checkpoint) == serialize_checkpoint(whole.checkpoint);
    os << rest.metrics.size() << " resumed steps bit-identical"
       << (same_state ? ", final state identical" : ", FINAL STATE DIFFERS");
    return same_state;
  });
}

inline CheckResult checkpoint_roundtrip_check() {
  return run_check("checkpoint.round_trip_bytes", [](std::ostringstream& os) {
    const auto data = tiny_shapes(2, 16, 5);
    Trainer t(tiny_run_config(Objective::byol), data);
    TrainOptions o;
    o.max_steps = 1;
    t.run(o);
    const auto bytes = serialize_checkpoint(t.checkpoint());
    const auto again = serialize_checkpoint(deserialize_checkpoint(bytes));
    bool corrupt_caught = false;
    try {
      deserialize_checkpoint(bytes.substr(0, bytes.size() - 3));
    } catch (const CorruptionError&) {
      corrupt_caught = true;
    }
    os << bytes.size() << " bytes, save->load->save "
       << (bytes == again ? "identical" : "DIFFERS")
       << (corrupt_caught ? ", truncation detected" : ", TRUNCATION MISSED");
    return bytes == again && corrupt_caught;
  });
}

/// The fast suite behind `mscn selftest`. `fault` names a gradient check to
/// sabotage (e.g. "grad.conv2d.weight").
inline std::vector<CheckResult> selftest_suite(const std::string& fault = "") {
  std::vector<CheckResult> out = gradient_checks(2, fault);
  for (auto& r : loss_closed_form_checks()) out.push_back(std::move(r));
  for (auto& r : mask_checks(10000)) out.push_back(std::move(r));
  out.push_back(highpass_null_check());
  for (auto& r : ema_checks()) out.push_back(std::move(r));
  out.push_back(checkpoint_roundtrip_check());
  const auto data = tiny_shapes(2, 16, 5);
  out.push_back(determinism_check(tiny_run_config(Objective::simclr), data, 2, "determinism.trace"));
  return out;
}

inline std::vector<std::string> fault_names() {
  std::vector<std::string> n;
  for (const auto& gc : gradient_cases()) n.push_back("grad." + gc.name);
  return n;
}

}  // namespace mscn::verify
