#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mscn/data/dataset.hpp"
#include "mscn/image/augment.hpp"
#include "mscn/models/network.hpp"
#include "mscn/train/config.hpp"
#include "mscn/train/optim.hpp"
#include "mscn/train/schedule.hpp"

namespace mscn {

/// Eval-mode encoder features [N,D] of eval_transform'ed images.
inline Tensor<float> extract_features(const Network<float>& net, const Dataset& data,
                                      const AugmentationConfig& aug, std::size_t chunk = 256) {
  Network<float> frozen = net;
  const std::size_t N = data.size(), S = aug.output_size, pix = 3 * S * S;
  const std::size_t D = net.config.encoder.feature_dim();
  Tensor<float> out({N, D});
  for (std::size_t start = 0; start < N; start += chunk) {
    const std::size_t n = std::min(chunk, N - start);
    Tensor<float> x({n, 3, S, S});
    for (std::size_t i = 0; i < n; ++i) {
      const auto v = eval_transform(data.images[start + i], aug);
      std::copy(v.data.begin(), v.data.end(), x.ptr() + i * pix);
    }
    Tape<float> tape(false);
    const auto& f = tape.value(encoder_forward(tape, frozen, tape.constant(std::move(x)), Mode::eval));
    std::copy(f.ptr(), f.ptr() + n * D, out.ptr() + start * D);
  }
  return out;
}

struct ProbeResult {
  double accuracy = 0;        // val top-1
  double train_accuracy = 0;  // on the probe's training subset
  std::size_t train_samples = 0;
  std::vector<double> epoch_loss;
};

namespace detail {

inline std::vector<int> int_labels(const std::vector<std::size_t>& l) {
  return std::vector<int>(l.begin(), l.end());
}

/// Per-dimension standardization fitted on `fit`, applied in place to both.
inline void standardize(Tensor<float>& fit, Tensor<float>& other) {
  const std::size_t N = fit.dim(0), D = fit.dim(1);
  for (std::size_t d = 0; d < D; ++d) {
    double m = 0, v = 0;
    for (std::size_t n = 0; n < N; ++n) m += fit[n * D + d];
    m /= static_cast<double>(N);
    for (std::size_t n = 0; n < N; ++n) v += (fit[n * D + d] - m) * (fit[n * D + d] - m);
    const double sd = std::sqrt(v / static_cast<double>(N)) + 1e-6;
    for (auto* t : {&fit, &other})
      for (std::size_t n = 0; n < t->dim(0); ++n)
        (*t)[n * D + d] = static_cast<float>(((*t)[n * D + d] - m) / sd);
  }
}

inline double accuracy(const Tensor<float>& logits, const std::vector<std::size_t>& labels) {
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const float* row = logits.ptr() + n * C;
    correct += static_cast<std::size_t>(std::max_element(row, row + C) - row) == labels[n];
  }
  return N ? static_cast<double>(correct) / static_cast<double>(N) : 0.0;
}

inline Tensor<float> rows(const Tensor<float>& x, const std::vector<std::size_t>& idx) {
  const std::size_t D = x.numel() / x.dim(0);
  Shape s = x.shape();
  s[0] = idx.size();
  Tensor<float> out(s);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(x.ptr() + idx[i] * D, x.ptr() + (idx[i] + 1) * D, out.ptr() + i * D);
  return out;
}

inline ParameterSet<float> make_classifier(std::size_t D, std::size_t C) {
  ParameterSet<float> p;
  p.add("classifier.weight", Tensor<float>({C, D}));
  p.add("classifier.bias", Tensor<float>({C}), true);
  return p;
}

inline Tensor<float> classify(ParameterSet<float>& cls, const Tensor<float>& f) {
  Tape<float> tape(false);
  return tape.value(linear(tape, tape.constant(f), tape.parameter(cls.at("classifier.weight")),
                           std::optional<Var>(tape.parameter(cls.at("classifier.bias")))));
}

}  // namespace detail

/// Linear classifier on frozen, standardized eval-mode features. SGD-momentum
/// with a cosine schedule; zero-initialized weights; class-stratified label
/// subset. The encoder is copied, never modified.
inline ProbeResult linear_probe(const Network<float>& net, const Dataset& train, const Dataset& val,
                                const ProbeConfig& cfg, const AugmentationConfig& aug,
                                std::uint64_t seed) {
  cfg.validate();
  const auto subset = stratified_subset(train.labels, train.num_classes(), cfg.label_fraction, seed);
  const Dataset tr = train.subset(subset);
  Tensor<float> ftr = extract_features(net, tr, aug);
  Tensor<float> fva = extract_features(net, val, aug);
  detail::standardize(ftr, fva);

  const std::size_t N = tr.size(), D = ftr.dim(1), C = train.num_classes();
  auto cls = detail::make_classifier(D, C);
  OptimizerConfig oc;
  oc.kind = OptimizerKind::sgd_momentum;
  oc.momentum = cfg.momentum;
  oc.weight_decay = cfg.weight_decay;
  Optimizer<float> opt(oc);
  ScheduleConfig sched{cfg.batch_size, cfg.epochs, 0.0, cfg.base_lr, 0.0};
  const std::size_t spe = (N + cfg.batch_size - 1) / cfg.batch_size;
  ProbeResult res;
  res.train_samples = N;
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto order = epoch_order(N, seed, 1000003 + e);
    double total = 0;
    for (std::size_t s = 0; s < spe; ++s, ++step) {
      const std::size_t lo = s * cfg.batch_size, hi = std::min(N, lo + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                   order.begin() + static_cast<std::ptrdiff_t>(hi));
      std::vector<std::size_t> lab;
      for (auto i : idx) lab.push_back(tr.labels[i]);
      const auto il = detail::int_labels(lab);
      cls.zero_grad();
      Tape<float> tape;
      Var logits = linear(tape, tape.constant(detail::rows(ftr, idx)),
                          tape.parameter(cls.at("classifier.weight")),
                          std::optional<Var>(tape.parameter(cls.at("classifier.bias"))));
      Var loss = softmax_cross_entropy(tape, logits, il);
      tape.backward(loss);
      total += tape.value(loss)[0];
      const auto rep = opt.step(cls, cosine_warmup_lr(sched, step, spe));
      require<NumericError>(rep.ok, "probe diverged: non-finite gradient");
    }
    res.epoch_loss.push_back(total / static_cast<double>(spe));
  }
  res.train_accuracy = detail::accuracy(detail::classify(cls, ftr), tr.labels);
  res.accuracy = detail::accuracy(detail::classify(cls, fva), val.labels);
  return res;
}

struct FinetuneResult {
  double accuracy = 0;
  // Learning rates per epoch: {encoder, classifier}.
  std::vector<std::pair<double, double>> lr_trace;
  std::vector<double> epoch_loss;
  Network<float> network;
};

/// Multiplier applied at `epoch`: decay_factor once per passed decay point.
inline double finetune_lr_multiplier(const FinetuneConfig& cfg, std::size_t epoch) {
  double m = 1.0;
  for (double d : cfg.decay_at)
    if (epoch >= static_cast<std::size_t>(std::llround(d * static_cast<double>(cfg.epochs))))
      m *= cfg.decay_factor;
  return m;
}

/// Training view for finetuning: random resized crop, flip, high-pass.
inline ImageTensor finetune_view(const ImageTensor& img, const AugmentationConfig& aug, Rng& rng) {
  ImageTensor v = random_resized_crop(img, aug, rng);
  if (rng.bernoulli(aug.flip_prob)) v = horizontal_flip(v);
  if (aug.highpass_enabled) v = high_pass_filter(v, aug.highpass_sigma);
  return v;
}

/// Encoder and a new linear classifier trained jointly; two learning-rate
/// groups with step decay.
inline FinetuneResult finetune(const Network<float>& net, const Dataset& train, const Dataset& val,
                               const FinetuneConfig& cfg, const AugmentationConfig& aug,
                               std::uint64_t seed) {
  cfg.validate();
  const auto subset = stratified_subset(train.labels, train.num_classes(), cfg.label_fraction, seed);
  const Dataset tr = train.subset(subset);
  require<ConfigError>(tr.size() >= 2, "finetune needs at least 2 training samples");
  FinetuneResult res;
  res.network = net;
  Network<float>& model = res.network;
  const std::size_t D = net.config.encoder.feature_dim(), C = train.num_classes();
  const std::size_t S = aug.output_size, pix = 3 * S * S;
  auto cls = detail::make_classifier(D, C);
  OptimizerConfig oc;
  oc.kind = OptimizerKind::sgd_momentum;
  oc.momentum = cfg.momentum;
  oc.weight_decay = cfg.weight_decay;
  Optimizer<float> enc_opt(oc), cls_opt(oc);
  const std::size_t B = std::min(cfg.batch_size, tr.size());
  const std::size_t spe = tr.size() / B;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double mult = finetune_lr_multiplier(cfg, e);
    const double lr_enc = cfg.encoder_lr * mult, lr_cls = cfg.classifier_lr * mult;
    res.lr_trace.emplace_back(lr_enc, lr_cls);
    const auto order = epoch_order(tr.size(), seed, 2000003 + e);
    double total = 0;
    for (std::size_t s = 0; s < spe; ++s) {
      Tensor<float> x({B, 3, S, S});
      std::vector<int> lab(B);
      for (std::size_t i = 0; i < B; ++i) {
        const std::size_t idx = order[s * B + i];
        Rng rng = make_stream(seed, StreamId{e, subset[idx], 2, 0});
        const auto v = finetune_view(tr.images[idx], aug, rng);
        std::copy(v.data.begin(), v.data.end(), x.ptr() + i * pix);
        lab[i] = static_cast<int>(tr.labels[idx]);
      }
      model.params.zero_grad();
      cls.zero_grad();
      Tape<float> tape;
      Var f = encoder_forward(tape, model, tape.constant(std::move(x)), Mode::train);
      Var logits = linear(tape, f, tape.parameter(cls.at("classifier.weight")),
                          std::optional<Var>(tape.parameter(cls.at("classifier.bias"))));
      Var loss = softmax_cross_entropy(tape, logits, lab);
      tape.backward(loss);
      total += tape.value(loss)[0];
      require<NumericError>(enc_opt.step(model.params, lr_enc).ok && cls_opt.step(cls, lr_cls).ok,
                            "finetune diverged: non-finite gradient");
    }
    res.epoch_loss.push_back(total / static_cast<double>(spe));
  }
  const Tensor<float> fva = extract_features(model, val, aug);
  res.accuracy = detail::accuracy(detail::classify(cls, fva), val.labels);
  return res;
}

}  // namespace mscn
