#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mscn/core/rng.hpp"
#include "mscn/tensor/ops.hpp"

namespace mscn {

struct EncoderConfig {
  std::size_t input_size = 64;
  std::vector<std::size_t> widths{32, 64, 128, 256};
  std::size_t blocks_per_stage = 2;
  std::size_t stem_kernel = 3;
  // Identity shortcut around every non-downsampling block.
  bool residual = false;

  std::size_t feature_dim() const { return widths.back(); }

  void validate() const {
    require<ConfigError>(!widths.empty(), "model.encoder.widths must not be empty");
    require<ConfigError>(blocks_per_stage >= 1, "model.encoder.blocks_per_stage must be >= 1");
    require<ConfigError>(stem_kernel % 2 == 1, "model.encoder.stem_kernel must be odd, got ",
                         stem_kernel);
    const std::size_t div = std::size_t{1} << widths.size();
    require<ConfigError>(input_size % div == 0, "model input size ", input_size,
                         " must be divisible by 2^stages = ", div);
    for (auto w : widths) require<ConfigError>(w >= 1, "encoder widths must be >= 1");
  }
};

struct HeadConfig {
  // Linear layers between consecutive sizes; BN + ReLU after each hidden one.
  std::vector<std::size_t> projector{256, 256, 64};
  std::vector<std::size_t> predictor{64, 256, 64};
  bool projector_final_bn = false;
};

struct ModelConfig {
  EncoderConfig encoder;
  HeadConfig heads;
  bool with_predictor = false;

  void validate() const {
    encoder.validate();
    const auto& p = heads.projector;
    require<ConfigError>(p.size() >= 2, "model.heads.projector needs at least [in, out]");
    require<ConfigError>(p.front() == encoder.feature_dim(), "projector input ", p.front(),
                         " does not match encoder feature dim ", encoder.feature_dim());
    if (with_predictor) {
      const auto& q = heads.predictor;
      require<ConfigError>(q.size() >= 2, "model.heads.predictor needs at least [in, out]");
      require<ConfigError>(q.front() == p.back() && q.back() == p.back(),
                           "predictor must map the projection dim ", p.back(), " to itself");
    }
  }
};

/// Parameters plus batch-norm running statistics of one network.
template <typename T>
struct Network {
  ModelConfig config;
  ParameterSet<T> params;
  std::map<std::string, BatchNormState<T>> bn;
};

namespace detail {

template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(sd * rng.normal());
  return t;
}

template <typename T>
void add_bn(Network<T>& net, const std::string& name, std::size_t channels) {
  net.params.add(name + ".gamma", Tensor<T>({channels}, T(1)), true);
  net.params.add(name + ".beta", Tensor<T>({channels}, T(0)), true);
  net.bn.emplace(name, BatchNormState<T>(channels));
}

template <typename T>
void add_conv(Network<T>& net, const std::string& name, std::size_t in, std::size_t out,
              std::size_t k, Rng& rng) {
  net.params.add(name + ".weight", he_normal<T>({out, in, k, k}, in * k * k, rng));
}

template <typename T>
void add_mlp(Network<T>& net, const std::string& prefix, const std::vector<std::size_t>& dims,
             bool final_bn, Rng& rng) {
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::string fc = prefix + ".fc" + std::to_string(i + 1);
    net.params.add(fc + ".weight", he_normal<T>({dims[i + 1], dims[i]}, dims[i], rng));
    net.params.add(fc + ".bias", Tensor<T>({dims[i + 1]}), true);
    const bool last = i + 2 == dims.size();
    if (!last || final_bn) add_bn(net, prefix + ".bn" + std::to_string(i + 1), dims[i + 1]);
  }
}

inline std::string block_name(std::size_t stage, std::size_t block) {
  return "encoder.stage" + std::to_string(stage + 1) + ".block" + std::to_string(block);
}

}  // namespace detail

/// He-normal (fan-in) weights, zero biases, BN gamma 1 / beta 0. Same seed,
/// same bits.
template <typename T>
Network<T> init_network(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Network<T> net;
  net.config = cfg;
  Rng rng = make_stream(seed, "init");
  const auto& e = cfg.encoder;
  detail::add_conv(net, "encoder.stem.conv", 3, e.widths[0], e.stem_kernel, rng);
  detail::add_bn(net, "encoder.stem.bn", e.widths[0]);
  std::size_t in = e.widths[0];
  for (std::size_t s = 0; s < e.widths.size(); ++s)
    for (std::size_t b = 0; b < e.blocks_per_stage; ++b) {
      const std::string name = detail::block_name(s, b);
      detail::add_conv(net, name + ".conv", in, e.widths[s], 3, rng);
      detail::add_bn(net, name + ".bn", e.widths[s]);
      in = e.widths[s];
    }
  detail::add_mlp(net, "projector", cfg.heads.projector, cfg.heads.projector_final_bn, rng);
  if (cfg.with_predictor) detail::add_mlp(net, "predictor", cfg.heads.predictor, false, rng);
  return net;
}

/// Closed-form parameter count for a config.
inline std::size_t parameter_count(const ModelConfig& cfg) {
  const auto& e = cfg.encoder;
  std::size_t n = 3 * e.widths[0] * e.stem_kernel * e.stem_kernel + 2 * e.widths[0];
  std::size_t in = e.widths[0];
  for (std::size_t w : e.widths) {
    n += (in * w * 9 + 2 * w) + (e.blocks_per_stage - 1) * (w * w * 9 + 2 * w);
    in = w;
  }
  auto mlp = [](const std::vector<std::size_t>& d, bool final_bn) {
    std::size_t m = 0;
    for (std::size_t i = 0; i + 1 < d.size(); ++i) {
      m += d[i] * d[i + 1] + d[i + 1];
      if (i + 2 < d.size() || final_bn) m += 2 * d[i + 1];
    }
    return m;
  };
  n += mlp(cfg.heads.projector, cfg.heads.projector_final_bn);
  if (cfg.with_predictor) n += mlp(cfg.heads.predictor, false);
  return n;
}

namespace detail {

template <typename T>
Var bn_layer(Tape<T>& tape, Network<T>& net, const std::string& name, Var x, Mode mode) {
  return batchnorm(tape, x, tape.parameter(net.params.at(name + ".gamma")),
                   tape.parameter(net.params.at(name + ".beta")), &net.bn.at(name), mode);
}

template <typename T>
Var conv_bn(Tape<T>& tape, Network<T>& net, const std::string& name, Var x, std::size_t stride,
            std::size_t padding, Mode mode) {
  Var w = tape.parameter(net.params.at(name + ".conv.weight"));
  Var y = conv2d(tape, x, w, std::nullopt, Conv2dOptions{stride, padding});
  return bn_layer(tape, net, name + ".bn", y, mode);
}

template <typename T>
Var mlp_forward(Tape<T>& tape, Network<T>& net, const std::string& prefix,
                const std::vector<std::size_t>& dims, bool final_bn, Var x, Mode mode) {
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::string fc = prefix + ".fc" + std::to_string(i + 1);
    x = linear(tape, x, tape.parameter(net.params.at(fc + ".weight")),
               std::optional<Var>(tape.parameter(net.params.at(fc + ".bias"))));
    const bool last = i + 2 == dims.size();
    if (!last || final_bn) x = bn_layer(tape, net, prefix + ".bn" + std::to_string(i + 1), x, mode);
    if (!last) x = relu(tape, x);
  }
  return x;
}

}  // namespace detail

/// Conv-BN-ReLU stem, stages whose first block downsamples by 2, global average
/// pool. [N,3,S,S] -> [N,D].
template <typename T>
Var encoder_forward(Tape<T>& tape, Network<T>& net, Var x, Mode mode) {
  const auto& e = net.config.encoder;
  const Shape& s = tape.value(x).shape();
  require<ConfigError>(s.size() == 4 && s[1] == 3 && s[2] == e.input_size && s[3] == e.input_size,
                       "encoder expects [N,3,", e.input_size, ",", e.input_size, "], got ",
                       shape_str(s));
  Var h = relu(tape, detail::conv_bn(tape, net, "encoder.stem", x, 1, e.stem_kernel / 2, mode));
  for (std::size_t st = 0; st < e.widths.size(); ++st)
    for (std::size_t b = 0; b < e.blocks_per_stage; ++b) {
      Var y = detail::conv_bn(tape, net, detail::block_name(st, b), h, b == 0 ? 2 : 1, 1, mode);
      if (e.residual && b > 0) y = add(tape, y, h);
      h = relu(tape, y);
    }
  return global_avg_pool(tape, h);
}

template <typename T>
Var projector_forward(Tape<T>& tape, Network<T>& net, Var features, Mode mode) {
  const auto& h = net.config.heads;
  return detail::mlp_forward(tape, net, "projector", h.projector, h.projector_final_bn, features,
                             mode);
}

template <typename T>
Var predictor_forward(Tape<T>& tape, Network<T>& net, Var z, Mode mode) {
  require(net.config.with_predictor, "network has no predictor head");
  return detail::mlp_forward(tape, net, "predictor", net.config.heads.predictor, false, z, mode);
}

/// Stem convolution weights [K,3,k,k].
template <typename T>
const Tensor<T>& first_layer_kernels(const Network<T>& net) {
  return net.params.at("encoder.stem.conv.weight").value;
}

/// FNV-1a over the raw bytes of the selected parameters (name prefix filter).
template <typename T>
std::uint64_t parameter_checksum(const ParameterSet<T>& params, std::string_view prefix = "") {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const auto& p : params) {
    if (!std::string_view(p.name).starts_with(prefix)) continue;
    h = fnv1a(p.name, h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(p.value.ptr()),
                               p.value.numel() * sizeof(T)),
              h);
  }
  return h;
}

}  // namespace mscn
