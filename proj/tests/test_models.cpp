#include <gtest/gtest.h>

#include <cmath>

#include "mscn/models/network.hpp"
#include "mscn/objectives/losses.hpp"
#include "mscn/tensor/gradcheck.hpp"
#include "test_util.hpp"

using namespace mscn;
using mscn::testing::random_tensor;

namespace {

ModelConfig tiny_config(bool residual = false) {
  ModelConfig cfg;
  cfg.encoder.input_size = 8;
  cfg.encoder.widths = {4, 6};
  cfg.encoder.blocks_per_stage = residual ? 2 : 1;
  cfg.encoder.residual = residual;
  cfg.heads.projector = {6, 16, 4};
  cfg.heads.predictor = {4, 16, 4};
  return cfg;
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.encoder.input_size = 16;
  cfg.encoder.widths = {4, 8};
  cfg.encoder.blocks_per_stage = 2;
  cfg.heads.projector = {8, 16, 4};
  return cfg;
}

}  // namespace

TEST(Encoder, OutputShapeForAnyBatch) {
  auto net = init_network<float>(small_config(), 1);
  for (std::size_t n : {2u, 3u, 5u}) {
    Tape<float> tape(false);
    Var x = tape.constant(random_tensor<float>({n, 3, 16, 16}, n));
    Var f = encoder_forward(tape, net, x, Mode::train);
    EXPECT_EQ(tape.value(f).shape(), (Shape{n, 8}));
    Var z = projector_forward(tape, net, f, Mode::train);
    EXPECT_EQ(tape.value(z).shape(), (Shape{n, 4}));
  }
}

TEST(Encoder, EvalForwardIsPure) {
  auto net = init_network<float>(small_config(), 2);
  const auto x = random_tensor<float>({3, 3, 16, 16}, 9);
  auto run = [&] {
    Tape<float> tape(false);
    return tape.value(encoder_forward(tape, net, tape.constant(x), Mode::eval));
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a, b);
}

TEST(Encoder, TrainModeUpdatesOnlyBatchNormStatistics) {
  auto net = init_network<float>(small_config(), 3);
  const auto before = parameter_checksum(net.params);
  const auto stats_before = net.bn.at("encoder.stem.bn").running_mean;
  Tape<float> tape(false);
  encoder_forward(tape, net, tape.constant(random_tensor<float>({4, 3, 16, 16}, 1)), Mode::train);
  EXPECT_EQ(parameter_checksum(net.params), before);
  EXPECT_NE(net.bn.at("encoder.stem.bn").running_mean, stats_before);
}

TEST(Encoder, WrongInputSizeRejected) {
  auto net = init_network<float>(small_config(), 1);
  Tape<float> tape(false);
  EXPECT_THROW(encoder_forward(tape, net, tape.constant(Tensor<float>({2, 3, 12, 12})), Mode::eval),
               ConfigError);
  EXPECT_THROW(encoder_forward(tape, net, tape.constant(Tensor<float>({2, 1, 16, 16})), Mode::eval),
               ConfigError);
}

TEST(Encoder, ConfigValidation) {
  auto cfg = small_config();
  cfg.encoder.input_size = 18;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.heads.projector = {7, 4};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.with_predictor = true;
  cfg.heads.predictor = {4, 8, 3};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

class EndToEndGradient : public ::testing::TestWithParam<bool> {};

TEST_P(EndToEndGradient, EncoderProjectorInfoNceMatchesFiniteDifferences) {
  const bool residual = GetParam();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto net = init_network<double>(tiny_config(residual), seed);
    const auto xa = random_tensor({4, 3, 8, 8}, 100 + seed);
    const auto xb = random_tensor({4, 3, 8, 8}, 200 + seed);
    auto loss = [&](Tape<double>& t) {
      auto embed = [&](const Tensor<double>& x) {
        Var f = encoder_forward(t, net, t.constant(x), Mode::train);
        return l2_normalize(t, projector_forward(t, net, f, Mode::train));
      };
      return info_nce_loss(t, embed(xa), embed(xb), 0.2);
    };
    for (const char* name : {"encoder.stem.conv.weight", "encoder.stage1.block0.conv.weight",
                             "encoder.stage2.block0.bn.gamma", "projector.fc1.weight",
                             "projector.fc2.bias"}) {
      const auto r = finite_diff_check(loss, net.params.at(name));
      EXPECT_LT(r.max_rel_error, 1e-4) << name << " seed " << seed << " analytic " << r.analytic
                                       << " numeric " << r.numeric;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Plain, EndToEndGradient, ::testing::Values(false));
INSTANTIATE_TEST_SUITE_P(Residual, EndToEndGradient, ::testing::Values(true));

TEST(Predictor, GradientMatchesFiniteDifferences) {
  auto cfg = tiny_config();
  cfg.with_predictor = true;
  auto net = init_network<double>(cfg, 7);
  const auto x = random_tensor({4, 3, 8, 8}, 7);
  const auto target = random_tensor({4, 4}, 8);
  auto loss = [&](Tape<double>& t) {
    Var z = projector_forward(t, net, encoder_forward(t, net, t.constant(x), Mode::train),
                              Mode::train);
    Var p = l2_normalize(t, predictor_forward(t, net, z, Mode::train));
    return byol_loss(t, p, l2_normalize(t, t.constant(target)));
  };
  EXPECT_LT(finite_diff_check(loss, net.params.at("predictor.fc1.weight")).max_rel_error, 1e-4);
  EXPECT_LT(finite_diff_check(loss, net.params.at("encoder.stem.conv.weight")).max_rel_error,
            1e-4);
}

TEST(Init, SameSeedSameBits) {
  const auto a = init_network<float>(small_config(), 42);
  const auto b = init_network<float>(small_config(), 42);
  const auto c = init_network<float>(small_config(), 43);
  EXPECT_EQ(parameter_checksum(a.params), parameter_checksum(b.params));
  EXPECT_NE(parameter_checksum(a.params), parameter_checksum(c.params));
}

TEST(Init, HeNormalVariance) {
  ModelConfig cfg;
  cfg.encoder.widths = {32, 64};
  cfg.encoder.blocks_per_stage = 2;
  cfg.encoder.input_size = 16;
  cfg.heads.projector = {64, 64, 16};
  const auto net = init_network<double>(cfg, 5);
  for (const auto& p : net.params) {
    if (p.value.rank() != 4) continue;
    const std::size_t fan_in = p.value.dim(1) * p.value.dim(2) * p.value.dim(3);
    if (fan_in < 256) continue;
    double s = 0, sq = 0;
    for (double v : p.value.data()) s += v, sq += v * v;
    const double n = double(p.value.numel()), mean = s / n, var = sq / n - mean * mean;
    EXPECT_NEAR(var / (2.0 / fan_in), 1.0, 0.1) << p.name;
  }
}

TEST(Init, BiasesZeroBatchNormIdentity) {
  auto cfg = small_config();
  cfg.with_predictor = true;
  cfg.heads.predictor = {4, 8, 4};
  const auto net = init_network<float>(cfg, 1);
  for (const auto& p : net.params) {
    const bool bias = p.name.ends_with(".bias"), gamma = p.name.ends_with(".gamma"),
               beta = p.name.ends_with(".beta");
    EXPECT_EQ(p.decay_exempt, bias || gamma || beta) << p.name;
    for (float v : p.value.data()) {
      if (bias || beta) {
        EXPECT_EQ(v, 0.0f) << p.name;
      } else if (gamma) {
        EXPECT_EQ(v, 1.0f) << p.name;
      }
    }
  }
}

TEST(Kernels, ShapeAndNonZeroVarianceAtInit) {
  auto cfg = small_config();
  cfg.encoder.stem_kernel = 5;
  const auto net = init_network<float>(cfg, 1);
  const auto& k = first_layer_kernels(net);
  EXPECT_EQ(k.shape(), (Shape{4, 3, 5, 5}));
  const std::size_t per = 75;
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0, sq = 0;
    for (std::size_t j = 0; j < per; ++j) s += k[i * per + j], sq += k[i * per + j] * k[i * per + j];
    EXPECT_GT(sq / per - (s / per) * (s / per), 0.0);
  }
}

TEST(ParameterCount, ClosedFormMatchesInstantiation) {
  std::vector<ModelConfig> cfgs{small_config(), tiny_config(), tiny_config(true), ModelConfig{}};
  cfgs[0].heads.projector_final_bn = true;
  cfgs[1].with_predictor = true;
  for (const auto& cfg : cfgs)
    EXPECT_EQ(parameter_count(cfg), init_network<float>(cfg, 0).params.total_elements());
  // default desk encoder: stem 3*32*9+64, stages of 2 blocks, projector 256-256-64
  const std::size_t enc = (864 + 64) + (32 * 32 * 9 + 64 + 32 * 32 * 9 + 64) +
                          (32 * 64 * 9 + 128 + 64 * 64 * 9 + 128) +
                          (64 * 128 * 9 + 256 + 128 * 128 * 9 + 256) +
                          (128 * 256 * 9 + 512 + 256 * 256 * 9 + 512);
  const std::size_t proj = 256 * 256 + 256 + 512 + 256 * 64 + 64;
  EXPECT_EQ(parameter_count(ModelConfig{}), enc + proj);
}
