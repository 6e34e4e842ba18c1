#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "mscn/image/augment.hpp"
#include "mscn/image/png_io.hpp"

using namespace mscn;
namespace fs = std::filesystem;

namespace {

ImageTensor random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  ImageTensor img(h, w);
  Rng rng(seed);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

AugmentationConfig no_randomness(std::size_t size) {
  AugmentationConfig cfg;
  cfg.crop_scale_min = cfg.crop_scale_max = 1.0;
  cfg.aspect_min = cfg.aspect_max = 1.0;
  cfg.flip_prob = 0;
  cfg.jitter.apply_prob = 0;
  cfg.grayscale_prob = 0;
  cfg.blur.apply_prob = 0;
  cfg.output_size = size;
  return cfg;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mscn_test_image_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Crop, FullScaleUnitAspectIsIdentity) {
  const auto img = random_image(32, 32, 1);
  auto cfg = no_randomness(32);
  Rng rng(3);
  const auto out = random_resized_crop(img, cfg, rng);
  EXPECT_EQ(out.data, img.data);
}

TEST(Crop, OutputShapeIndependentOfInput) {
  AugmentationConfig cfg;
  cfg.output_size = 24;
  Rng rng(5);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{50, 80}, {200, 30}, {24, 24}, {7, 9}}) {
    for (int i = 0; i < 20; ++i) {
      const auto out = random_resized_crop(random_image(h, w, i), cfg, rng);
      EXPECT_EQ(out.height, 24u);
      EXPECT_EQ(out.width, 24u);
      EXPECT_EQ(out.size(), 3u * 24 * 24);
    }
  }
}

TEST(Crop, SeededRectangleIsReproducible) {
  AugmentationConfig cfg;
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng a = make_stream(7, StreamId{1, s, 0, 0}), b = make_stream(7, StreamId{1, s, 0, 0});
    EXPECT_EQ(sample_crop(64, 64, cfg, a), sample_crop(64, 64, cfg, b));
  }
}

TEST(Crop, AreaAndAspectWithinConfiguredRanges) {
  AugmentationConfig cfg;
  cfg.crop_scale_min = 0.3;
  cfg.crop_scale_max = 0.6;
  Rng rng(11);
  double mean = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const auto r = sample_crop(128, 128, cfg, rng);
    const double frac = double(r.height * r.width) / (128.0 * 128.0);
    // integer rounding of each side moves the area by at most ~1px per side
    EXPECT_GT(frac, 0.3 - 0.02);
    EXPECT_LT(frac, 0.6 + 0.02);
    const double ar = double(r.width) / double(r.height);
    EXPECT_GT(ar, 0.75 - 0.03);
    EXPECT_LT(ar, 4.0 / 3.0 + 0.03);
    EXPECT_LE(r.top + r.height, 128u);
    EXPECT_LE(r.left + r.width, 128u);
    mean += frac;
  }
  EXPECT_NEAR(mean / n, 0.45, 0.01);
}

TEST(Crop, ImpossibleWindowFallsBackToCenter) {
  AugmentationConfig cfg;
  cfg.aspect_min = cfg.aspect_max = 4.0;  // wider than a tall 40x10 image allows
  cfg.crop_scale_min = cfg.crop_scale_max = 1.0;
  Rng rng(1);
  const auto r = sample_crop(40, 10, cfg, rng);
  EXPECT_EQ(r.width, 10u);
  EXPECT_EQ(r.height, 3u);  // round(10/4) with centered placement
  EXPECT_EQ(r.top, (40u - 3u) / 2);
}

TEST(Jitter, ZeroStrengthIsIdentity) {
  const auto img = random_image(16, 16, 2);
  JitterConfig cfg{0, 0, 0, 0, 1.0};
  Rng rng(4);
  EXPECT_EQ(color_jitter(img, cfg, rng).data, img.data);
}

TEST(Jitter, OutputsStayInUnitRange) {
  JitterConfig cfg{0.9, 0.9, 0.9, 0.5, 1.0};
  Rng rng(6);
  for (int i = 0; i < 20; ++i) {
    const auto out = color_jitter(random_image(8, 8, i), cfg, rng);
    for (float v : out.data) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Jitter, FullHueTurnLeavesColorsUnchanged) {
  const auto img = random_image(8, 8, 3);
  ImageTensor out = img;
  detail::adjust_hue(out, 1.0f);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(out.data[i], img.data[i], 1e-5);
}

TEST(Grayscale, ChannelsEqualAndLumaWeights) {
  ImageTensor px(1, 1);
  px.data = {1.0f, 0.0f, 0.0f};
  EXPECT_FLOAT_EQ(grayscale(px).data[0], 0.299f);
  const auto g = grayscale(random_image(10, 12, 4));
  for (std::size_t i = 0; i < g.plane(); ++i) {
    EXPECT_EQ(g.channel(0)[i], g.channel(1)[i]);
    EXPECT_EQ(g.channel(1)[i], g.channel(2)[i]);
  }
}

TEST(Flip, Involution) {
  const auto img = random_image(9, 13, 5);
  const auto once = horizontal_flip(img);
  EXPECT_NE(once.data, img.data);
  EXPECT_EQ(once.at(1, 2, 0), img.at(1, 2, 12));
  EXPECT_EQ(horizontal_flip(once).data, img.data);
}

TEST(Blur, ConstantImageUnchanged) {
  ImageTensor img(20, 17, 0.37f);
  for (double sigma : {0.3, 1.0, 2.0, 9.0}) {
    const auto out = gaussian_blur(img, sigma);
    for (float v : out.data) EXPECT_NEAR(v, 0.37f, 1e-6);
  }
}

TEST(Blur, PreservesMeanOfSymmetricImage) {
  auto img = random_image(24, 24, 6);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 24; ++y)
      for (std::size_t x = 0; x < 24; ++x)
        img.at(c, y, x) = img.at(c, std::min(y, 23 - y), std::min(x, 23 - x));
  for (double sigma : {0.5, 1.5, 3.0}) {
    const auto out = gaussian_blur(img, sigma);
    double a = 0, b = 0;
    for (std::size_t i = 0; i < img.size(); ++i) a += img.data[i], b += out.data[i];
    EXPECT_NEAR(a / img.size(), b / img.size(), 1e-4);
  }
}

TEST(Blur, ImpulseCenterWeightMatchesClosedForm) {
  ImageTensor img(21, 21);
  for (std::size_t c = 0; c < 3; ++c) img.at(c, 10, 10) = 1.0f;
  const auto out = gaussian_blur(img, 1.0);
  double z = 0;
  for (int i = -3; i <= 3; ++i) z += std::exp(-0.5 * i * i);
  EXPECT_NEAR(out.at(0, 10, 10), 1.0 / (z * z), 1e-6);
  EXPECT_NEAR(out.at(2, 10, 11), std::exp(-0.5) / (z * z), 1e-6);
  EXPECT_EQ(out.at(0, 10, 14), 0.0f);  // outside radius ceil(3 sigma) = 3
}

TEST(Blur, KernelRadiusAndNormalization) {
  EXPECT_EQ(gaussian_kernel(1.0).size(), 7u);
  EXPECT_EQ(gaussian_kernel(0.1).size(), 3u);
  EXPECT_EQ(gaussian_kernel(2.0).size(), 13u);
  double s = 0;
  for (double v : gaussian_kernel(1.7)) s += v;
  EXPECT_NEAR(s, 1.0, 1e-15);
  EXPECT_THROW(gaussian_kernel(0.0), ConfigError);
}

TEST(Reflect, HalfSampleSymmetric) {
  EXPECT_EQ(reflect_index(-1, 4), 0u);
  EXPECT_EQ(reflect_index(-2, 4), 1u);
  EXPECT_EQ(reflect_index(4, 4), 3u);
  EXPECT_EQ(reflect_index(5, 4), 2u);
  EXPECT_EQ(reflect_index(9, 4), 1u);
  EXPECT_EQ(reflect_index(-7, 1), 0u);
}

TEST(HighPass, ConstantImageBecomesZero) {
  ImageTensor img(16, 16, 0.8f);
  const auto hp = high_pass_filter(img, 5.0);
  EXPECT_TRUE(hp.highpassed);
  for (float v : hp.data) EXPECT_NEAR(v, 0.0f, 1e-6);
}

TEST(HighPass, OrderingEnforcedByFlag) {
  const auto hp = high_pass_filter(random_image(8, 8, 1), 1.0);
  EXPECT_THROW(high_pass_filter(hp, 1.0), ContractViolation);
  EXPECT_THROW(horizontal_flip(hp), ContractViolation);
  EXPECT_THROW(grayscale(hp), ContractViolation);
  EXPECT_THROW(gaussian_blur(hp, 1.0), ContractViolation);
  AugmentationConfig cfg;
  Rng rng(1);
  EXPECT_THROW(color_jitter(hp, cfg.jitter, rng), ContractViolation);
  EXPECT_THROW(standard_view(hp, cfg, rng), ContractViolation);
  EXPECT_THROW(eval_transform(hp, cfg), ContractViolation);
}

TEST(HighPass, DefaultSigmaScalesWithImageSize) {
  EXPECT_EQ(default_highpass_sigma(224), 5.0);
  EXPECT_EQ(default_highpass_sigma(64), 1.0);
  EXPECT_EQ(default_highpass_sigma(16), 1.0);
  EXPECT_EQ(default_highpass_sigma(128), 3.0);
}

TEST(StandardView, NoRandomnessIsPureHighPassOfResize) {
  const auto img = random_image(40, 40, 7);
  const auto cfg = no_randomness(32);
  Rng rng(1);
  const auto expected = high_pass_filter(resize_bilinear(img, 32, 32), cfg.highpass_sigma);
  EXPECT_EQ(standard_view(img, cfg, rng), expected);
}

TEST(StandardView, StreamsDetermineTheView) {
  const auto img = random_image(64, 64, 8);
  AugmentationConfig cfg;
  Rng a1 = make_stream(42, StreamId{0, 3, 0, 0}), a2 = make_stream(42, StreamId{0, 3, 0, 0});
  Rng b = make_stream(42, StreamId{0, 3, 1, 0});
  const auto va1 = standard_view(img, cfg, a1);
  const auto va2 = standard_view(img, cfg, a2);
  const auto vb = standard_view(img, cfg, b);
  EXPECT_EQ(va1, va2);
  EXPECT_TRUE(std::memcmp(va1.data.data(), va2.data.data(), va1.size() * sizeof(float)) == 0);
  EXPECT_NE(va1.data, vb.data);
}

TEST(StandardView, ConstantImageGivesZeroViewWithJitterOff) {
  ImageTensor img(64, 64, 0.6f);
  AugmentationConfig cfg;
  cfg.jitter.apply_prob = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng = make_stream(1, StreamId{0, s, 0, 0});
    const auto v = standard_view(img, cfg, rng);
    EXPECT_TRUE(v.highpassed);
    for (float x : v.data) ASSERT_NEAR(x, 0.0f, 1e-6);
  }
}

TEST(StandardView, HighPassCanBeDisabledForAblation) {
  auto cfg = no_randomness(16);
  cfg.highpass_enabled = false;
  Rng rng(1);
  const auto v = standard_view(random_image(16, 16, 2), cfg, rng);
  EXPECT_FALSE(v.highpassed);
}

TEST(EvalTransform, ResizeCenterCropHighPass) {
  AugmentationConfig cfg;
  cfg.output_size = 64;
  const auto out = eval_transform(random_image(64, 64, 9), cfg);
  EXPECT_EQ(out.height, 64u);
  EXPECT_EQ(out.width, 64u);
  EXPECT_TRUE(out.highpassed);
  const auto wide = eval_transform(random_image(50, 100, 9), cfg);
  EXPECT_EQ(wide.height, 64u);
  EXPECT_EQ(wide.width, 64u);
}

TEST(Png, BlackAndWhiteDecodeExactly) {
  const auto dir = temp_dir("bw");
  for (std::uint8_t level : {std::uint8_t{0}, std::uint8_t{255}}) {
    Rgb8 raw{5, 7, std::vector<std::uint8_t>(5 * 7 * 3, level)};
    write_png_rgb8(raw, dir / "x.png");
    const auto img = decode_image(dir / "x.png");
    EXPECT_EQ(img.height, 5u);
    EXPECT_EQ(img.width, 7u);
    for (float v : img.data) EXPECT_EQ(v, level == 0 ? 0.0f : 1.0f);
  }
}

TEST(Png, RoundTripIsLossless) {
  const auto dir = temp_dir("rt");
  Rng rng(12);
  Rgb8 raw{13, 11, std::vector<std::uint8_t>(13 * 11 * 3)};
  for (auto& p : raw.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  write_png_rgb8(raw, dir / "r.png");
  EXPECT_EQ(read_png_rgb8(dir / "r.png").pixels, raw.pixels);
  encode_image(to_image(raw), dir / "r2.png");
  EXPECT_EQ(read_png_rgb8(dir / "r2.png").pixels, raw.pixels);
}

TEST(Png, SixteenBitRejected) {
  const auto dir = temp_dir("16");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = 2;
  image.height = 2;
  image.format = PNG_FORMAT_LINEAR_RGB;
  std::vector<std::uint16_t> px(12, 30000);
  ASSERT_TRUE(png_image_write_to_file(&image, (dir / "d.png").c_str(), 0, px.data(), 0, nullptr));
  EXPECT_THROW(decode_image(dir / "d.png"), DecodeError);
}

TEST(Png, CorruptAndMissingFiles) {
  const auto dir = temp_dir("bad");
  std::ofstream(dir / "bad.png") << "definitely not a png";
  EXPECT_THROW(decode_image(dir / "bad.png"), DecodeError);
  EXPECT_THROW(decode_image(dir / "missing.png"), IoError);
}

TEST(Png, StretchMapsExtremesToFullRange) {
  ImageTensor img(1, 2);
  img.data = {-0.5f, 0.5f, 0.0f, 0.0f, 0.25f, -0.5f};
  const auto rgb = to_rgb8_stretched(img);
  EXPECT_EQ(rgb.pixels[0], 0);    // pixel 0, R = -0.5
  EXPECT_EQ(rgb.pixels[3], 255);  // pixel 1, R = 0.5
}

TEST(AugmentConfig, ValidationRejectsBadValues) {
  AugmentationConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.flip_prob = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.crop_scale_min = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.highpass_sigma = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
