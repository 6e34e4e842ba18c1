#include <gtest/gtest.h>

#include <cmath>

#include "mscn/mask/views.hpp"

using namespace mscn;

namespace {

ImageTensor random_image(std::size_t s, std::uint64_t seed) {
  ImageTensor img(s, s);
  Rng rng(seed);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

ImageTensor highpassed(std::size_t s, std::uint64_t seed) {
  return high_pass_filter(random_image(s, seed), 1.0);
}

// |observed - n p| within 3 binomial standard deviations
void expect_binomial(std::size_t hits, std::size_t n, double p, const std::string& what) {
  const double sigma = std::sqrt(n * p * (1 - p));
  EXPECT_LE(std::abs(double(hits) - n * p), 3 * sigma)
      << what << ": " << hits << " of " << n << " at p=" << p;
}

}  // namespace

TEST(GridSize, DefaultIsDivisorNearestSeventh) {
  EXPECT_EQ(default_grid_size(64), 8u);
  EXPECT_EQ(default_grid_size(224), 32u);
  EXPECT_EQ(default_grid_size(32), 4u);
  EXPECT_EQ(default_grid_size(96), 12u);
  MaskConfig cfg;
  cfg.grid_size = 7;
  EXPECT_THROW(resolve_grid_size(cfg, 64), ConfigError);
}

TEST(GridMask, CountFollowsRoundHalfUp) {
  // integer oracle: round_half_up(pct/100 * cells) == (pct * cells + 50) / 100
  Rng rng(1);
  for (std::size_t size : {64u, 32u, 40u, 80u})
    for (std::size_t grid : {4u, 8u}) {
      if (size % grid) continue;
      const std::size_t cells = (size / grid) * (size / grid);
      for (int pct : {10, 15, 20, 25, 30, 35, 40, 45, 50, 60, 70, 80, 90}) {
        const std::size_t expected = (pct * cells + 50) / 100;
        EXPECT_EQ(masked_cell_count(pct / 100.0, cells), expected) << pct << "% of " << cells;
        for (std::size_t groups : {1u, 3u}) {
          const auto m = sample_grid_mask(size, grid, pct / 100.0, groups, rng);
          for (std::size_t g = 0; g < groups; ++g) EXPECT_EQ(m.masked_count(g), expected);
        }
      }
    }
  EXPECT_EQ(masked_cell_count(0.15, 64), 10u);
}

TEST(GridMask, ZeroRatioIsIdentityAndRatioOneRejected) {
  Rng rng(2);
  EXPECT_TRUE(sample_grid_mask(64, 8, 0.0, 1, rng).is_identity());
  EXPECT_THROW(sample_grid_mask(64, 8, 1.0, 1, rng), ConfigError);
  EXPECT_THROW(sample_grid_mask(64, 8, 1.3, 1, rng), ConfigError);
}

TEST(GridMask, CellsMaskedUniformly) {
  Rng rng(3);
  const std::size_t draws = 10000;
  std::vector<std::size_t> hits(64, 0);
  for (std::size_t i = 0; i < draws; ++i) {
    const auto m = sample_grid_mask(64, 8, 0.15, 1, rng);
    for (std::size_t c = 0; c < 64; ++c) hits[c] += m.kept[c] == 0;
  }
  for (std::size_t c = 0; c < 64; ++c)
    expect_binomial(hits[c], draws, 10.0 / 64.0, "cell " + std::to_string(c));
}

TEST(FocalMask, FullAreaIsIdentity) {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) EXPECT_TRUE(sample_focal_mask(64, 8, 1.0, 1.0, 1, rng).is_identity());
}

TEST(FocalMask, KeptRegionIsOneRectangle) {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const auto m = sample_focal_mask(64, 8, 0.2, 0.5, 3, rng);
    for (std::size_t g = 0; g < 3; ++g) {
      std::size_t y0 = 99, y1 = 0, x0 = 99, x1 = 0, kept = 0;
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x)
          if (m.is_kept(g, y, x)) {
            ++kept;
            y0 = std::min(y0, y), y1 = std::max(y1, y);
            x0 = std::min(x0, x), x1 = std::max(x1, x);
          }
      ASSERT_GT(kept, 0u);
      EXPECT_EQ(kept, (y1 - y0 + 1) * (x1 - x0 + 1));  // bounding box is fully kept
    }
  }
}

TEST(FocalMask, MeanKeptFractionIsRangeMidpoint) {
  Rng rng(6);
  const int n = 10000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double f = 1.0 - sample_focal_mask(64, 8, 0.2, 0.5, 1, rng).masked_fraction();
    sum += f, sq += f * f;
  }
  const double mean = sum / n, sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(mean, 0.35, 3 * sd / std::sqrt(n));
}

TEST(BranchMask, ForcedChoices) {
  MaskConfig cfg;
  cfg.focal_prob = 1.0;
  cfg.channel_independent_prob = 0.0;
  BranchOverrides always{1.0, 1.0};
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const auto m = build_branch_mask(cfg, always, 64, rng);
    EXPECT_EQ(m.kind, MaskKind::focal);
    EXPECT_EQ(m.groups, 1u);
  }
  BranchOverrides never{0.0, 1.0};
  EXPECT_TRUE(build_branch_mask(cfg, never, 64, rng).is_identity());
}

TEST(BranchMask, SelectionFrequenciesMatchConfiguredProbabilities) {
  MaskConfig cfg;  // focal 0.2, channel-wise 0.7
  BranchOverrides always{1.0, 1.0};
  Rng rng(8);
  const std::size_t n = 10000;
  std::size_t focal = 0, channel = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto m = build_branch_mask(cfg, always, 64, rng);
    focal += m.kind == MaskKind::focal;
    channel += m.groups == 3;
  }
  expect_binomial(focal, n, 0.2, "focal");
  expect_binomial(channel, n, 0.7, "channel-wise");
}

TEST(BranchMask, MaskProbabilityGatesMasking) {
  MaskConfig cfg;
  Rng rng(9);
  std::size_t masked = 0;
  const std::size_t n = 10000;
  for (std::size_t i = 0; i < n; ++i) masked += !build_branch_mask(cfg, cfg.branch_b, 64, rng).is_identity();
  expect_binomial(masked, n, 0.5, "branch B masking");
}

TEST(BranchMask, ChannelMasksRarelyCoincide) {
  MaskConfig cfg;
  cfg.focal_prob = 0;
  cfg.channel_independent_prob = 1.0;
  for (double ratio : {0.1, 0.3, 0.5})
    for (std::size_t grid : {8u, 16u}) {  // 8x8 and 4x4 cells
      cfg.masking_ratio = ratio;
      cfg.grid_size = grid;
      Rng rng(10);
      int same = 0;
      for (int i = 0; i < 1000; ++i) {
        const auto m = build_branch_mask(cfg, cfg.branch_a, 64, rng);
        same += std::equal(m.group(0), m.group(0) + m.cells(), m.group(1)) &&
                std::equal(m.group(1), m.group(1) + m.cells(), m.group(2));
      }
      EXPECT_LT(same, 10) << "ratio " << ratio << " grid " << grid;
    }
}

TEST(ApplyMask, IdentityMaskIsBitExact) {
  const auto v = highpassed(64, 1);
  Rng rng(1);
  EXPECT_EQ(apply_mask(v, MaskGrid::identity(64, 8), 0.2, rng), v);
}

TEST(ApplyMask, ZeroNoiseGivesExactZeros) {
  const auto v = highpassed(64, 2);
  Rng rng(2);
  const auto m = sample_grid_mask(64, 8, 0.5, 3, rng);
  const auto out = apply_mask(v, m, 0.0, rng);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        if (m.is_kept(m.group_of_channel(c), y / 8, x / 8))
          EXPECT_EQ(out.at(c, y, x), v.at(c, y, x));
        else
          EXPECT_EQ(out.at(c, y, x), 0.0f);
      }
}

TEST(ApplyMask, NoiseVarianceMatchesStd) {
  // 16 masked cells of 8x8 in one group over 3 channels: 3072 noise pixels per view
  const auto v = highpassed(64, 3);
  Rng rng(3);
  const double std_ = 0.17;
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const auto m = sample_grid_mask(64, 8, 0.25, 1, rng);
    const auto out = apply_mask(v, m, std_, rng);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x)
          if (!m.is_kept(0, y / 8, x / 8)) {
            sum += out.at(c, y, x);
            sq += double(out.at(c, y, x)) * out.at(c, y, x);
            ++n;
          }
  }
  const double var = sq / n - (sum / n) * (sum / n);
  EXPECT_NEAR(var / (std_ * std_), 1.0, 0.05);
  EXPECT_NEAR(sum / n, 0.0, 0.01);
}

TEST(ApplyMask, RawViewRejectedUnlessAllowed) {
  const auto raw = random_image(64, 4);
  Rng rng(4);
  const auto m = sample_grid_mask(64, 8, 0.15, 1, rng);
  EXPECT_THROW(apply_mask(raw, m, 0.1, rng), ContractViolation);
  EXPECT_NO_THROW(apply_mask(raw, m, 0.1, rng, RawMaskPolicy::allow));
  EXPECT_THROW(apply_mask(highpassed(32, 1), m, 0.1, rng), ConfigError);
}

TEST(Views, LayoutAndStreams) {
  AugmentationConfig aug;
  MaskConfig cfg;
  const auto img = random_image(64, 5);
  const auto views = generate_views(img, aug, cfg, 11, 2, 7);
  ASSERT_EQ(views.size(), 3u);
  EXPECT_EQ(views[0].branch, Branch::a);
  EXPECT_EQ(views[1].branch, Branch::a);
  EXPECT_EQ(views[2].branch, Branch::b);
  EXPECT_EQ(views[1].stream, (StreamId{2, 7, 0, 1}));
  EXPECT_EQ(views[2].stream, (StreamId{2, 7, 1, 0}));
  for (const auto& v : views) {
    EXPECT_TRUE(v.image.highpassed);
    EXPECT_GE(v.noise_std, cfg.noise_std_min);
    EXPECT_LE(v.noise_std, cfg.noise_std_max);
  }
  EXPECT_NE(views[0].image.data, views[1].image.data);
  const auto pairs = loss_pairs(2);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0], (std::pair<std::size_t, std::size_t>{0, 2}));
  EXPECT_EQ(pairs[1], (std::pair<std::size_t, std::size_t>{1, 2}));
}

TEST(Views, SingleMaskedViewGivesClassicPair) {
  MaskConfig cfg;
  cfg.num_masked_views = 1;
  const auto views = generate_views(random_image(64, 6), AugmentationConfig{}, cfg, 1, 0, 0);
  EXPECT_EQ(views.size(), 2u);
  EXPECT_EQ(loss_pairs(1).size(), 1u);
}

TEST(Views, ReproducibleFromSeedEpochSample) {
  AugmentationConfig aug;
  MaskConfig cfg;
  const auto img = random_image(64, 7);
  const auto a = generate_views(img, aug, cfg, 5, 1, 3);
  const auto b = generate_views(img, aug, cfg, 5, 1, 3);
  const auto c = generate_views(img, aug, cfg, 5, 2, 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].mask, b[i].mask);
    EXPECT_NE(a[i].image.data, c[i].image.data);
  }
}

TEST(Views, SharedViewFlagSharesThePreMaskView) {
  AugmentationConfig aug;
  MaskConfig cfg;
  cfg.branch_a.mask_prob = cfg.branch_b.mask_prob = 0.0;  // expose the pre-mask views
  const auto img = random_image(64, 8);
  cfg.shared_view = true;
  const auto shared = generate_views(img, aug, cfg, 3, 0, 0);
  EXPECT_EQ(shared[0].image, shared[1].image);
  EXPECT_EQ(shared[0].image, shared[2].image);
  cfg.shared_view = false;
  const auto separate = generate_views(img, aug, cfg, 3, 0, 0);
  EXPECT_NE(separate[0].image.data, separate[2].image.data);
}

TEST(Views, BranchBlurOverride) {
  AugmentationConfig aug;
  MaskConfig cfg;
  EXPECT_EQ(branch_augmentation(aug, cfg.branch_a).blur.apply_prob, 1.0);
  EXPECT_EQ(branch_augmentation(aug, cfg.branch_b).blur.apply_prob, 0.1);
}

TEST(Views, NaiveMaskingAllowedWhenHighPassDisabled) {
  AugmentationConfig aug;
  aug.highpass_enabled = false;
  MaskConfig cfg;
  const auto views = generate_views(random_image(64, 9), aug, cfg, 1, 0, 0);
  EXPECT_FALSE(views[0].image.highpassed);
}

TEST(Overlay, ShowsKeptCells) {
  Rng rng(1);
  const auto m = sample_grid_mask(32, 8, 0.5, 3, rng);
  const auto o = mask_overlay(m);
  EXPECT_EQ(o.height, 32u);
  for (std::size_t c = 0; c < 3; ++c)
    EXPECT_EQ(o.at(c, 9, 17), m.is_kept(c, 1, 2) ? 1.0f : 0.0f);
}

TEST(MaskConfig, Validation) {
  MaskConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.masking_ratio = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.noise_std_min = 0.3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.num_masked_views = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
