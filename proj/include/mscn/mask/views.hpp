#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "mscn/image/augment.hpp"
#include "mscn/mask/mask.hpp"

namespace mscn {

enum class Branch : std::uint8_t { a = 0, b = 1 };

struct MaskedView {
  ImageTensor image;
  MaskGrid mask;
  double noise_std = 0.0;
  Branch branch = Branch::a;
  StreamId stream;
};

/// Augmentation settings for one branch: the shared config with that branch's
/// blur probability.
inline AugmentationConfig branch_augmentation(const AugmentationConfig& aug,
                                              const BranchOverrides& branch) {
  AugmentationConfig out = aug;
  out.blur.apply_prob = branch.blur_prob;
  return out;
}

/// Masks one pre-mask view with draws from `rng`.
inline MaskedView mask_view(ImageTensor pre, const AugmentationConfig& aug, const MaskConfig& cfg,
                            Branch branch, const StreamId& id, Rng& rng) {
  const BranchOverrides& o = branch == Branch::a ? cfg.branch_a : cfg.branch_b;
  MaskedView v;
  v.branch = branch;
  v.stream = id;
  v.mask = build_branch_mask(cfg, o, aug.output_size, rng);
  v.noise_std = rng.uniform(cfg.noise_std_min, cfg.noise_std_max);
  // with the high-pass switched off the caller asked for raw-pixel masking
  const auto policy = aug.highpass_enabled ? RawMaskPolicy::reject : RawMaskPolicy::allow;
  v.image = apply_mask(pre, v.mask, v.noise_std, rng, policy);
  return v;
}

/// K branch-A views followed by one branch-B view. Each view draws its
/// standard augmentation and its mask from its own stream
/// (epoch, sample, branch, view index). With shared_view set, every view is
/// masked from branch A's first pre-mask view instead.
inline std::vector<MaskedView> generate_views(const ImageTensor& img,
                                              const AugmentationConfig& aug,
                                              const MaskConfig& cfg, std::uint64_t seed,
                                              std::uint64_t epoch, std::uint64_t sample) {
  const std::size_t K = cfg.num_masked_views;
  require<ConfigError>(K >= 1, "num_masked_views must be >= 1");
  const AugmentationConfig aug_a = branch_augmentation(aug, cfg.branch_a);
  const AugmentationConfig aug_b = branch_augmentation(aug, cfg.branch_b);

  std::vector<MaskedView> views;
  views.reserve(K + 1);
  std::optional<ImageTensor> shared;
  for (std::size_t k = 0; k <= K; ++k) {
    const Branch br = k < K ? Branch::a : Branch::b;
    const StreamId id{epoch, sample, static_cast<std::uint64_t>(br), k < K ? k : 0};
    Rng rng = make_stream(seed, id);
    ImageTensor pre;
    if (cfg.shared_view && shared) {
      pre = *shared;
    } else {
      pre = standard_view(img, br == Branch::a ? aug_a : aug_b, rng);
      if (cfg.shared_view) shared = pre;
    }
    views.push_back(mask_view(std::move(pre), aug, cfg, br, id, rng));
  }
  return views;
}

/// Loss pairs over generate_views() output: (A_i, B) for i < K.
inline std::vector<std::pair<std::size_t, std::size_t>> loss_pairs(std::size_t K) {
  std::vector<std::pair<std::size_t, std::size_t>> p;
  for (std::size_t i = 0; i < K; ++i) p.emplace_back(i, K);
  return p;
}

/// Kept cells white, masked cells black, one color channel per mask group, so
/// channel-wise masks show up in color.
inline ImageTensor mask_overlay(const MaskGrid& m) {
  ImageTensor out(m.cells_h * m.grid_size, m.cells_w * m.grid_size);
  for (std::size_t c = 0; c < ImageTensor::channels; ++c)
    for (std::size_t y = 0; y < out.height; ++y)
      for (std::size_t x = 0; x < out.width; ++x)
        out.at(c, y, x) = m.is_kept(m.group_of_channel(c), y / m.grid_size, x / m.grid_size);
  return out;
}

}  // namespace mscn
