#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "mscn/core/rng.hpp"
#include "mscn/image/image.hpp"

namespace mscn {

/// Per-branch knobs for the asymmetric setup. Branch A defaults to always
/// masking and blurring; branch B masks half the time and rarely blurs.
struct BranchOverrides {
  double mask_prob = 1.0;
  double blur_prob = 1.0;
};

struct MaskConfig {
  double masking_ratio = 0.15;
  // 0 selects default_grid_size() for the view size.
  std::size_t grid_size = 0;
  double focal_prob = 0.2;
  double focal_kept_min = 0.2;
  double focal_kept_max = 0.5;
  double channel_independent_prob = 0.7;
  double noise_std_min = 0.05;
  double noise_std_max = 0.25;
  BranchOverrides branch_a{1.0, 1.0};
  BranchOverrides branch_b{0.5, 0.1};
  std::size_t num_masked_views = 2;
  // Debug/ablation: every view is masked from one shared pre-mask view.
  bool shared_view = false;

  void validate() const {
    auto prob = [](double p, const char* name) {
      require<ConfigError>(p >= 0.0 && p <= 1.0, "mask.", name, " must lie in [0,1], got ", p);
    };
    require<ConfigError>(masking_ratio >= 0.0 && masking_ratio < 1.0,
                         "mask.masking_ratio must lie in [0,1), got ", masking_ratio);
    prob(focal_prob, "focal_prob");
    prob(channel_independent_prob, "channel_independent_prob");
    prob(branch_a.mask_prob, "branch_a.mask_prob");
    prob(branch_a.blur_prob, "branch_a.blur_prob");
    prob(branch_b.mask_prob, "branch_b.mask_prob");
    prob(branch_b.blur_prob, "branch_b.blur_prob");
    require<ConfigError>(focal_kept_min > 0 && focal_kept_min <= focal_kept_max &&
                             focal_kept_max <= 1.0,
                         "mask.focal_kept_area range must satisfy 0 < min <= max <= 1, got (",
                         focal_kept_min, ", ", focal_kept_max, ")");
    require<ConfigError>(noise_std_min >= 0 && noise_std_min <= noise_std_max,
                         "mask.noise_std range must satisfy 0 <= min <= max");
    require<ConfigError>(num_masked_views >= 1, "mask.num_masked_views must be >= 1");
  }
};

/// Divisor of `image_size` closest to image_size / 7, ties going to the larger
/// divisor: 8 at 64 px, 32 at 224 px.
inline std::size_t default_grid_size(std::size_t image_size) {
  require<ConfigError>(image_size >= 1, "image size must be >= 1");
  const double target = static_cast<double>(image_size) / 7.0;
  std::size_t best = 1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t d = 1; d <= image_size; ++d) {
    if (image_size % d) continue;
    const double dist = std::abs(static_cast<double>(d) - target);
    if (dist <= best_d) best = d, best_d = dist;
  }
  return best;
}

inline std::size_t resolve_grid_size(const MaskConfig& cfg, std::size_t image_size) {
  const std::size_t g = cfg.grid_size ? cfg.grid_size : default_grid_size(image_size);
  require<ConfigError>(image_size % g == 0, "mask.grid_size ", g,
                       " does not divide the view size ", image_size);
  return g;
}

/// round_half_up(ratio * cells). The epsilon absorbs binary representation
/// error of decimal ratios such as 0.35 * 10.
inline std::size_t masked_cell_count(double ratio, std::size_t cells) {
  require<ConfigError>(ratio >= 0.0 && ratio < 1.0, "masking ratio must lie in [0,1), got ", ratio);
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(cells) + 0.5 + 1e-9));
}

enum class MaskKind { none, grid, focal };

inline const char* to_string(MaskKind k) {
  switch (k) {
    case MaskKind::none: return "none";
    case MaskKind::grid: return "grid";
    default: return "focal";
  }
}

/// Kept/masked flag per grid cell, for one group (spatial-wise) or three
/// groups (one per RGB channel).
struct MaskGrid {
  std::size_t cells_h = 0, cells_w = 0, grid_size = 1, groups = 1;
  MaskKind kind = MaskKind::none;
  std::vector<std::uint8_t> kept;  // groups * cells_h * cells_w, 1 = kept

  MaskGrid() = default;
  MaskGrid(std::size_t ch, std::size_t cw, std::size_t grid, std::size_t g, MaskKind k)
      : cells_h(ch), cells_w(cw), grid_size(grid), groups(g), kind(k), kept(g * ch * cw, 1) {}

  std::size_t cells() const { return cells_h * cells_w; }
  std::size_t group_of_channel(std::size_t c) const { return groups == 1 ? 0 : c; }
  bool is_kept(std::size_t g, std::size_t cy, std::size_t cx) const {
    return kept[(g * cells_h + cy) * cells_w + cx] != 0;
  }
  std::uint8_t* group(std::size_t g) { return kept.data() + g * cells(); }
  const std::uint8_t* group(std::size_t g) const { return kept.data() + g * cells(); }

  std::size_t masked_count(std::size_t g) const {
    return cells() - std::accumulate(group(g), group(g) + cells(), std::size_t{0});
  }
  double masked_fraction() const {
    std::size_t m = 0;
    for (std::size_t g = 0; g < groups; ++g) m += masked_count(g);
    return static_cast<double>(m) / static_cast<double>(groups * cells());
  }
  bool is_identity() const {
    return std::all_of(kept.begin(), kept.end(), [](std::uint8_t k) { return k != 0; });
  }

  static MaskGrid identity(std::size_t image_size, std::size_t grid) {
    return MaskGrid(image_size / grid, image_size / grid, grid, 1, MaskKind::none);
  }

  friend bool operator==(const MaskGrid&, const MaskGrid&) = default;
};

/// Grid mask: exactly masked_cell_count(ratio) cells per group, chosen
/// uniformly without replacement; groups are drawn independently.
inline MaskGrid sample_grid_mask(std::size_t image_size, std::size_t grid, double ratio,
                                 std::size_t groups, Rng& rng) {
  require<ConfigError>(grid >= 1 && image_size % grid == 0, "grid size ", grid,
                       " must divide image size ", image_size);
  MaskGrid m(image_size / grid, image_size / grid, grid, groups, MaskKind::grid);
  const std::size_t n = m.cells(), k = masked_cell_count(ratio, n);
  std::vector<std::size_t> idx(n);
  for (std::size_t g = 0; g < groups; ++g) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    for (std::size_t i = 0; i < k; ++i) m.group(g)[idx[i]] = 0;
  }
  return m;
}

namespace detail {

// Integer side length with E[result] == x (stochastic rounding).
inline long long stochastic_round(double x, Rng& rng) {
  const double f = std::floor(x);
  return static_cast<long long>(f) + (rng.bernoulli(x - f) ? 1 : 0);
}

inline void keep_rectangle(MaskGrid& m, std::size_t g, std::size_t h, std::size_t w, Rng& rng) {
  const std::size_t top = rng.below(m.cells_h - h + 1);
  const std::size_t left = rng.below(m.cells_w - w + 1);
  std::uint8_t* k = m.group(g);
  std::fill(k, k + m.cells(), std::uint8_t{0});
  for (std::size_t y = top; y < top + h; ++y)
    for (std::size_t x = left; x < left + w; ++x) k[y * m.cells_w + x] = 1;
}

}  // namespace detail

/// Focal mask: one grid-aligned kept rectangle per group, everything else
/// masked. Area fraction uniform in [kept_min, kept_max], aspect uniform in
/// [3/4, 4/3]. The height is rounded stochastically to whole cells and the
/// width then set to target/height, also rounded stochastically, so the kept
/// area is unbiased. After 10 infeasible draws the rectangle closest in area
/// (then aspect) to the last draw is used.
inline MaskGrid sample_focal_mask(std::size_t image_size, std::size_t grid, double kept_min,
                                  double kept_max, std::size_t groups, Rng& rng) {
  require<ConfigError>(kept_min > 0 && kept_min <= kept_max && kept_max <= 1.0,
                       "focal kept-area range must satisfy 0 < min <= max <= 1");
  require<ConfigError>(grid >= 1 && image_size % grid == 0, "grid size ", grid,
                       " must divide image size ", image_size);
  MaskGrid m(image_size / grid, image_size / grid, grid, groups, MaskKind::focal);
  const auto CH = static_cast<long long>(m.cells_h), CW = static_cast<long long>(m.cells_w);
  for (std::size_t g = 0; g < groups; ++g) {
    double target = 0, ar = 1;
    bool placed = false;
    for (int attempt = 0; attempt < 10 && !placed; ++attempt) {
      target = rng.uniform(kept_min, kept_max) * static_cast<double>(m.cells());
      ar = rng.uniform(3.0 / 4.0, 4.0 / 3.0);
      const long long h = detail::stochastic_round(std::sqrt(target / ar), rng);
      if (h < 1 || h > CH) continue;
      const long long w = detail::stochastic_round(target / static_cast<double>(h), rng);
      if (w >= 1 && h >= 1 && w <= CW && h <= CH) {
        detail::keep_rectangle(m, g, static_cast<std::size_t>(h), static_cast<std::size_t>(w), rng);
        placed = true;
      }
    }
    if (placed) continue;
    long long bh = 1, bw = 1;
    double best_area = std::numeric_limits<double>::infinity(), best_aspect = best_area;
    for (long long h = 1; h <= CH; ++h)
      for (long long w = 1; w <= CW; ++w) {
        const double da = std::abs(static_cast<double>(h * w) - target);
        const double dr = std::abs(std::log(static_cast<double>(w) / static_cast<double>(h)) -
                                   std::log(ar));
        if (da < best_area - 1e-12 || (std::abs(da - best_area) <= 1e-12 && dr < best_aspect)) {
          bh = h, bw = w, best_area = da, best_aspect = dr;
        }
      }
    detail::keep_rectangle(m, g, static_cast<std::size_t>(bh), static_cast<std::size_t>(bw), rng);
  }
  return m;
}

/// Mask for one view of one branch: with probability mask_prob a mask is drawn,
/// focal with probability focal_prob (grid otherwise), channel-wise with
/// probability channel_independent_prob (three independent draws of the
/// chosen type), spatial-wise otherwise.
inline MaskGrid build_branch_mask(const MaskConfig& cfg, const BranchOverrides& branch,
                                  std::size_t image_size, Rng& rng) {
  const std::size_t grid = resolve_grid_size(cfg, image_size);
  if (!rng.bernoulli(branch.mask_prob)) return MaskGrid::identity(image_size, grid);
  const bool focal = rng.bernoulli(cfg.focal_prob);
  const std::size_t groups = rng.bernoulli(cfg.channel_independent_prob) ? 3 : 1;
  return focal ? sample_focal_mask(image_size, grid, cfg.focal_kept_min, cfg.focal_kept_max,
                                   groups, rng)
               : sample_grid_mask(image_size, grid, cfg.masking_ratio, groups, rng);
}

/// Whether apply_mask may touch an image that skipped the high-pass filter.
enum class RawMaskPolicy { reject, allow };

/// M * x + (1 - M) * z: kept pixels are copied, masked pixels become
/// N(0, noise_std^2) samples (exactly 0 when noise_std is 0). Masking raw
/// pixels creates parasitic edges, so it is refused unless explicitly allowed.
inline ImageTensor apply_mask(const ImageTensor& view, const MaskGrid& mask, double noise_std,
                              Rng& rng, RawMaskPolicy policy = RawMaskPolicy::reject) {
  require(view.highpassed || policy == RawMaskPolicy::allow,
          "apply_mask needs a high-pass filtered view");
  require<ConfigError>(view.height == mask.cells_h * mask.grid_size &&
                           view.width == mask.cells_w * mask.grid_size,
                       "mask grid ", mask.cells_h, "x", mask.cells_w, " @", mask.grid_size,
                       "px does not cover a ", view.height, "x", view.width, " view");
  require<ConfigError>(noise_std >= 0, "noise std must be >= 0");
  ImageTensor out = view;
  if (mask.is_identity()) return out;
  for (std::size_t c = 0; c < ImageTensor::channels; ++c) {
    const std::size_t g = mask.group_of_channel(c);
    for (std::size_t y = 0; y < view.height; ++y)
      for (std::size_t x = 0; x < view.width; ++x) {
        if (mask.is_kept(g, y / mask.grid_size, x / mask.grid_size)) continue;
        out.at(c, y, x) = noise_std > 0 ? static_cast<float>(noise_std * rng.normal()) : 0.0f;
      }
  }
  return out;
}

}  // namespace mscn
