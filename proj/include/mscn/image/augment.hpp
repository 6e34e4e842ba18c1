#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>

#include "mscn/core/rng.hpp"
#include "mscn/image/filters.hpp"
#include "mscn/image/image.hpp"

namespace mscn {

struct JitterConfig {
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.2;
  double hue = 0.1;
  double apply_prob = 0.8;
};

struct BlurConfig {
  double sigma_min = 0.1;
  double sigma_max = 2.0;
  double apply_prob = 1.0;
};

struct AugmentationConfig {
  double crop_scale_min = 0.08;
  double crop_scale_max = 1.0;
  double aspect_min = 3.0 / 4.0;
  double aspect_max = 4.0 / 3.0;
  double flip_prob = 0.5;
  JitterConfig jitter;
  double grayscale_prob = 0.2;
  BlurConfig blur;
  double highpass_sigma = 1.0;
  // Off only for the naive-masking ablation; masks then land on raw pixels.
  bool highpass_enabled = true;
  std::size_t output_size = 64;

  void validate() const {
    auto prob = [](double p, const char* name) {
      require<ConfigError>(p >= 0.0 && p <= 1.0, "augment.", name, " must lie in [0,1], got ", p);
    };
    prob(flip_prob, "flip_prob");
    prob(jitter.apply_prob, "jitter.apply_prob");
    prob(grayscale_prob, "grayscale_prob");
    prob(blur.apply_prob, "blur.apply_prob");
    require<ConfigError>(crop_scale_min > 0 && crop_scale_min <= crop_scale_max &&
                             crop_scale_max <= 1.0,
                         "augment.crop_scale range must satisfy 0 < min <= max <= 1, got (",
                         crop_scale_min, ", ", crop_scale_max, ")");
    require<ConfigError>(aspect_min > 0 && aspect_min <= aspect_max,
                         "augment aspect range must satisfy 0 < min <= max");
    for (double s : {jitter.brightness, jitter.contrast, jitter.saturation})
      require<ConfigError>(s >= 0 && s <= 1, "jitter strengths must lie in [0,1], got ", s);
    require<ConfigError>(jitter.hue >= 0 && jitter.hue <= 0.5,
                         "jitter.hue must lie in [0,0.5], got ", jitter.hue);
    require<ConfigError>(blur.sigma_min > 0 && blur.sigma_min <= blur.sigma_max,
                         "blur sigma range must satisfy 0 < min <= max");
    require<ConfigError>(highpass_sigma > 0, "augment.highpass_sigma must be > 0, got ",
                         highpass_sigma);
    require<ConfigError>(output_size >= 1, "augment.output_size must be >= 1");
  }
};

/// Default high-pass sigma for an image size: 5 px at 224 scaled linearly, at least 1.
inline double default_highpass_sigma(std::size_t image_size) {
  return std::max(1.0, std::round(5.0 * static_cast<double>(image_size) / 224.0));
}

/// Crop window with area fraction uniform in the scale range and aspect ratio
/// uniform in the aspect range. Degenerate draws are retried 10 times before
/// falling back to a centered crop with the aspect clamped into range.
inline CropRect sample_crop(std::size_t H, std::size_t W, const AugmentationConfig& cfg, Rng& rng) {
  const double area = static_cast<double>(H) * static_cast<double>(W);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max);
    const double ar = rng.uniform(cfg.aspect_min, cfg.aspect_max);
    const auto w = static_cast<long long>(std::llround(std::sqrt(target * ar)));
    const auto h = static_cast<long long>(std::llround(std::sqrt(target / ar)));
    if (w >= 1 && h >= 1 && w <= static_cast<long long>(W) && h <= static_cast<long long>(H)) {
      const auto uh = static_cast<std::size_t>(h), uw = static_cast<std::size_t>(w);
      const std::size_t top = rng.below(H - uh + 1);
      const std::size_t left = rng.below(W - uw + 1);
      return {top, left, uh, uw};
    }
  }
  const double ratio = static_cast<double>(W) / static_cast<double>(H);
  std::size_t h = H, w = W;
  if (ratio < cfg.aspect_min)
    h = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(W / cfg.aspect_min)), 1, H);
  else if (ratio > cfg.aspect_max)
    w = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(H * cfg.aspect_max)), 1, W);
  return {(H - h) / 2, (W - w) / 2, h, w};
}

inline ImageTensor random_resized_crop(const ImageTensor& img, const AugmentationConfig& cfg,
                                       Rng& rng) {
  detail::require_raw(img, "random_resized_crop");
  const CropRect r = sample_crop(img.height, img.width, cfg, rng);
  return resize_bilinear(img, r, cfg.output_size, cfg.output_size);
}

namespace detail {

inline void clamp01(ImageTensor& img) {
  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

inline void adjust_brightness(ImageTensor& img, float f) {
  for (auto& v : img.data) v *= f;
  clamp01(img);
}

inline void adjust_contrast(ImageTensor& img, float f) {
  double m = 0.0;
  for (std::size_t i = 0; i < img.plane(); ++i)
    m += kLumaR * img.channel(0)[i] + kLumaG * img.channel(1)[i] + kLumaB * img.channel(2)[i];
  const auto mean = static_cast<float>(m / static_cast<double>(img.plane()));
  for (auto& v : img.data) v = (v - mean) * f + mean;
  clamp01(img);
}

inline void adjust_saturation(ImageTensor& img, float f) {
  float *r = img.channel(0), *g = img.channel(1), *b = img.channel(2);
  for (std::size_t i = 0; i < img.plane(); ++i) {
    const float l = kLumaR * r[i] + kLumaG * g[i] + kLumaB * b[i];
    r[i] = (r[i] - l) * f + l;
    g[i] = (g[i] - l) * f + l;
    b[i] = (b[i] - l) * f + l;
  }
  clamp01(img);
}

// Rotates hue by `shift` turns through HSV.
inline void adjust_hue(ImageTensor& img, float shift) {
  float *R = img.channel(0), *G = img.channel(1), *B = img.channel(2);
  for (std::size_t i = 0; i < img.plane(); ++i) {
    const float r = R[i], g = G[i], b = B[i];
    const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const float d = mx - mn;
    if (d <= 0.0f) continue;  // achromatic: hue undefined, rotation is a no-op
    float h;
    if (mx == r)
      h = (g - b) / d;
    else if (mx == g)
      h = 2.0f + (b - r) / d;
    else
      h = 4.0f + (r - g) / d;
    h = h / 6.0f + shift;
    h -= std::floor(h);
    const float s = d / mx, v = mx;
    const float h6 = h * 6.0f;
    const int sector = static_cast<int>(h6) % 6;
    const float f = h6 - std::floor(h6);
    const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    float nr, ng, nb;
    switch (sector) {
      case 0: nr = v, ng = t, nb = p; break;
      case 1: nr = q, ng = v, nb = p; break;
      case 2: nr = p, ng = v, nb = t; break;
      case 3: nr = p, ng = q, nb = v; break;
      case 4: nr = t, ng = p, nb = v; break;
      default: nr = v, ng = p, nb = q; break;
    }
    R[i] = std::clamp(nr, 0.0f, 1.0f);
    G[i] = std::clamp(ng, 0.0f, 1.0f);
    B[i] = std::clamp(nb, 0.0f, 1.0f);
  }
}

}  // namespace detail

/// Brightness, contrast, saturation and hue in a random order. Factors are
/// uniform in [1-s, 1+s]; the hue shift is uniform in [-h, h] turns. A zero
/// strength skips its op, so all-zero strengths are an exact identity.
inline ImageTensor color_jitter(const ImageTensor& img, const JitterConfig& cfg, Rng& rng) {
  detail::require_raw(img, "color_jitter");
  const auto b = static_cast<float>(rng.uniform(1 - cfg.brightness, 1 + cfg.brightness));
  const auto c = static_cast<float>(rng.uniform(1 - cfg.contrast, 1 + cfg.contrast));
  const auto s = static_cast<float>(rng.uniform(1 - cfg.saturation, 1 + cfg.saturation));
  const auto h = static_cast<float>(rng.uniform(-cfg.hue, cfg.hue));
  std::array<int, 4> order{0, 1, 2, 3};
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

  ImageTensor out = img;
  for (int op : order) {
    switch (op) {
      case 0: if (cfg.brightness > 0) detail::adjust_brightness(out, b); break;
      case 1: if (cfg.contrast > 0) detail::adjust_contrast(out, c); break;
      case 2: if (cfg.saturation > 0) detail::adjust_saturation(out, s); break;
      default: if (cfg.hue > 0) detail::adjust_hue(out, h); break;
    }
  }
  return out;
}

/// Blur with sigma drawn uniformly from the configured range.
inline ImageTensor random_gaussian_blur(const ImageTensor& img, const BlurConfig& cfg, Rng& rng) {
  return gaussian_blur(img, rng.uniform(cfg.sigma_min, cfg.sigma_max));
}

/// Crop, flip, jitter, grayscale, blur, then high-pass. Every stochastic
/// choice comes from `rng`, so (image, cfg, stream) fixes the view.
inline ImageTensor standard_view(const ImageTensor& img, const AugmentationConfig& cfg, Rng& rng) {
  detail::require_raw(img, "standard_view");
  ImageTensor v = random_resized_crop(img, cfg, rng);
  if (rng.bernoulli(cfg.flip_prob)) v = horizontal_flip(v);
  if (rng.bernoulli(cfg.jitter.apply_prob)) v = color_jitter(v, cfg.jitter, rng);
  if (rng.bernoulli(cfg.grayscale_prob)) v = grayscale(v);
  if (rng.bernoulli(cfg.blur.apply_prob)) v = random_gaussian_blur(v, cfg.blur, rng);
  if (cfg.highpass_enabled) v = high_pass_filter(v, cfg.highpass_sigma);
  return v;
}

/// Deterministic evaluation transform: resize the short side to 1.14x the
/// output size, center crop, high-pass.
inline ImageTensor eval_transform(const ImageTensor& img, const AugmentationConfig& cfg) {
  detail::require_raw(img, "eval_transform");
  const std::size_t S = cfg.output_size;
  const auto target = static_cast<double>(std::llround(1.14 * static_cast<double>(S)));
  const double k = target / static_cast<double>(std::min(img.height, img.width));
  const auto rh = std::max<std::size_t>(S, static_cast<std::size_t>(std::llround(img.height * k)));
  const auto rw = std::max<std::size_t>(S, static_cast<std::size_t>(std::llround(img.width * k)));
  const ImageTensor resized = resize_bilinear(img, rh, rw);
  ImageTensor out = resize_bilinear(resized, CropRect{(rh - S) / 2, (rw - S) / 2, S, S}, S, S);
  if (cfg.highpass_enabled) out = high_pass_filter(out, cfg.highpass_sigma);
  return out;
}

}  // namespace mscn
