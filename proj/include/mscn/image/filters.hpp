#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mscn/image/image.hpp"

namespace mscn {

/// Normalized 1-D Gaussian taps, radius ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  require<ConfigError>(sigma > 0 && std::isfinite(sigma), "gaussian sigma must be > 0, got ", sigma);
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double s = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[i + radius] = v;
    s += v;
  }
  for (auto& v : k) v /= s;
  return k;
}

/// Half-sample symmetric index into [0, n) (dcba|abcd|dcba). Folds
/// repeatedly, so kernels wider than the image are fine.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(n)) i = period - 1 - i;
  return static_cast<std::size_t>(i);
}

namespace detail {

// One separable pass over every channel; `horizontal` picks the axis.
inline void convolve_axis(const ImageTensor& src, ImageTensor& dst, const std::vector<double>& k,
                          bool horizontal) {
  const auto radius = static_cast<std::ptrdiff_t>(k.size() / 2);
  const std::size_t H = src.height, W = src.width;
  for (std::size_t c = 0; c < ImageTensor::channels; ++c) {
    const float* in = src.channel(c);
    float* out = dst.channel(c);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
          const std::size_t idx =
              horizontal
                  ? y * W + reflect_index(static_cast<std::ptrdiff_t>(x) + t, W)
                  : reflect_index(static_cast<std::ptrdiff_t>(y) + t, H) * W + x;
          acc += k[t + radius] * in[idx];
        }
        out[y * W + x] = static_cast<float>(acc);
      }
  }
}

inline ImageTensor blur_unchecked(const ImageTensor& img, double sigma) {
  const auto k = gaussian_kernel(sigma);
  ImageTensor tmp(img.height, img.width), out(img.height, img.width);
  convolve_axis(img, tmp, k, true);
  convolve_axis(tmp, out, k, false);
  out.highpassed = img.highpassed;
  return out;
}

}  // namespace detail

/// Separable Gaussian blur with reflect padding.
inline ImageTensor gaussian_blur(const ImageTensor& img, double sigma) {
  detail::require_raw(img, "gaussian_blur");
  return detail::blur_unchecked(img, sigma);
}

/// img - blur(img, sigma). Constant regions become 0, which the mask engine
/// relies on: 0 is "no information" rather than a dark pixel.
inline ImageTensor high_pass_filter(const ImageTensor& img, double sigma) {
  require(!img.highpassed, "high-pass filter applied twice");
  ImageTensor out = detail::blur_unchecked(img, sigma);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = img.data[i] - out.data[i];
  out.highpassed = true;
  return out;
}

}  // namespace mscn
