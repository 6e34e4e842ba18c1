#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mscn/core/error.hpp"

namespace mscn {

/// 3xHxW float raster, channel-first. Raw images live in [0,1]; after the
/// high-pass filter values are unbounded and centered near 0.
struct ImageTensor {
  static constexpr std::size_t channels = 3;

  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;
  bool highpassed = false;

  ImageTensor() = default;
  ImageTensor(std::size_t h, std::size_t w, float fill = 0.0f)
      : height(h), width(w), data(channels * h * w, fill) {}

  std::size_t plane() const { return height * width; }
  std::size_t size() const { return data.size(); }

  float& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * height + y) * width + x];
  }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }
  float* channel(std::size_t c) { return data.data() + c * plane(); }
  const float* channel(std::size_t c) const { return data.data() + c * plane(); }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

namespace detail {

inline void require_raw(const ImageTensor& img, const char* op) {
  require(!img.highpassed, op,
          " must run before the high-pass filter (augmentations act on raw images only)");
}

}  // namespace detail

/// Axis-aligned pixel rectangle inside an image.
struct CropRect {
  std::size_t top = 0, left = 0, height = 0, width = 0;
  friend bool operator==(const CropRect&, const CropRect&) = default;
};

/// Bilinear resample of `rect` to out_h x out_w using half-pixel centers.
/// Samples are clamped to the rectangle, so a same-size resample is exact.
inline ImageTensor resize_bilinear(const ImageTensor& img, const CropRect& rect, std::size_t out_h,
                                   std::size_t out_w) {
  require<ConfigError>(rect.height >= 1 && rect.width >= 1 && out_h >= 1 && out_w >= 1,
                       "resize needs non-empty source and target");
  require<ConfigError>(rect.top + rect.height <= img.height && rect.left + rect.width <= img.width,
                       "crop rectangle exceeds image bounds");
  ImageTensor out(out_h, out_w);
  out.highpassed = img.highpassed;

  struct Tap {
    std::size_t i0, i1;
    double f;
  };
  auto taps = [](std::size_t start, std::size_t len, std::size_t n) {
    std::vector<Tap> t(n);
    const double s = static_cast<double>(len) / static_cast<double>(n);
    for (std::size_t o = 0; o < n; ++o) {
      double src = (static_cast<double>(o) + 0.5) * s - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(len - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      const std::size_t i1 = std::min(i0 + 1, len - 1);
      t[o] = {start + i0, start + i1, src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(rect.top, rect.height, out_h);
  const auto tx = taps(rect.left, rect.width, out_w);

  for (std::size_t c = 0; c < ImageTensor::channels; ++c)
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const Tap& b = tx[x];
        double v;
        if (a.f == 0.0 && b.f == 0.0) {
          v = img.at(c, a.i0, b.i0);
        } else {
          const double top = (1 - b.f) * img.at(c, a.i0, b.i0) + b.f * img.at(c, a.i0, b.i1);
          const double bot = (1 - b.f) * img.at(c, a.i1, b.i0) + b.f * img.at(c, a.i1, b.i1);
          v = (1 - a.f) * top + a.f * bot;
        }
        out.at(c, y, x) = static_cast<float>(v);
      }
    }
  return out;
}

inline ImageTensor resize_bilinear(const ImageTensor& img, std::size_t out_h, std::size_t out_w) {
  return resize_bilinear(img, CropRect{0, 0, img.height, img.width}, out_h, out_w);
}

inline ImageTensor horizontal_flip(const ImageTensor& img) {
  detail::require_raw(img, "horizontal_flip");
  ImageTensor out = img;
  for (std::size_t c = 0; c < ImageTensor::channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y) {
      float* row = out.channel(c) + y * img.width;
      std::reverse(row, row + img.width);
    }
  return out;
}

inline constexpr float kLumaR = 0.299f, kLumaG = 0.587f, kLumaB = 0.114f;

/// Luma replicated to all three channels.
inline ImageTensor grayscale(const ImageTensor& img) {
  detail::require_raw(img, "grayscale");
  ImageTensor out(img.height, img.width);
  const float *r = img.channel(0), *g = img.channel(1), *b = img.channel(2);
  for (std::size_t i = 0; i < img.plane(); ++i) {
    const float l = std::clamp(kLumaR * r[i] + kLumaG * g[i] + kLumaB * b[i], 0.0f, 1.0f);
    out.channel(0)[i] = out.channel(1)[i] = out.channel(2)[i] = l;
  }
  return out;
}

}  // namespace mscn
