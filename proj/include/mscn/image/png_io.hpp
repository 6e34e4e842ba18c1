#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "mscn/image/image.hpp"

namespace mscn {

/// Interleaved 8-bit RGB raster, the on-disk pixel layout.
struct Rgb8 {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // h*w*3
};

/// Decodes an 8-bit PNG to RGB. 16-bit files are rejected rather than
/// silently truncated.
inline Rgb8 read_png_rgb8(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("image not found: " + path.string());
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw DecodeError(detail::concat("cannot decode PNG ", path.string(), ": ", image.message));
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw DecodeError("unsupported PNG bit depth (16-bit) in " + path.string());
  }
  image.format = PNG_FORMAT_RGB;
  Rgb8 out{image.height, image.width, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError(detail::concat("corrupt PNG ", path.string(), ": ", msg));
  }
  return out;
}

inline void write_png_rgb8(const Rgb8& img, const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw IoError(detail::concat("cannot write PNG ", path.string(), ": ", image.message));
}

/// Values/255 into [0,1], channel-first.
inline ImageTensor to_image(const Rgb8& rgb) {
  ImageTensor img(rgb.height, rgb.width);
  for (std::size_t i = 0; i < img.plane(); ++i)
    for (std::size_t c = 0; c < 3; ++c)
      img.channel(c)[i] = static_cast<float>(rgb.pixels[i * 3 + c]) / 255.0f;
  return img;
}

/// Quantizes a raw [0,1] image; values outside are clamped.
inline Rgb8 to_rgb8(const ImageTensor& img) {
  Rgb8 out{img.height, img.width, std::vector<std::uint8_t>(img.plane() * 3)};
  for (std::size_t i = 0; i < img.plane(); ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::clamp(img.channel(c)[i], 0.0f, 1.0f);
      out.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  return out;
}

/// Affine [min,max] -> [0,255] over the whole image, for viewing high-passed
/// or masked views. A flat image maps to mid-gray.
inline Rgb8 to_rgb8_stretched(const ImageTensor& img) {
  const auto [lo_it, hi_it] = std::minmax_element(img.data.begin(), img.data.end());
  const float lo = *lo_it, hi = *hi_it;
  Rgb8 out{img.height, img.width, std::vector<std::uint8_t>(img.plane() * 3)};
  for (std::size_t i = 0; i < img.plane(); ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = img.channel(c)[i];
      const float t = hi > lo ? (v - lo) / (hi - lo) : 0.5f;
      out.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(t * 255.0f));
    }
  return out;
}

inline ImageTensor decode_image(const std::filesystem::path& path) {
  return to_image(read_png_rgb8(path));
}

inline void encode_image(const ImageTensor& img, const std::filesystem::path& path) {
  write_png_rgb8(to_rgb8(img), path);
}

}  // namespace mscn
