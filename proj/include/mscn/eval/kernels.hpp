#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <vector>

#include "mscn/image/png_io.hpp"
#include "mscn/models/network.hpp"

namespace mscn {

/// Variance over all 3*k*k weights of each stem kernel.
inline std::vector<double> kernel_variances(const Tensor<float>& kernels) {
  require<ConfigError>(kernels.rank() == 4, "expected [K,3,k,k] kernels");
  const std::size_t K = kernels.dim(0), per = kernels.numel() / K;
  std::vector<double> out(K);
  for (std::size_t i = 0; i < K; ++i) {
    const float* p = kernels.ptr() + i * per;
    double m = 0, v = 0;
    for (std::size_t j = 0; j < per; ++j) m += p[j];
    m /= static_cast<double>(per);
    for (std::size_t j = 0; j < per; ++j) v += (p[j] - m) * (p[j] - m);
    out[i] = v / static_cast<double>(per);
  }
  return out;
}

/// Kernels whose variance is below `fraction` of the median variance.
inline std::size_t count_near_zero_kernels(const std::vector<double>& variances,
                                           double fraction = 0.01) {
  if (variances.empty()) return 0;
  std::vector<double> s = variances;
  std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(s.size() / 2), s.end());
  double median = s[s.size() / 2];
  if (s.size() % 2 == 0) {
    const double lower = *std::max_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(s.size() / 2));
    median = (median + lower) / 2;
  }
  return static_cast<std::size_t>(std::count_if(
      variances.begin(), variances.end(), [&](double v) { return v < fraction * median; }));
}

struct KernelGridLayout {
  std::size_t cols = 0, rows = 0, kernel = 0;
  std::size_t width() const { return cols * (kernel + 1) + 1; }
  std::size_t height() const { return rows * (kernel + 1) + 1; }
};

inline KernelGridLayout kernel_grid_layout(std::size_t count, std::size_t kernel) {
  KernelGridLayout l;
  l.kernel = kernel;
  l.cols = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(double(count)))));
  l.rows = (count + l.cols - 1) / l.cols;
  return l;
}

/// Stem kernels tiled into a grid, each min-max normalized on its own, with
/// 1px white separators. A constant kernel renders mid-gray.
inline Rgb8 kernel_grid(const Tensor<float>& kernels) {
  require<ConfigError>(kernels.rank() == 4 && kernels.dim(1) == 3 && kernels.dim(2) == kernels.dim(3),
                       "expected [K,3,k,k] kernels, got ", shape_str(kernels.shape()));
  const std::size_t K = kernels.dim(0), k = kernels.dim(2), per = 3 * k * k;
  const auto l = kernel_grid_layout(K, k);
  Rgb8 img{l.height(), l.width(), std::vector<std::uint8_t>(l.height() * l.width() * 3, 255)};
  for (std::size_t i = 0; i < K; ++i) {
    const float* p = kernels.ptr() + i * per;
    const auto [lo, hi] = std::minmax_element(p, p + per);
    const double range = double(*hi) - double(*lo);
    const std::size_t ty = 1 + (i / l.cols) * (k + 1), tx = 1 + (i % l.cols) * (k + 1);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < k; ++y)
        for (std::size_t x = 0; x < k; ++x) {
          const double v = range > 0 ? (p[(c * k + y) * k + x] - *lo) / range : 0.5;
          img.pixels[((ty + y) * l.width() + tx + x) * 3 + c] =
              static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
  }
  return img;
}

/// Writes the grid PNG and a "kernel,variance" CSV next to it. Returns the
/// per-kernel variances.
inline std::vector<double> export_kernel_grid(const Network<float>& net,
                                              const std::filesystem::path& png,
                                              const std::filesystem::path& csv) {
  const auto& k = first_layer_kernels(net);
  write_png_rgb8(kernel_grid(k), png);
  const auto var = kernel_variances(k);
  std::ofstream out(csv);
  if (!out) throw IoError("cannot write " + csv.string());
  out << "kernel,variance\n" << std::setprecision(9);
  for (std::size_t i = 0; i < var.size(); ++i) out << i << ',' << var[i] << '\n';
  return var;
}

}  // namespace mscn
