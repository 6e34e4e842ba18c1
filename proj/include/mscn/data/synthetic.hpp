#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mscn/core/rng.hpp"
#include "mscn/data/dataset.hpp"
#include "mscn/data/manifest.hpp"
#include "mscn/image/png_io.hpp"

namespace mscn {

inline const std::array<const char*, 4> kShapeNames{"circle", "square", "triangle", "cross"};

struct SyntheticShapesSpec {
  std::size_t num_classes = 4;
  std::size_t samples_per_class = 625;
  std::size_t image_size = 64;
  // Shape area as a fraction of the image; drawn independently of the class so
  // that pixel counts carry no label information.
  double area_min = 0.10;
  double area_max = 0.25;
  // Max center offset, fraction of image size.
  double position_jitter = 0.12;
  double texture_amplitude = 0.03;
  double pixel_noise = 0.01;
  double min_color_distance = 0.35;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const {
    require<ConfigError>(num_classes >= 2 && num_classes <= kShapeNames.size(),
                         "synthetic num_classes must lie in [2, 4], got ", num_classes);
    require<ConfigError>(samples_per_class >= 1, "samples_per_class must be >= 1");
    require<ConfigError>(image_size >= 8, "synthetic image_size must be >= 8");
    require<ConfigError>(area_min > 0 && area_min <= area_max && area_max < 0.5,
                         "shape area range must satisfy 0 < min <= max < 0.5");
    require<ConfigError>(position_jitter >= 0 && position_jitter < 0.5,
                         "position_jitter must lie in [0,0.5)");
    require<ConfigError>(texture_amplitude >= 0 && pixel_noise >= 0, "texture must be >= 0");
    require<ConfigError>(min_color_distance >= 0 && min_color_distance < 1.5,
                         "min_color_distance must lie in [0,1.5)");
    require<ConfigError>(train_fraction > 0 && train_fraction < 1,
                         "train_fraction must lie in (0,1)");
  }
};

namespace detail {

// Inside test in the shape's own frame, for a shape of unit area scaled by `s`
// (s = sqrt(area in px^2)).
inline bool inside_shape(std::size_t cls, double u, double v, double s) {
  switch (cls) {
    case 0: {
      const double r = s / std::sqrt(std::numbers::pi);
      return u * u + v * v <= r * r;
    }
    case 1: {
      const double h = s / 2;
      return std::abs(u) <= h && std::abs(v) <= h;
    }
    case 2: {
      // equilateral, circumradius R, inradius R/2, apex up
      const double R = s * std::sqrt(4.0 / (3.0 * std::sqrt(3.0)));
      const double in = R / 2;
      const double c30 = std::sqrt(3.0) / 2;
      return -v <= in && (c30 * u + 0.5 * v) <= in && (-c30 * u + 0.5 * v) <= in;
    }
    default: {
      // plus sign, arm half-width L/3: area 20 L^2 / 9
      const double L = s * std::sqrt(9.0 / 20.0);
      const double w = L / 3;
      const double au = std::abs(u), av = std::abs(v);
      return (au <= L && av <= w) || (au <= w && av <= L);
    }
  }
}

inline std::array<double, 3> random_color(Rng& rng) {
  return {rng.uniform(), rng.uniform(), rng.uniform()};
}

inline double color_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                   (a[2] - b[2]) * (a[2] - b[2]));
}

}  // namespace detail

/// One image: textured background, one rotated shape of class `cls` with
/// random color, size and position. 4x4 supersampled coverage.
inline ImageTensor render_shape(const SyntheticShapesSpec& spec, std::size_t cls, Rng& rng) {
  const std::size_t S = spec.image_size;
  const auto fs = static_cast<double>(S);
  const auto bg = detail::random_color(rng);
  auto fg = detail::random_color(rng);
  for (int tries = 0; tries < 64 && detail::color_distance(fg, bg) < spec.min_color_distance; ++tries)
    fg = detail::random_color(rng);
  const double area = rng.uniform(spec.area_min, spec.area_max) * fs * fs;
  const double s = std::sqrt(area);
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double cx = fs / 2 + rng.uniform(-1.0, 1.0) * spec.position_jitter * fs;
  const double cy = fs / 2 + rng.uniform(-1.0, 1.0) * spec.position_jitter * fs;
  // background stripes
  const double freq = rng.uniform(1.0, 6.0) / fs;
  const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dir = rng.uniform(0.0, std::numbers::pi);
  const double amp = rng.uniform(0.0, spec.texture_amplitude);
  const std::array<double, 3> tint{rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0),
                                   rng.uniform(0.5, 1.0)};
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cd = std::cos(dir), sd = std::sin(dir);

  ImageTensor img(S, S);
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) {
          const double dx = static_cast<double>(x) + (sx + 0.5) / 4 - cx;
          const double dy = static_cast<double>(y) + (sy + 0.5) / 4 - cy;
          hits += detail::inside_shape(cls, ct * dx + st * dy, -st * dx + ct * dy, s);
        }
      const double cover = hits / 16.0;
      const double stripe =
          amp * std::sin(2 * std::numbers::pi * freq * (static_cast<double>(x) * cd +
                                                        static_cast<double>(y) * sd) + phi);
      for (std::size_t c = 0; c < 3; ++c) {
        const double back = bg[c] + stripe * tint[c];
        const double v = cover * fg[c] + (1 - cover) * back + rng.normal(0.0, spec.pixel_noise);
        img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return img;
}

inline std::string synthetic_image_path(std::size_t cls, std::size_t j) {
  std::ostringstream os;
  os << "images/" << kShapeNames[cls] << "/" << kShapeNames[cls] << "_" << std::setw(4)
     << std::setfill('0') << j << ".png";
  return os.str();
}

/// Writes PNGs under `root/images/<class>/` and `root/manifest.json`. Within
/// each class the first train_fraction of samples are "train", the rest "val".
inline DatasetManifest generate_synthetic_shapes(const SyntheticShapesSpec& spec,
                                                 const std::filesystem::path& root,
                                                 std::size_t workers = 1) {
  spec.validate();
  DatasetManifest m;
  m.root = root;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    m.classes.emplace_back(kShapeNames[c]);
    std::filesystem::create_directories(root / "images" / kShapeNames[c]);
  }
  const std::size_t n_train = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(spec.samples_per_class)));
  const std::size_t total = spec.num_classes * spec.samples_per_class;
  m.entries.resize(total);
  parallel_for(total, workers, [&](std::size_t i) {
    const std::size_t c = i / spec.samples_per_class, j = i % spec.samples_per_class;
    Rng rng = make_stream(spec.seed, "synthetic-shape", i);
    const std::string rel = synthetic_image_path(c, j);
    encode_image(render_shape(spec, c, rng), root / rel);
    m.entries[i] = {rel, c, j < n_train ? "train" : "val"};
  });
  std::sort(m.entries.begin(), m.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
  save_manifest(m, root / "manifest.json");
  return m;
}

/// FNV-1a over the manifest text and every listed file, in path order.
inline std::uint64_t dataset_checksum(const DatasetManifest& m) {
  std::uint64_t h = fnv1a(manifest_to_string(m));
  for (const auto& e : m.entries) {
    std::ifstream in(m.root / e.path, std::ios::binary);
    if (!in) throw IoError("missing dataset file " + (m.root / e.path).string());
    std::ostringstream ss;
    ss << in.rdbuf();
    h = fnv1a(e.path, h);
    h = fnv1a(ss.str(), h);
  }
  return h;
}

inline double mean_intensity(const ImageTensor& img) {
  double s = 0;
  for (float v : img.data) s += v;
  return s / static_cast<double>(img.size());
}

/// Non-learned baseline: bins the mean intensity into train quantiles and
/// predicts each bin's majority class. Returns val accuracy.
inline double mean_intensity_baseline(const Dataset& train, const Dataset& val,
                                      std::size_t bins = 10) {
  require<ConfigError>(train.size() >= bins && val.size() > 0, "baseline needs data");
  std::vector<double> f(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) f[i] = mean_intensity(train.images[i]);
  std::vector<double> sorted = f;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> edges;
  for (std::size_t b = 1; b < bins; ++b) edges.push_back(sorted[b * sorted.size() / bins]);
  auto bin_of = [&](double v) {
    return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
  };
  std::vector<std::vector<std::size_t>> counts(bins, std::vector<std::size_t>(train.num_classes()));
  for (std::size_t i = 0; i < train.size(); ++i) ++counts[bin_of(f[i])][train.labels[i]];
  std::size_t correct = 0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    const auto& cnt = counts[bin_of(mean_intensity(val.images[i]))];
    const auto pred = static_cast<std::size_t>(std::max_element(cnt.begin(), cnt.end()) - cnt.begin());
    correct += pred == val.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(val.size());
}

}  // namespace mscn
