#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "mscn/core/rng.hpp"
#include "mscn/data/manifest.hpp"
#include "mscn/image/png_io.hpp"

namespace mscn {

/// Decoded images of one split, in manifest (path) order.
struct Dataset {
  std::vector<std::string> classes;
  std::vector<ImageTensor> images;
  std::vector<std::size_t> labels;

  std::size_t size() const { return images.size(); }
  std::size_t num_classes() const { return classes.size(); }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset d;
    d.classes = classes;
    for (auto i : idx) {
      d.images.push_back(images.at(i));
      d.labels.push_back(labels.at(i));
    }
    return d;
  }
};

/// Runs fn(i) for i in [0,n) on up to `workers` threads. The first exception
/// is rethrown after all threads join.
template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline Dataset load_split(const DatasetManifest& m, const std::string& split,
                          std::size_t workers = 1) {
  const auto entries = m.split(split);
  Dataset d;
  d.classes = m.classes;
  d.images.resize(entries.size());
  d.labels.resize(entries.size());
  parallel_for(entries.size(), workers, [&](std::size_t i) {
    d.images[i] = decode_image(m.root / entries[i].path);
    d.labels[i] = entries[i].label;
  });
  return d;
}

/// Sample order for an epoch; depends only on (n, seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_stream(seed, "shuffle", epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

/// Class-stratified subset: round(fraction * class count) per class, at least
/// one, chosen by seed. Returned indices are sorted.
inline std::vector<std::size_t> stratified_subset(const std::vector<std::size_t>& labels,
                                                  std::size_t num_classes, double fraction,
                                                  std::uint64_t seed) {
  require<ConfigError>(fraction > 0 && fraction <= 1, "label fraction must lie in (0,1], got ",
                       fraction);
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require<ConfigError>(labels[i] < num_classes, "label ", labels[i], " out of range");
    by_class[labels[i]].push_back(i);
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& idx = by_class[c];
    require<ConfigError>(!idx.empty(), "stratification failed: class ", c,
                         " has no samples in the training split");
    Rng rng = make_stream(seed, "stratify", c);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const auto take = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size()))));
    out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace mscn
