#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>

namespace mscn {

inline constexpr std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b * 0xD6E8FEB86659FD93ull + 0x9E3779B97F4A7C15ull);
  return splitmix64(s);
}

/// FNV-1a, used for naming sub-streams and for config hashes.
inline constexpr std::uint64_t fnv1a(std::string_view bytes,
                                     std::uint64_t h = 0xCBF29CE484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

/// xoshiro256** with portable uniform/normal helpers. The std distributions are
/// implementation-defined, so every draw that feeds data or weights goes through
/// these methods to stay bit-reproducible.
class Rng {
 public:
  using result_type = std::uint64_t;
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t s = seed;
    for (auto& w : s_) w = splitmix64(s);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n), rejection sampled.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x;
    do {
      x = (*this)();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (one value per call).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  const State& state() const { return s_; }
  void set_state(const State& s) { s_ = s; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  State s_{};
};

/// Coordinates of one random stream: every augmentation or mask draw for a
/// given view comes from exactly one stream.
struct StreamId {
  std::uint64_t epoch = 0;
  std::uint64_t sample = 0;
  std::uint64_t branch = 0;
  std::uint64_t view = 0;

  friend bool operator==(const StreamId&, const StreamId&) = default;
};

inline Rng make_stream(std::uint64_t seed, const StreamId& id) {
  std::uint64_t h = mix64(seed, 0x5354524541ull);
  h = mix64(h, id.epoch);
  h = mix64(h, id.sample);
  h = mix64(h, id.branch);
  h = mix64(h, id.view);
  return Rng(h);
}

/// Named sub-stream for non-view randomness (init, shuffling, probe subsets).
inline Rng make_stream(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0) {
  return Rng(mix64(mix64(seed, fnv1a(purpose)), index));
}

}  // namespace mscn
