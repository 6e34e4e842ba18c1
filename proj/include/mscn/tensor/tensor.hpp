#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <type_traits>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mscn/core/error.hpp"

namespace mscn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor. Plain value type: copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require<ConfigError>(shape_numel(shape_) == data_.size(), "tensor data size ", data_.size(),
                         " does not match shape ", shape_str(shape_));
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T item() const {
    require(data_.size() == 1, "item() on tensor of shape ", shape_str(shape_));
    return data_[0];
  }

  void reshape(Shape s) {
    require<ConfigError>(shape_numel(s) == data_.size(), "cannot reshape ", shape_str(shape_),
                         " to ", shape_str(s));
    shape_ = std::move(s);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    if constexpr (std::is_same_v<T, float> || std::is_same_v<T, double>) {
      // exponent bits all set <=> Inf or NaN; integer form vectorizes
      using U = std::conditional_t<std::is_same_v<T, float>, std::uint32_t, std::uint64_t>;
      constexpr U exp_mask = std::is_same_v<T, float> ? U(0x7F800000u) : U(0x7FF0000000000000ull);
      bool bad = false;
      for (T v : data_) bad |= (std::bit_cast<U>(v) & exp_mask) == exp_mask;
      return !bad;
    } else {
      return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }
  }

  Tensor& operator+=(const Tensor& o) {
    require(o.shape_ == shape_, "shape mismatch in +=: ", shape_str(shape_), " vs ",
            shape_str(o.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
double l2_norm(std::span<const T> v) {
  double s = 0.0;
  for (T x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

}  // namespace mscn
