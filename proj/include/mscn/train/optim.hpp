#pragma once

#include <cmath>
#include <map>
#include <string>

#include "mscn/tensor/ops.hpp"

namespace mscn {

enum class OptimizerKind { lars, sgd_momentum };

inline const char* to_string(OptimizerKind k) {
  return k == OptimizerKind::lars ? "lars" : "sgd_momentum";
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::lars;
  double momentum = 0.9;
  double weight_decay = 1e-6;
  double trust_coefficient = 0.001;
  double eps = 1e-9;
  // false turns LARS into plain SGD-momentum with weight decay.
  bool adaptation = true;

  void validate() const {
    require<ConfigError>(momentum >= 0 && momentum < 1, "optimizer.momentum must lie in [0,1)");
    require<ConfigError>(weight_decay >= 0, "optimizer.weight_decay must be >= 0");
    require<ConfigError>(trust_coefficient > 0, "optimizer.trust_coefficient must be > 0");
    require<ConfigError>(eps > 0, "optimizer.eps must be > 0");
  }
};

struct StepReport {
  bool ok = true;
  std::string non_finite_param;
};

/// LARS / SGD-momentum. For every parameter
///   v <- m v + r (g + wd w),  w <- w - lr v
/// where r is the LARS trust ratio eta |w| / (|g| + wd |w| + eps) and 1 for
/// SGD. Exempt parameters (biases, BN affine) take v <- m v + g.
template <typename T>
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const OptimizerConfig& config() const { return cfg_; }
  std::map<std::string, Tensor<T>>& buffers() { return buffers_; }
  const std::map<std::string, Tensor<T>>& buffers() const { return buffers_; }

  static double norm(const Tensor<T>& t) {
    const T* p = t.ptr();
    return std::sqrt(detail::lane_sum<T>(t.numel(), [p](std::size_t i) { return p[i] * p[i]; }));
  }

  /// Trust ratio for one parameter; 0 when |w| = 0 so the parameter stays put.
  double trust_ratio(const Parameter<T>& p) const {
    const double wn = norm(p.value);
    if (wn == 0.0) return 0.0;
    const double gn = norm(p.grad);
    return cfg_.trust_coefficient * wn / (gn + cfg_.weight_decay * wn + cfg_.eps);
  }

  /// Checks every gradient first; a non-finite one aborts the whole step.
  StepReport step(ParameterSet<T>& params, double lr) {
    for (const auto& p : params)
      if (!p.grad.all_finite()) return {false, p.name};
    const bool lars = cfg_.kind == OptimizerKind::lars && cfg_.adaptation;
    const T m = static_cast<T>(cfg_.momentum);
    const T wd = static_cast<T>(cfg_.weight_decay);
    const T step = static_cast<T>(lr);
    for (auto& p : params) {
      auto it = buffers_.find(p.name);
      if (it == buffers_.end()) it = buffers_.emplace(p.name, Tensor<T>(p.value.shape())).first;
      Tensor<T>& v = it->second;
      require(v.shape() == p.value.shape(), "momentum buffer shape mismatch for ", p.name);
      const std::size_t n = p.value.numel();
      T* w = p.value.ptr();
      const T* g = p.grad.ptr();
      T* vb = v.ptr();
      if (p.decay_exempt) {
        for (std::size_t i = 0; i < n; ++i) vb[i] = m * vb[i] + g[i];
      } else if (lars) {
        const auto r = static_cast<T>(trust_ratio(p));
        for (std::size_t i = 0; i < n; ++i) vb[i] = m * vb[i] + r * (g[i] + wd * w[i]);
      } else {
        for (std::size_t i = 0; i < n; ++i) vb[i] = m * vb[i] + (g[i] + wd * w[i]);
      }
      for (std::size_t i = 0; i < n; ++i) w[i] -= step * vb[i];
    }
    return {};
  }

 private:
  OptimizerConfig cfg_;
  std::map<std::string, Tensor<T>> buffers_;
};

}  // namespace mscn
