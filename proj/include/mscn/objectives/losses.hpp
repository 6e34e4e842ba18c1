#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "mscn/tensor/ops.hpp"

namespace mscn {

enum class Objective { simclr, byol };

struct LossConfig {
  Objective objective = Objective::simclr;
  double temperature = 0.2;
  double ema_initial = 0.996;
  double ema_final = 1.0;

  void validate() const {
    require<ConfigError>(temperature > 0, "loss.temperature must be > 0, got ", temperature);
    require<ConfigError>(ema_initial <= ema_final && ema_final <= 1.0,
                         "loss EMA momentum must satisfy ema_initial <= ema_final <= 1, got ",
                         ema_initial, " / ", ema_final);
  }
};

/// NT-Xent over N positive pairs (rows i of `za` and `zb`), using all 2N-2
/// other views of the batch as negatives. Inputs must be L2-normalized.
/// Averaged over the 2N anchors; log-sum-exp is max-shifted.
template <typename T>
Var info_nce_loss(Tape<T>& tape, Var za, Var zb, double temperature) {
  const Shape& as = tape.value(za).shape();
  require<ConfigError>(as.size() == 2 && as == tape.value(zb).shape(),
                       "info_nce expects two [N,D] batches, got ", shape_str(as), " and ",
                       shape_str(tape.value(zb).shape()));
  const std::size_t N = as[0], D = as[1], M = 2 * N;
  require(N >= 2, "info_nce needs at least 2 pairs (no negatives otherwise), got ", N);
  require<ConfigError>(temperature > 0, "temperature must be positive");

  // Z = [za; zb], S = Z Z^T / tau, computed in double.
  std::vector<double> Z(M * D);
  std::copy(tape.value(za).data().begin(), tape.value(za).data().end(), Z.begin());
  std::copy(tape.value(zb).data().begin(), tape.value(zb).data().end(), Z.begin() + N * D);
  Eigen::Map<const detail::RowMat<double>> Zm(Z.data(), M, D);
  detail::RowMat<double> S = (Zm * Zm.transpose()) / temperature;

  // P holds softmax over k != i for each anchor row; the diagonal stays 0.
  detail::RowMat<double> P = detail::RowMat<double>::Zero(M, M);
  double total = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    const std::size_t pos = (i + N) % M;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < M; ++k)
      if (k != i) mx = std::max(mx, S(i, k));
    double se = 0.0;
    for (std::size_t k = 0; k < M; ++k)
      if (k != i) se += std::exp(S(i, k) - mx);
    const double lse = mx + std::log(se);
    for (std::size_t k = 0; k < M; ++k)
      if (k != i) P(i, k) = std::exp(S(i, k) - lse);
    total += lse - S(i, pos);
  }
  const double loss = total / static_cast<double>(M);

  return tape.record(
      "info_nce", Tensor<T>({1}, std::vector<T>{static_cast<T>(loss)}), {za, zb},
      [za, zb, N, D, M, temperature, P = std::move(P), Z = std::move(Z)](Tape<T>& t,
                                                                         const Tensor<T>& gy) {
        // dL/dS = (P - onehot(pos)) / M ; dZ = (G + G^T) Z / tau
        detail::RowMat<double> G = P;
        for (std::size_t i = 0; i < M; ++i) G(i, (i + N) % M) -= 1.0;
        G *= static_cast<double>(gy[0]) / static_cast<double>(M);
        Eigen::Map<const detail::RowMat<double>> Zm(Z.data(), M, D);
        detail::RowMat<double> dZ = ((G + G.transpose()) * Zm) / temperature;
        if (t.requires_grad(za)) {
          T* g = t.grad_buffer(za).ptr();
          for (std::size_t i = 0; i < N * D; ++i) g[i] += static_cast<T>(dZ.data()[i]);
        }
        if (t.requires_grad(zb)) {
          T* g = t.grad_buffer(zb).ptr();
          for (std::size_t i = 0; i < N * D; ++i) g[i] += static_cast<T>(dZ.data()[N * D + i]);
        }
      });
}

namespace detail {

template <typename T>
void require_unit_rows(const Tensor<T>& v, const char* what) {
  const std::size_t N = v.dim(0), D = v.dim(1);
  const double tol = std::is_same_v<T, float> ? 1e-4 : 1e-9;
  for (std::size_t n = 0; n < N; ++n) {
    const double norm = l2_norm(std::span<const T>(v.ptr() + n * D, D));
    require(std::abs(norm - 1.0) <= tol, what, " row ", n, " is not L2-normalized (norm ", norm,
            ")");
  }
}

}  // namespace detail

/// BYOL regression term 2 - 2<p, z'> averaged over the batch. The target is
/// detached: no gradient reaches it regardless of how it was produced.
template <typename T>
Var byol_loss(Tape<T>& tape, Var prediction, Var target) {
  const Shape& ps = tape.value(prediction).shape();
  require<ConfigError>(ps.size() == 2 && ps == tape.value(target).shape(),
                       "byol_loss expects matching [N,D] batches, got ", shape_str(ps), " and ",
                       shape_str(tape.value(target).shape()));
  detail::require_unit_rows(tape.value(prediction), "byol prediction");
  detail::require_unit_rows(tape.value(target), "byol target");
  const std::size_t N = ps[0], D = ps[1];
  const Tensor<T>& p = tape.value(prediction);
  Tensor<T> z = tape.value(target);
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    double dot = 0.0;
    for (std::size_t d = 0; d < D; ++d) dot += static_cast<double>(p[n * D + d]) * z[n * D + d];
    total += 2.0 - 2.0 * dot;
  }
  return tape.record("byol_loss",
                     Tensor<T>({1}, std::vector<T>{static_cast<T>(total / static_cast<double>(N))}),
                     {prediction},
                     [prediction, N, z = std::move(z)](Tape<T>& t, const Tensor<T>& gy) {
                       T* g = t.grad_buffer(prediction).ptr();
                       const T k = T(-2) * gy[0] / static_cast<T>(N);
                       for (std::size_t i = 0; i < z.numel(); ++i) g[i] += k * z[i];
                     });
}

/// Symmetrized BYOL: mean of the two branch-swapped regression terms, in [0, 4].
template <typename T>
Var byol_symmetric_loss(Tape<T>& tape, Var pred_a, Var target_b, Var pred_b, Var target_a) {
  Var l1 = byol_loss(tape, pred_a, target_b);
  Var l2 = byol_loss(tape, pred_b, target_a);
  return scale(tape, add(tape, l1, l2), T(0.5));
}

/// EMA momentum on the cosine schedule from `initial` (t=0) to `final_` (t=1).
inline double ema_momentum(double t, double initial = 0.996, double final_ = 1.0) {
  require(t >= 0.0 && t <= 1.0, "EMA schedule position must lie in [0,1], got ", t);
  const double w = (1.0 - std::cos(std::numbers::pi * t)) / 2.0;
  return std::lerp(initial, final_, w);
}

/// Target network parameters tracking the online ones.
template <typename T>
struct EmaState {
  ParameterSet<T> target;
  double tau = 0.996;
  std::uint64_t step = 0;
};

/// target <- tau * target + (1 - tau) * online, for every target parameter.
template <typename T>
void ema_blend(ParameterSet<T>& target, const ParameterSet<T>& online, double tau) {
  for (auto& tp : target) {
    const auto& op = online.at(tp.name);
    require<ConfigError>(op.value.shape() == tp.value.shape(), "EMA shape mismatch for ",
                         tp.name);
    const T a = static_cast<T>(tau), b = static_cast<T>(1.0 - tau);
    for (std::size_t i = 0; i < tp.value.numel(); ++i)
      tp.value[i] = a * tp.value[i] + b * op.value[i];
  }
}

template <typename T>
void ema_update(EmaState<T>& state, const ParameterSet<T>& online, double tau) {
  ema_blend(state.target, online, tau);
  state.tau = tau;
  ++state.step;
}

/// ema_update with tau taken from the cosine schedule at position t in [0,1].
template <typename T>
void ema_update_scheduled(EmaState<T>& state, const ParameterSet<T>& online, double t,
                          const LossConfig& cfg) {
  ema_update(state, online, ema_momentum(t, cfg.ema_initial, cfg.ema_final));
}

/// Mean over dimensions of the per-dimension standard deviation across rows.
/// A collapsed encoder yields 0.
template <typename T>
double embedding_std(const Tensor<T>& z) {
  require<ConfigError>(z.rank() == 2 && z.dim(0) >= 2, "embedding_std expects [N>=2,D]");
  const std::size_t N = z.dim(0), D = z.dim(1);
  double acc = 0.0;
  for (std::size_t d = 0; d < D; ++d) {
    double m = 0.0;
    for (std::size_t n = 0; n < N; ++n) m += z[n * D + d];
    m /= static_cast<double>(N);
    double v = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double e = z[n * D + d] - m;
      v += e * e;
    }
    acc += std::sqrt(v / static_cast<double>(N));
  }
  return acc / static_cast<double>(D);
}

}  // namespace mscn
