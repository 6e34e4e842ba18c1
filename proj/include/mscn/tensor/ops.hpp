#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <type_traits>
#include <vector>

#include "mscn/tensor/tape.hpp"

namespace mscn {

enum class Mode { train, eval };

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::size_t channels, height, width, kh, kw, stride, padding, out_h, out_w;
  std::size_t patch() const { return channels * kh * kw; }
  std::size_t positions() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = img + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                          static_cast<std::ptrdiff_t>(g.padding);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                            static_cast<std::ptrdiff_t>(g.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                          ? T(0)
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* img) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = img + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                          static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.width;
          const T* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width))
              dst[static_cast<std::size_t>(ix)] += src[ox];
          }
        }
      }
    }
  }
}

// Sum of f(i) over [0, n) with 16 fixed lanes. The order depends only on n,
// never on pointer alignment, so results are bit-reproducible; the inner loop
// still vectorizes.
template <typename T, typename F>
double lane_sum(std::size_t n, F&& f) {
  constexpr std::size_t L = 16;
  T acc[L] = {};
  std::size_t i = 0;
  for (; i + L <= n; i += L)
    for (std::size_t j = 0; j < L; ++j) acc[j] += f(i + j);
  double s = 0.0;
  for (; i < n; ++i) s += static_cast<double>(f(i));
  for (std::size_t j = 0; j < L; ++j) s += static_cast<double>(acc[j]);
  return s;
}

inline std::size_t trailing_numel(const Shape& s, std::size_t from) {
  std::size_t n = 1;
  for (std::size_t i = from; i < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace detail

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// 2-D cross-correlation, NCHW input, KCHW weight, lowered through im2col + GEMM.
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, std::optional<Var> b, Conv2dOptions opt = {}) {
  const Shape& xs = tape.value(x).shape();
  const Shape& ws = tape.value(w).shape();
  require<ConfigError>(xs.size() == 4, "conv2d input must be NCHW, got ", shape_str(xs));
  require<ConfigError>(ws.size() == 4, "conv2d weight must be KCHW, got ", shape_str(ws));
  require<ConfigError>(xs[1] == ws[1], "conv2d channel mismatch: input ", shape_str(xs),
                       " weight ", shape_str(ws));
  require<ConfigError>(opt.stride >= 1, "conv2d stride must be >= 1");
  require<ConfigError>(ws[2] <= xs[2] + 2 * opt.padding && ws[3] <= xs[3] + 2 * opt.padding,
                       "conv2d kernel ", ws[2], "x", ws[3], " larger than padded input ",
                       xs[2] + 2 * opt.padding, "x", xs[3] + 2 * opt.padding);
  const std::size_t N = xs[0], K = ws[0];
  if (b) {
    const Shape& bs = tape.value(*b).shape();
    require<ConfigError>(bs.size() == 1 && bs[0] == K, "conv2d bias shape ", shape_str(bs),
                         " does not match ", K, " output channels");
  }
  detail::ConvGeometry g{xs[1],
                         xs[2],
                         xs[3],
                         ws[2],
                         ws[3],
                         opt.stride,
                         opt.padding,
                         (xs[2] + 2 * opt.padding - ws[2]) / opt.stride + 1,
                         (xs[3] + 2 * opt.padding - ws[3]) / opt.stride + 1};
  const std::size_t P = g.positions(), Q = g.patch();

  Tensor<T> out({N, K, g.out_h, g.out_w});
  std::vector<T> col(Q * P);
  const T* xd = tape.value(x).ptr();
  detail::ConstMatMap<T> W(tape.value(w).ptr(), K, Q);
  for (std::size_t n = 0; n < N; ++n) {
    detail::im2col(xd + n * g.channels * g.height * g.width, g, col.data());
    detail::MatMap<T> O(out.ptr() + n * K * P, K, P);
    O.noalias() = W * detail::ConstMatMap<T>(col.data(), Q, P);
    if (b) {
      const T* bd = tape.value(*b).ptr();
      for (std::size_t k = 0; k < K; ++k) O.row(k).array() += bd[k];
    }
  }

  return tape.record(
      "conv2d", std::move(out), b ? std::vector<Var>{x, w, *b} : std::vector<Var>{x, w},
      [x, w, b, g, N, K](Tape<T>& t, const Tensor<T>& gy) {
        const std::size_t P = g.positions(), Q = g.patch();
        const std::size_t img = g.channels * g.height * g.width;
        std::vector<T> col(Q * P);
        detail::ConstMatMap<T> W(t.value(w).ptr(), K, Q);
        const bool need_w = t.requires_grad(w);
        const bool need_x = t.requires_grad(x);
        T* gw = need_w ? t.grad_buffer(w).ptr() : nullptr;
        T* gx = need_x ? t.grad_buffer(x).ptr() : nullptr;
        for (std::size_t n = 0; n < N; ++n) {
          detail::ConstMatMap<T> G(gy.ptr() + n * K * P, K, P);
          if (need_w) {
            detail::im2col(t.value(x).ptr() + n * img, g, col.data());
            detail::MatMap<T>(gw, K, Q).noalias() +=
                G * detail::ConstMatMap<T>(col.data(), Q, P).transpose();
          }
          if (need_x) {
            detail::MatMap<T>(col.data(), Q, P).noalias() = W.transpose() * G;
            detail::col2im_add(col.data(), g, gx + n * img);
          }
        }
        if (b && t.requires_grad(*b)) {
          T* gb = t.grad_buffer(*b).ptr();
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t k = 0; k < K; ++k) {
              const T* row = gy.ptr() + (n * K + k) * P;
              T s = 0;
              for (std::size_t p = 0; p < P; ++p) s += row[p];
              gb[k] += s;
            }
        }
      });
}

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean({channels}, T(0)), running_var({channels}, T(1)) {}
};

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Per-channel normalization over every axis except dim 1. Input is [N,C] or [N,C,...].
template <typename T>
Var batchnorm(Tape<T>& tape, Var x, Var gamma, Var beta,
              std::type_identity_t<BatchNormState<T>>* stats, Mode mode,
              BatchNormOptions opt = {}) {
  const Shape& xs = tape.value(x).shape();
  require<ConfigError>(xs.size() >= 2, "batchnorm input needs a channel axis, got ",
                       shape_str(xs));
  const std::size_t N = xs[0], C = xs[1], S = detail::trailing_numel(xs, 2);
  require<ConfigError>(tape.value(gamma).numel() == C && tape.value(beta).numel() == C,
                       "batchnorm affine size does not match ", C, " channels");
  const std::size_t M = N * S;
  const T* xd = tape.value(x).ptr();
  const T* gd = tape.value(gamma).ptr();
  const T* bd = tape.value(beta).ptr();

  auto plane = [S](const T* p) { return Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(p, S); };
  std::vector<T> mean(C), invstd(C);
  if (mode == Mode::train) {
    if (M < 2)
      throw DegenerateBatchError(
          detail::concat("batchnorm in train mode needs N*H*W >= 2, got ", M));
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = xd + (n * C + c) * S;
        s += detail::lane_sum<T>(S, [p](std::size_t i) { return p[i]; });
      }
      const double mu = s / static_cast<double>(M);
      double v = 0.0;
      const auto m = static_cast<T>(mu);
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = xd + (n * C + c) * S;
        v += detail::lane_sum<T>(S, [p, m](std::size_t i) { return (p[i] - m) * (p[i] - m); });
      }
      v /= static_cast<double>(M);
      mean[c] = static_cast<T>(mu);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(v + opt.eps));
      if (stats) {
        const double m = opt.momentum;
        const double unbiased = v * static_cast<double>(M) / static_cast<double>(M - 1);
        stats->running_mean[c] = static_cast<T>((1.0 - m) * stats->running_mean[c] + m * mu);
        stats->running_var[c] = static_cast<T>((1.0 - m) * stats->running_var[c] + m * unbiased);
      }
    }
  } else {
    require(stats != nullptr, "batchnorm eval mode needs running statistics");
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = stats->running_mean[c];
      invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats->running_var[c]) + opt.eps));
    }
  }

  Tensor<T> out(xs);
  T* od = out.ptr();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const T scale = gd[c] * invstd[c];
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(od + (n * C + c) * S, S) =
          (plane(xd + (n * C + c) * S) - mean[c]) * scale + bd[c];
    }

  return tape.record(
      "batchnorm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, mode, N, C, S, mean = std::move(mean), invstd = std::move(invstd)](
          Tape<T>& t, const Tensor<T>& gy) {
        using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
        const T* xd = t.value(x).ptr();
        const T* gd = t.value(gamma).ptr();
        const T* dy = gy.ptr();
        const double M = static_cast<double>(N * S);
        T* dg = t.requires_grad(gamma) ? t.grad_buffer(gamma).ptr() : nullptr;
        T* db = t.requires_grad(beta) ? t.grad_buffer(beta).ptr() : nullptr;
        T* dx = t.requires_grad(x) ? t.grad_buffer(x).ptr() : nullptr;
        for (std::size_t c = 0; c < C; ++c) {
          double sum_dy = 0, sum_dy_xc = 0;
          const T mc = mean[c];
          for (std::size_t n = 0; n < N; ++n) {
            const T* g = dy + (n * C + c) * S;
            const T* xv = xd + (n * C + c) * S;
            sum_dy += detail::lane_sum<T>(S, [g](std::size_t i) { return g[i]; });
            sum_dy_xc += detail::lane_sum<T>(S, [g, xv, mc](std::size_t i) { return g[i] * (xv[i] - mc); });
          }
          const double sum_dy_xhat = sum_dy_xc * invstd[c];
          if (dg) dg[c] += static_cast<T>(sum_dy_xhat);
          if (db) db[c] += static_cast<T>(sum_dy);
          if (!dx) continue;
          const T k = gd[c] * invstd[c];
          // train: dx = k * (dy - mean(dy) - xhat * mean(dy * xhat))
          const auto a = static_cast<T>(sum_dy / M);
          const auto b = static_cast<T>(sum_dy_xhat / M * invstd[c]);
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * S;
            Eigen::Map<const Arr> g(dy + off, S), xv(xd + off, S);
            Eigen::Map<Arr> out(dx + off, S);
            if (mode == Mode::train)
              out += k * (g - a - (xv - mean[c]) * b);
            else
              out += k * g;
          }
        }
      });
}

/// y = x W^T + b with x [N,in], W [out,in].
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, std::optional<Var> b) {
  const Shape& xs = tape.value(x).shape();
  const Shape& ws = tape.value(w).shape();
  require<ConfigError>(xs.size() == 2 && ws.size() == 2 && xs[1] == ws[1],
                       "linear shape mismatch: input ", shape_str(xs), " weight ", shape_str(ws));
  const std::size_t N = xs[0], I = xs[1], O = ws[0];
  if (b)
    require<ConfigError>(tape.value(*b).numel() == O, "linear bias shape ",
                         shape_str(tape.value(*b).shape()), " does not match ", O, " outputs");
  Tensor<T> out({N, O});
  detail::MatMap<T> Y(out.ptr(), N, O);
  Y.noalias() = detail::ConstMatMap<T>(tape.value(x).ptr(), N, I) *
                detail::ConstMatMap<T>(tape.value(w).ptr(), O, I).transpose();
  if (b) {
    const T* bd = tape.value(*b).ptr();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < O; ++o) out[n * O + o] += bd[o];
  }
  return tape.record(
      "linear", std::move(out), b ? std::vector<Var>{x, w, *b} : std::vector<Var>{x, w},
      [x, w, b, N, I, O](Tape<T>& t, const Tensor<T>& gy) {
        detail::ConstMatMap<T> G(gy.ptr(), N, O);
        if (t.requires_grad(x))
          detail::MatMap<T>(t.grad_buffer(x).ptr(), N, I).noalias() +=
              G * detail::ConstMatMap<T>(t.value(w).ptr(), O, I);
        if (t.requires_grad(w))
          detail::MatMap<T>(t.grad_buffer(w).ptr(), O, I).noalias() +=
              G.transpose() * detail::ConstMatMap<T>(t.value(x).ptr(), N, I);
        if (b && t.requires_grad(*b)) {
          T* gb = t.grad_buffer(*b).ptr();
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t o = 0; o < O; ++o) gb[o] += gy[n * O + o];
        }
      });
}

/// max(x, 0); the subgradient at exactly 0 is 0.
template <typename T>
Var relu(Tape<T>& tape, Var x) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const Tensor<T>& in = tape.value(x);
  Tensor<T> out(in.shape());
  Eigen::Map<Arr>(out.ptr(), out.numel()) = Eigen::Map<const Arr>(in.ptr(), in.numel()).max(T(0));
  return tape.record("relu", std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& gy) {
    const auto n = static_cast<Eigen::Index>(gy.numel());
    Eigen::Map<const Arr> xv(t.value(x).ptr(), n), g(gy.ptr(), n);
    Eigen::Map<Arr> gx(t.grad_buffer(x).ptr(), n);
    gx += (xv > T(0)).select(g, T(0));
  });
}

template <typename T>
Var max_pool2d(Tape<T>& tape, Var x, std::size_t kernel, std::size_t stride) {
  const Shape& xs = tape.value(x).shape();
  require<ConfigError>(xs.size() == 4, "max_pool2d input must be NCHW, got ", shape_str(xs));
  require<ConfigError>(kernel >= 1 && stride >= 1 && kernel <= xs[2] && kernel <= xs[3],
                       "max_pool2d window ", kernel, " does not fit input ", shape_str(xs));
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const std::size_t Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  Tensor<T> out({N, C, Ho, Wo});
  std::vector<std::uint32_t> argmax(out.numel());
  const T* xd = tape.value(x).ptr();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xd + nc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = (oy * stride) * W + ox * stride;
        for (std::size_t i = 0; i < kernel; ++i)
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::size_t idx = (oy * stride + i) * W + ox * stride + j;
            if (plane[idx] > plane[best]) best = idx;
          }
        const std::size_t o = (nc * Ho + oy) * Wo + ox;
        out[o] = plane[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
  }
  return tape.record("max_pool2d", std::move(out), {x},
                     [x, H, W, Ho, Wo, argmax = std::move(argmax)](Tape<T>& t,
                                                                    const Tensor<T>& gy) {
                       T* gx = t.grad_buffer(x).ptr();
                       for (std::size_t o = 0; o < gy.numel(); ++o) {
                         const std::size_t nc = o / (Ho * Wo);
                         gx[nc * H * W + argmax[o]] += gy[o];
                       }
                     });
}

/// [N,C,H,W] -> [N,C]
template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x) {
  const Shape& xs = tape.value(x).shape();
  require<ConfigError>(xs.size() == 4, "global_avg_pool input must be NCHW, got ",
                       shape_str(xs));
  const std::size_t NC = xs[0] * xs[1], S = xs[2] * xs[3];
  Tensor<T> out({xs[0], xs[1]});
  const T* xd = tape.value(x).ptr();
  for (std::size_t i = 0; i < NC; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < S; ++j) s += xd[i * S + j];
    out[i] = s / static_cast<T>(S);
  }
  return tape.record("global_avg_pool", std::move(out), {x},
                     [x, NC, S](Tape<T>& t, const Tensor<T>& gy) {
                       T* gx = t.grad_buffer(x).ptr();
                       for (std::size_t i = 0; i < NC; ++i) {
                         const T g = gy[i] / static_cast<T>(S);
                         for (std::size_t j = 0; j < S; ++j) gx[i * S + j] += g;
                       }
                     });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  require<ConfigError>(tape.value(a).shape() == tape.value(b).shape(), "add shape mismatch: ",
                       shape_str(tape.value(a).shape()), " vs ",
                       shape_str(tape.value(b).shape()));
  Tensor<T> out = tape.value(a);
  out += tape.value(b);
  return tape.record("add", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& gy) {
    if (t.requires_grad(a)) t.grad_buffer(a) += gy;
    if (t.requires_grad(b)) t.grad_buffer(b) += gy;
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  require<ConfigError>(tape.value(a).shape() == tape.value(b).shape(), "mul shape mismatch: ",
                       shape_str(tape.value(a).shape()), " vs ",
                       shape_str(tape.value(b).shape()));
  Tensor<T> out = tape.value(a);
  const T* bd = tape.value(b).ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bd[i];
  return tape.record("mul", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& gy) {
    if (t.requires_grad(a)) {
      T* g = t.grad_buffer(a).ptr();
      const T* o = t.value(b).ptr();
      for (std::size_t i = 0; i < gy.numel(); ++i) g[i] += gy[i] * o[i];
    }
    if (t.requires_grad(b)) {
      T* g = t.grad_buffer(b).ptr();
      const T* o = t.value(a).ptr();
      for (std::size_t i = 0; i < gy.numel(); ++i) g[i] += gy[i] * o[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T c) {
  Tensor<T> out = tape.value(a);
  for (auto& v : out.data()) v *= c;
  return tape.record("scale", std::move(out), {a}, [a, c](Tape<T>& t, const Tensor<T>& gy) {
    T* g = t.grad_buffer(a).ptr();
    for (std::size_t i = 0; i < gy.numel(); ++i) g[i] += c * gy[i];
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
  T s = 0;
  for (T v : tape.value(a).data()) s += v;
  return tape.record("sum", Tensor<T>({1}, std::vector<T>{s}), {a},
                     [a](Tape<T>& t, const Tensor<T>& gy) {
                       for (auto& g : t.grad_buffer(a).data()) g += gy[0];
                     });
}

template <typename T>
Var mean(Tape<T>& tape, Var a) {
  return scale(tape, sum(tape, a), T(1) / static_cast<T>(tape.value(a).numel()));
}

/// Rows [start, start+count) along dim 0.
template <typename T>
Var slice_rows(Tape<T>& tape, Var a, std::size_t start, std::size_t count) {
  const Shape& s = tape.value(a).shape();
  require<ConfigError>(!s.empty() && start + count <= s[0], "slice_rows [", start, ",",
                       start + count, ") out of range for ", shape_str(s));
  const std::size_t row = detail::trailing_numel(s, 1);
  Shape os = s;
  os[0] = count;
  const T* src = tape.value(a).ptr() + start * row;
  Tensor<T> out(os, std::vector<T>(src, src + count * row));
  return tape.record("slice_rows", std::move(out), {a},
                     [a, start, row](Tape<T>& t, const Tensor<T>& gy) {
                       T* g = t.grad_buffer(a).ptr() + start * row;
                       for (std::size_t i = 0; i < gy.numel(); ++i) g[i] += gy[i];
                     });
}

/// Stop-gradient: same value, no edge back to `a`.
template <typename T>
Var detach(Tape<T>& tape, Var a) {
  return tape.constant(tape.value(a));
}

/// Count of zero-norm rows seen by l2_normalize (epsilon-guarded path).
inline std::atomic<std::uint64_t>& zero_norm_warnings() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

/// Row-wise v / ||v||_2 for [N,D].
template <typename T>
Var l2_normalize(Tape<T>& tape, Var v) {
  const Shape& s = tape.value(v).shape();
  require<ConfigError>(s.size() == 2, "l2_normalize expects [N,D], got ", shape_str(s));
  const std::size_t N = s[0], D = s[1];
  Tensor<T> out = tape.value(v);
  std::vector<T> norms(N);
  for (std::size_t n = 0; n < N; ++n) {
    T* row = out.ptr() + n * D;
    double ss = 0;
    for (std::size_t d = 0; d < D; ++d) ss += static_cast<double>(row[d]) * row[d];
    double norm = std::sqrt(ss);
    if (norm == 0.0) {
      zero_norm_warnings().fetch_add(1);
      norm = 1e-12;
    }
    norms[n] = static_cast<T>(norm);
    for (std::size_t d = 0; d < D; ++d) row[d] = static_cast<T>(row[d] / norm);
  }
  return tape.record("l2_normalize", std::move(out), {v},
                     [v, N, D, norms = std::move(norms)](Tape<T>& t, const Tensor<T>& gy) {
                       const T* vd = t.value(v).ptr();
                       T* gv = t.grad_buffer(v).ptr();
                       std::vector<T> y(D);
                       for (std::size_t n = 0; n < N; ++n) {
                         const T* gr = gy.ptr() + n * D;
                         T dot = 0;
                         for (std::size_t d = 0; d < D; ++d) {
                           y[d] = vd[n * D + d] / norms[n];
                           dot += y[d] * gr[d];
                         }
                         for (std::size_t d = 0; d < D; ++d)
                           gv[n * D + d] += (gr[d] - y[d] * dot) / norms[n];
                       }
                     });
}

/// Mean softmax cross-entropy of logits [N,C] against integer labels.
template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels) {
  const Shape& s = tape.value(logits).shape();
  require<ConfigError>(s.size() == 2 && s[0] == labels.size(), "cross-entropy shape ",
                       shape_str(s), " vs ", labels.size(), " labels");
  const std::size_t N = s[0], C = s[1];
  Tensor<T> prob({N, C});
  double total = 0;
  const T* z = tape.value(logits).ptr();
  for (std::size_t n = 0; n < N; ++n) {
    require<ConfigError>(labels[n] >= 0 && static_cast<std::size_t>(labels[n]) < C, "label ",
                         labels[n], " outside [0,", C, ")");
    const T* row = z + n * C;
    const T mx = *std::max_element(row, row + C);
    double se = 0;
    for (std::size_t c = 0; c < C; ++c) se += std::exp(static_cast<double>(row[c] - mx));
    const double lse = std::log(se) + mx;
    for (std::size_t c = 0; c < C; ++c) prob[n * C + c] = static_cast<T>(std::exp(row[c] - lse));
    total += lse - row[labels[n]];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return tape.record("softmax_cross_entropy",
                     Tensor<T>({1}, std::vector<T>{static_cast<T>(total / N)}), {logits},
                     [logits, N, C, prob = std::move(prob), lab = std::move(lab)](
                         Tape<T>& t, const Tensor<T>& gy) {
                       T* g = t.grad_buffer(logits).ptr();
                       const T k = gy[0] / static_cast<T>(N);
                       for (std::size_t n = 0; n < N; ++n)
                         for (std::size_t c = 0; c < C; ++c)
                           g[n * C + c] +=
                               k * (prob[n * C + c] - (static_cast<int>(c) == lab[n] ? T(1) : T(0)));
                     });
}

}  // namespace mscn
