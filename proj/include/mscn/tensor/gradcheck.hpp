#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>

#include "mscn/tensor/tape.hpp"

namespace mscn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

namespace detail {

inline double scalar_of(Tape<double>& tape, Var out) {
  const double v = tape.value(out).item();
  if (!std::isfinite(v)) throw NumericError("finite-difference probe produced a non-finite loss");
  return v;
}

// Visits up to `max_elements` indices spread evenly over [0, n).
template <typename F>
void for_sampled(std::size_t n, std::size_t max_elements, F&& f) {
  if (max_elements == 0 || max_elements >= n) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  for (std::size_t k = 0; k < max_elements; ++k) f(k * n / max_elements);
}

}  // namespace detail

/// Central differences against reverse-mode gradients of a scalar function of
/// one tensor. `f` must build the loss on the tape it is handed; the point is
/// bound as a variable so every evaluation sees a fresh tape.
inline GradCheckResult finite_diff_check(
    const std::function<Var(Tape<double>&, Var)>& f, const Tensor<double>& point,
    double h = 1e-5, std::size_t max_elements = 0) {
  Tensor<double> analytic;
  {
    Tape<double> tape;
    Var x = tape.variable(point);
    Var out = f(tape, x);
    detail::scalar_of(tape, out);
    tape.backward(out);
    analytic = tape.grad(x);
  }
  GradCheckResult r;
  Tensor<double> probe = point;
  detail::for_sampled(point.numel(), max_elements, [&](std::size_t i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    double fp, fm;
    {
      Tape<double> tape(false);
      fp = detail::scalar_of(tape, f(tape, tape.constant(probe)));
    }
    probe[i] = orig - h;
    {
      Tape<double> tape(false);
      fm = detail::scalar_of(tape, f(tape, tape.constant(probe)));
    }
    probe[i] = orig;
    const double numeric = (fp - fm) / (2 * h);
    const double err = relative_error(analytic[i], numeric);
    ++r.checked;
    if (r.checked == 1 || err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst_index = i;
      r.analytic = analytic[i];
      r.numeric = numeric;
    }
  });
  return r;
}

/// Same check for a parameter that `loss` binds through tape.parameter().
/// The parameter value is perturbed in place and restored afterwards.
inline GradCheckResult finite_diff_check(const std::function<Var(Tape<double>&)>& loss,
                                         Parameter<double>& param, double h = 1e-5,
                                         std::size_t max_elements = 0) {
  Tensor<double> analytic;
  {
    Tape<double> tape;
    Var out = loss(tape);
    detail::scalar_of(tape, out);
    param.zero_grad();
    tape.backward(out);
    analytic = param.grad;
  }
  GradCheckResult r;
  detail::for_sampled(param.value.numel(), max_elements, [&](std::size_t i) {
    const double orig = param.value[i];
    param.value[i] = orig + h;
    double fp, fm;
    {
      Tape<double> tape;
      fp = detail::scalar_of(tape, loss(tape));
    }
    param.value[i] = orig - h;
    {
      Tape<double> tape;
      fm = detail::scalar_of(tape, loss(tape));
    }
    param.value[i] = orig;
    const double numeric = (fp - fm) / (2 * h);
    const double err = relative_error(analytic[i], numeric);
    ++r.checked;
    if (r.checked == 1 || err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst_index = i;
      r.analytic = analytic[i];
      r.numeric = numeric;
    }
  });
  return r;
}

}  // namespace mscn
