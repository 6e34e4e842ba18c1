#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mscn/objectives/losses.hpp"
#include "mscn/tensor/gradcheck.hpp"
#include "test_util.hpp"

using namespace mscn;
using mscn::testing::random_tensor;

namespace {

Tensor<double> unit_rows(Tensor<double> t) {
  const std::size_t N = t.dim(0), D = t.dim(1);
  for (std::size_t n = 0; n < N; ++n) {
    double s = 0;
    for (std::size_t d = 0; d < D; ++d) s += t[n * D + d] * t[n * D + d];
    s = std::sqrt(s);
    for (std::size_t d = 0; d < D; ++d) t[n * D + d] /= s;
  }
  return t;
}

// Direct O((2N)^2) NT-Xent written from the definition, in long double.
long double brute_force_nt_xent(const Tensor<double>& a, const Tensor<double>& b, double tau) {
  const std::size_t N = a.dim(0), D = a.dim(1);
  auto row = [&](std::size_t i) { return i < N ? a.ptr() + i * D : b.ptr() + (i - N) * D; };
  auto sim = [&](std::size_t i, std::size_t k) {
    long double s = 0;
    for (std::size_t d = 0; d < D; ++d) s += static_cast<long double>(row(i)[d]) * row(k)[d];
    return s / tau;
  };
  long double total = 0;
  for (std::size_t i = 0; i < 2 * N; ++i) {
    const std::size_t pos = i < N ? i + N : i - N;
    long double denom = 0;
    for (std::size_t k = 0; k < 2 * N; ++k)
      if (k != i) denom += std::exp(sim(i, k));
    total += -std::log(std::exp(sim(i, pos)) / denom);
  }
  return total / (2 * N);
}

double nce(const Tensor<double>& a, const Tensor<double>& b, double tau) {
  Tape<double> t;
  return t.value(info_nce_loss(t, t.constant(a), t.constant(b), tau)).item();
}

}  // namespace

TEST(InfoNce, IdenticalEmbeddingsGiveLn3) {
  Tensor<double> e({2, 4}, std::vector<double>{0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
  EXPECT_NEAR(nce(e, e, 0.2), std::log(3.0), 1e-6);
  EXPECT_NEAR(nce(e, e, 1.0), std::log(3.0), 1e-6);
}

TEST(InfoNce, OrthogonalNegativesSmallTemperatureApproachesZero) {
  // pairs share a basis vector; different pairs are orthogonal
  Tensor<double> a({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_LT(nce(a, a, 0.01), 1e-30);
  EXPECT_LT(nce(a, a, 0.05), nce(a, a, 0.2));
}

TEST(InfoNce, MatchesBruteForceOracle) {
  for (std::size_t N = 2; N <= 8; ++N)
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const auto a = unit_rows(random_tensor({N, 6}, 10 * N + seed));
      const auto b = unit_rows(random_tensor({N, 6}, 1000 + 10 * N + seed));
      for (double tau : {0.1, 0.2, 0.5})
        EXPECT_NEAR(nce(a, b, tau), static_cast<double>(brute_force_nt_xent(a, b, tau)), 1e-6)
            << "N=" << N << " tau=" << tau;
    }
}

TEST(InfoNce, FloatPathMatchesOracle) {
  const auto a = unit_rows(random_tensor({8, 16}, 5));
  const auto b = unit_rows(random_tensor({8, 16}, 6));
  Tape<float> t;
  Var l = info_nce_loss(t, t.constant(a.cast<float>()), t.constant(b.cast<float>()), 0.2);
  EXPECT_NEAR(t.value(l).item(), static_cast<double>(brute_force_nt_xent(a, b, 0.2)), 1e-5);
}

TEST(InfoNce, PermutationAndRotationInvariant) {
  const std::size_t N = 6, D = 3;
  const auto a = unit_rows(random_tensor({N, D}, 41));
  const auto b = unit_rows(random_tensor({N, D}, 42));
  const double base = nce(a, b, 0.2);

  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  Tensor<double> pa({N, D}), pb({N, D});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d) {
      pa[n * D + d] = a[perm[n] * D + d];
      pb[n * D + d] = b[perm[n] * D + d];
    }
  EXPECT_NEAR(nce(pa, pb, 0.2), base, 1e-5);

  // rotation about the z axis then about x
  const double c1 = std::cos(0.7), s1 = std::sin(0.7), c2 = std::cos(-1.1), s2 = std::sin(-1.1);
  const double R[3][3] = {{c1, -s1 * c2, s1 * s2}, {s1, c1 * c2, -c1 * s2}, {0, s2, c2}};
  auto rotate = [&](const Tensor<double>& x) {
    Tensor<double> y({N, D});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) y[n * D + i] += R[i][j] * x[n * D + j];
    return y;
  };
  EXPECT_NEAR(nce(rotate(a), rotate(b), 0.2), base, 1e-5);
}

TEST(InfoNce, GradientThroughNormalizationMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto a0 = random_tensor({4, 5}, seed);
    const auto b0 = random_tensor({4, 5}, seed + 50);
    auto wrt_a = [&](Tape<double>& t, Var a) {
      return info_nce_loss(t, l2_normalize(t, a), l2_normalize(t, t.constant(b0)), 0.2);
    };
    auto wrt_b = [&](Tape<double>& t, Var b) {
      return info_nce_loss(t, l2_normalize(t, t.constant(a0)), l2_normalize(t, b), 0.2);
    };
    EXPECT_LT(finite_diff_check(wrt_a, a0).max_rel_error, 1e-4);
    EXPECT_LT(finite_diff_check(wrt_b, b0).max_rel_error, 1e-4);
  }
}

TEST(InfoNce, SinglePairRejected) {
  Tape<double> t;
  Var a = t.constant(Tensor<double>({1, 2}, std::vector<double>{1, 0}));
  EXPECT_THROW(info_nce_loss(t, a, a, 0.2), ContractViolation);
}

TEST(Byol, ClosedForms) {
  const auto p = unit_rows(random_tensor({3, 4}, 8));
  Tensor<double> neg = p;
  for (auto& v : neg.data()) v = -v;
  Tape<double> t;
  Var vp = t.constant(p);
  EXPECT_NEAR(t.value(byol_loss(t, vp, t.constant(p))).item(), 0.0, 1e-7);
  EXPECT_NEAR(t.value(byol_loss(t, vp, t.constant(neg))).item(), 4.0, 1e-12);
}

TEST(Byol, RangeAndSymmetry) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto pa = unit_rows(random_tensor({5, 3}, seed));
    const auto pb = unit_rows(random_tensor({5, 3}, seed + 100));
    const auto za = unit_rows(random_tensor({5, 3}, seed + 200));
    const auto zb = unit_rows(random_tensor({5, 3}, seed + 300));
    Tape<double> t;
    const double l = t.value(byol_symmetric_loss(t, t.constant(pa), t.constant(zb),
                                                 t.constant(pb), t.constant(za)))
                         .item();
    const double swapped = t.value(byol_symmetric_loss(t, t.constant(pb), t.constant(za),
                                                       t.constant(pa), t.constant(zb)))
                               .item();
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 4.0);
    EXPECT_DOUBLE_EQ(l, swapped);
  }
}

TEST(Byol, GradientWrtPreNormalizationPrediction) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto z = unit_rows(random_tensor({4, 6}, seed + 7));
    auto f = [&](Tape<double>& t, Var p) { return byol_loss(t, l2_normalize(t, p), t.constant(z)); };
    EXPECT_LT(finite_diff_check(f, random_tensor({4, 6}, seed)).max_rel_error, 1e-4);
  }
}

TEST(Byol, TargetReceivesNoGradient) {
  Tape<double> t;
  Var p = t.variable(unit_rows(random_tensor({3, 4}, 1)));
  Var z = t.variable(unit_rows(random_tensor({3, 4}, 2)));
  t.backward(byol_loss(t, p, z));
  const auto gz = t.grad(z);
  for (double g : gz.data()) EXPECT_EQ(g, 0.0);
}

TEST(Byol, UnnormalizedInputRejected) {
  Tape<double> t;
  Var p = t.constant(Tensor<double>({1, 2}, std::vector<double>{2, 0}));
  Var z = t.constant(Tensor<double>({1, 2}, std::vector<double>{1, 0}));
  EXPECT_THROW(byol_loss(t, p, z), ContractViolation);
}

TEST(Ema, ScheduleEndpoints) {
  EXPECT_EQ(ema_momentum(0.0), 0.996);
  EXPECT_EQ(ema_momentum(1.0), 1.0);
  EXPECT_NEAR(ema_momentum(0.5), 0.998, 1e-15);
  EXPECT_THROW(ema_momentum(1.5), ContractViolation);
  EXPECT_THROW(ema_momentum(-0.1), ContractViolation);
}

TEST(Ema, SingleStepArithmetic) {
  ParameterSet<double> online;
  online.add("w", Tensor<double>({2}, 1.0));
  EmaState<double> s;
  s.target.add("w", Tensor<double>({2}, 0.0));
  ema_update(s, online, 0.996);
  EXPECT_NEAR(s.target.at("w").value[0], 0.004, 1e-15);

  LossConfig cfg;
  ema_update_scheduled(s, online, 1.0, cfg);
  EXPECT_NEAR(s.target.at("w").value[0], 0.004, 1e-15);  // tau = 1 freezes the target
  EXPECT_EQ(s.tau, 1.0);
  EXPECT_EQ(s.step, 2u);
}

TEST(Ema, GeometricConvergence) {
  const auto p = random_tensor({10}, 3);
  const auto q = random_tensor({10}, 4);
  ParameterSet<double> online;
  online.add("w", p);
  EmaState<double> s;
  s.target.add("w", q);
  const double tau = 0.9;
  const int n = 25;
  for (int i = 0; i < n; ++i) ema_update(s, online, tau);
  for (std::size_t i = 0; i < 10; ++i)
    EXPECT_NEAR(s.target.at("w").value[i], p[i] + std::pow(tau, n) * (q[i] - p[i]), 1e-6);
}

TEST(Embedding, StdDetectsCollapse) {
  Tensor<double> constant({4, 3}, 0.5);
  EXPECT_EQ(embedding_std(constant), 0.0);
  Tensor<double> spread({2, 1}, std::vector<double>{-1, 1});
  EXPECT_DOUBLE_EQ(embedding_std(spread), 1.0);
}
