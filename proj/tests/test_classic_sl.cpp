#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mlsl/characteristics.hpp"
#include "mlsl/classic_sl.hpp"
#include "mlsl/rng.hpp"

using namespace mlsl;
using std::numbers::pi;

namespace {

// Independent of the library's apply path: plain loop over the stencil.
CellField<Grid1D> naive_apply(const CellField<Grid1D>& u, const CoeffField<Grid1D>& d) {
  CellField<Grid1D> out(u.grid);
  const int n = u.grid.n;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < stencil_width(d.s); ++k) out.values[i] += d(i, k) * u.values[wrap_index(i - d.s + k, n)];
  return out;
}

CellField<Grid1D> sine_averages(const Grid1D& g, Real shift = 0.0) {
  CellField<Grid1D> u(g);
  for (int i = 0; i < g.n; ++i) {
    const Real a = g.face(i) - shift, b = g.face(i + 1) - shift;
    u.values[i] = (std::cos(2 * pi * a) - std::cos(2 * pi * b)) / (2 * pi * g.h());
  }
  return u;
}

ShiftField<Grid1D> smooth_shifts(const Grid1D& g, Rng& rng, Real amplitude) {
  ShiftField<Grid1D> sh(g, 0.01);
  const Real base = uniform(rng, -amplitude, amplitude);
  const Real wiggle = 0.15 * uniform(rng, 0.0, 1.0);
  const Real phase = uniform(rng, 0.0, 2 * pi);
  for (int i = 0; i < g.n; ++i) {
    Real v = base + wiggle * std::sin(2 * pi * i / g.n + phase);
    sh.xi[i] = std::clamp(v, -amplitude, amplitude);
  }
  return sh;
}

CellField<Grid1D> random_field(const Grid1D& g, Rng& rng) {
  CellField<Grid1D> u(g);
  for (auto& v : u.values) v = uniform(rng, -1.0, 1.0);
  return u;
}

}  // namespace

TEST(Reconstruct, ReproducesConstants) {
  const Grid1D g(0.0, 1.0, 16);
  CellField<Grid1D> u(g);
  std::fill(u.values.begin(), u.values.end(), 0.75);
  for (int K = 0; K <= 2; ++K) {
    const auto tab = reconstruct(u, K);
    for (int j = 0; j < g.n; ++j)
      for (Real z : {-0.5, -0.1, 0.3, 0.5}) EXPECT_NEAR(tab.eval(j, z), 0.75, 1e-15);
  }
}

TEST(Reconstruct, QuadraticIsExactForLinearData) {
  const Grid1D g(0.0, 1.0, 16);
  CellField<Grid1D> u(g);
  for (int i = 0; i < g.n; ++i) u.values[i] = 2.0 * g.center(i) + 1.0;
  const auto tab = reconstruct(u, 2);
  for (int j = 1; j + 1 < g.n; ++j)  // periodic wrap breaks linearity at the ends
    for (Real z : {-0.5, 0.0, 0.25, 0.5}) EXPECT_NEAR(tab.eval(j, z), 2.0 * (g.center(j) + z * g.h()) + 1.0, 1e-13);
}

TEST(Reconstruct, ReproducesCellAverages) {
  Rng rng = substream(21, 0);
  const Grid1D g(0.0, 1.0, 20);
  const auto u = random_field(g, rng);
  for (int K = 0; K <= 2; ++K) {
    const auto tab = reconstruct(u, K);
    for (int j = 0; j < g.n; ++j) {
      Real avg = 0.0;
      for (int k = 0; k <= K; ++k) avg += tab.coeffs[j][k] * monomial_integral(k, -0.5, 0.5);
      EXPECT_NEAR(avg, u.values[j], 1e-13);
    }
  }
}

TEST(Reconstruct, ThirdOrderOnSine) {
  // L2 error over each cell by 5-point Gauss quadrature
  static constexpr Real gx[] = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
                                0.9061798459386640};
  static constexpr Real gw[] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665,
                                0.2369268850561891};
  auto err = [&](int n) {
    const Grid1D g(0.0, 1.0, n);
    const auto tab = reconstruct(sine_averages(g), 2);
    Real acc = 0.0;
    for (int j = 0; j < n; ++j)
      for (int q = 0; q < 5; ++q) {
        const Real z = 0.5 * gx[q];
        const Real e = tab.eval(j, z) - std::sin(2 * pi * (g.center(j) + z * g.h()));
        acc += 0.5 * gw[q] * g.h() * e * e;
      }
    return std::sqrt(acc);
  };
  const Real r1 = err(32) / err(64), r2 = err(64) / err(128);
  EXPECT_NEAR(r1, 8.0, 1.0);
  EXPECT_NEAR(r2, 8.0, 1.0);
}

TEST(Reconstruct, RejectsUnsupportedOrder) {
  const Grid1D g(0.0, 1.0, 8);
  EXPECT_THROW(reconstruct(CellField<Grid1D>(g), 3), std::invalid_argument);
  EXPECT_THROW(reconstruct(CellField<Grid1D>(g), -1), std::invalid_argument);
}

TEST(SlStepExact, IntegerShiftIsCyclicShift) {
  Rng rng = substream(22, 0);
  const Grid1D g(0.0, 1.0, 32);
  const auto u = random_field(g, rng);
  ShiftField<Grid1D> sh(g, g.h());
  std::fill(sh.xi.begin(), sh.xi.end(), -1.0);
  for (int K = 0; K <= 2; ++K) {
    const auto out = sl_step_exact(u, sh, K);
    for (int i = 0; i < g.n; ++i) EXPECT_EQ(out.values[i], u.values[wrap_index(i - 1, g.n)]);
  }
  std::fill(sh.xi.begin(), sh.xi.end(), 0.0);
  EXPECT_EQ(sl_step_exact(u, sh, 2).values, u.values);
}

TEST(SlStepExact, ThirdOrderStepError) {
  auto err = [](int n) {
    const Grid1D g(0.0, 1.0, n);
    const Real dt = 2.5 * g.h();
    const auto sh = shifts_1d(Constant1D{1.0}, g, dt, dt, 1);
    const auto out = sl_step_exact(sine_averages(g), sh, 2);
    const auto exact = sine_averages(g, dt);
    Real e = 0.0;
    for (int i = 0; i < n; ++i) e += std::abs(out.values[i] - exact.values[i]) * g.h();
    return e;
  };
  EXPECT_GE(std::log2(err(32) / err(64)), 2.7);
  EXPECT_GE(std::log2(err(64) / err(128)), 2.7);
}

TEST(SlStepExact, RejectsInvertedUpstreamCell) {
  const Grid1D g(0.0, 1.0, 8);
  ShiftField<Grid1D> sh(g, 0.1);
  sh.xi[3] = 0.0;
  sh.xi[4] = -1.5;
  EXPECT_THROW(sl_step_exact(CellField<Grid1D>(g), sh, 2), IllPosedShifts);
}

TEST(SlStepExact, ConservesMassForLargeShifts) {
  Rng rng = substream(23, 0);
  const Grid1D g(0.0, 1.0, 40);
  for (int trial = 0; trial < 50; ++trial) {
    auto u = random_field(g, rng);
    for (auto& v : u.values) v += 2.0;
    const auto sh = smooth_shifts(g, rng, 6.0);
    for (int K = 0; K <= 2; ++K) {
      const Real m0 = total_mass(u);
      const Real m1 = total_mass(sl_step_exact(u, sh, K));
      EXPECT_LE(std::abs(m1 - m0), 1e-12 * std::abs(m0) + 1e-14);
    }
  }
}

TEST(SlStepExact, TranslationEquivariant) {
  Rng rng = substream(24, 0);
  const Grid1D g(0.0, 1.0, 24);
  const auto u = random_field(g, rng);
  const auto sh = smooth_shifts(g, rng, 1.7);
  const auto out = sl_step_exact(u, sh, 2);
  const int c = 5;
  auto ur = u;
  auto shr = sh;
  for (int i = 0; i < g.n; ++i) {
    ur.values[wrap_index(i + c, g.n)] = u.values[i];
    shr.xi[wrap_index(i + c, g.n)] = sh.xi[i];
  }
  const auto outr = sl_step_exact(ur, shr, 2);
  for (int i = 0; i < g.n; ++i) EXPECT_NEAR(outr.values[wrap_index(i + c, g.n)], out.values[i], 1e-14);
}

TEST(ExactCoefficients, OneHotCases) {
  const Grid1D g(0.0, 1.0, 16);
  ShiftField<Grid1D> sh(g, 0.1);
  std::fill(sh.xi.begin(), sh.xi.end(), -1.0);
  auto d = exact_coefficients(sh, 0, 2);
  for (int i = 0; i < g.n; ++i)
    for (int k = 0; k < 5; ++k) EXPECT_EQ(d(i, k), k == 1 ? 1.0 : 0.0);
  std::fill(sh.xi.begin(), sh.xi.end(), 0.0);
  d = exact_coefficients(sh, 2, 2);
  for (int i = 0; i < g.n; ++i)
    for (int k = 0; k < 5; ++k) EXPECT_EQ(d(i, k), k == 2 ? 1.0 : 0.0);
}

TEST(ExactCoefficients, MatchesExactStep) {
  Rng rng = substream(25, 0);
  const Grid1D g(0.0, 1.0, 32);
  for (int trial = 0; trial < 100; ++trial) {
    const auto sh = smooth_shifts(g, rng, 0.99);
    const auto u = random_field(g, rng);
    for (int K = 0; K <= 2; ++K) {
      const auto d = exact_coefficients(sh, K, 2);
      const auto a = naive_apply(u, d);
      const auto b = sl_step_exact(u, sh, K);
      for (int i = 0; i < g.n; ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-12);
      for (Real s : coeff_column_sums(d)) EXPECT_NEAR(s, 1.0, 1e-13);
    }
  }
}

TEST(ExactCoefficients, ColumnSumIsNecessaryForConservation) {
  // Linear scheme: feed the unit field at source l and watch the mass.
  const Grid1D g(0.0, 1.0, 16);
  ShiftField<Grid1D> sh(g, 0.1);
  std::fill(sh.xi.begin(), sh.xi.end(), -0.3);
  const auto d = exact_coefficients(sh, 2, 2);
  const int l = 7;
  CellField<Grid1D> delta(g);
  delta.values[l] = 1.0;
  EXPECT_NEAR(total_mass(naive_apply(delta, d)), total_mass(delta), 1e-15);
  for (int j = -2; j <= 2; ++j) {
    auto bad = d;
    bad(static_cast<int>(wrap_index(l + j, g.n)), 2 - j) += 0.01;
    EXPECT_NEAR(coeff_column_sums(bad)[l], 1.01, 1e-13);
    EXPECT_NEAR(total_mass(naive_apply(delta, bad)) - total_mass(delta), 0.01 * g.h(), 1e-15);
  }
}

TEST(ExactCoefficients, RejectsStencilEscape) {
  const Grid1D g(0.0, 1.0, 16);
  ShiftField<Grid1D> sh(g, 0.1);
  std::fill(sh.xi.begin(), sh.xi.end(), -2.6);
  EXPECT_THROW(exact_coefficients(sh, 0, 2), StencilEscape);
  std::fill(sh.xi.begin(), sh.xi.end(), -1.2);
  EXPECT_THROW(exact_coefficients(sh, 2, 2), StencilEscape);  // K = 2 reads one more neighbor
  EXPECT_NO_THROW(exact_coefficients(sh, 0, 2));
}
