#pragma once
/// @file classic_sl.hpp
/// @brief Conservative 1D semi-Lagrangian finite volume scheme with remapping.
///
/// Each cell carries an unlimited polynomial of degree K written in the
/// scaled local basis ((x - x_j) / h)^k. The new average of cell i is the
/// integral of the piecewise reconstruction over the upstream interval
/// [x_{i-1/2} + xi_{i-1/2} h, x_{i+1/2} + xi_{i+1/2} h], split at every
/// Eulerian interface it crosses. Upstream intervals of consecutive cells
/// tile one period, so the scheme conserves mass for arbitrary shifts.

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"

namespace mlsl {

class IllPosedShifts : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

class StencilEscape : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Linear map from neighboring cell averages to polynomial coefficients:
/// c^(k) = sum_r weights[k][r] * U_{j + first + r}.
struct ReconstructionStencil {
  int order = 0;
  int first = 0;
  int width = 1;
  std::array<std::array<Real, 3>, 3> weights{};
};

inline ReconstructionStencil reconstruction_stencil(int K) {
  ReconstructionStencil st;
  st.order = K;
  switch (K) {
    case 0:
      st.first = 0;
      st.width = 1;
      st.weights[0] = {1.0, 0.0, 0.0};
      break;
    case 1:
      // two-cell stencil {j, j+1}
      st.first = 0;
      st.width = 2;
      st.weights[0] = {1.0, 0.0, 0.0};
      st.weights[1] = {-1.0, 1.0, 0.0};
      break;
    case 2:
      st.first = -1;
      st.width = 3;
      st.weights[0] = {-1.0 / 24.0, 26.0 / 24.0, -1.0 / 24.0};
      st.weights[1] = {-0.5, 0.0, 0.5};
      st.weights[2] = {0.5, -1.0, 0.5};
      break;
    default:
      throw std::invalid_argument("reconstruct: unsupported order K = " + std::to_string(K));
  }
  return st;
}

struct ReconstructionTable {
  int order = 0;
  Grid1D grid;
  // coeffs[j][k], k <= order
  std::vector<std::array<Real, 3>> coeffs;

  /// Value of the reconstruction of cell j at local coordinate zeta in [-1/2, 1/2].
  Real eval(int j, Real zeta) const {
    const auto& c = coeffs[static_cast<std::size_t>(j)];
    Real v = 0.0;
    for (int k = order; k >= 0; --k) v = v * zeta + c[k];
    return v;
  }
};

/// Integral of zeta^k over [lo, hi].
inline Real monomial_integral(int k, Real lo, Real hi) {
  switch (k) {
    case 0: return hi - lo;
    case 1: return 0.5 * (hi * hi - lo * lo);
    case 2: return (hi * hi * hi - lo * lo * lo) / 3.0;
    default: return (std::pow(hi, k + 1) - std::pow(lo, k + 1)) / (k + 1);
  }
}

inline ReconstructionTable reconstruct(const CellField<Grid1D>& u, int K) {
  const auto st = reconstruction_stencil(K);
  const int n = u.grid.n;
  if (n < K + 1) throw std::invalid_argument("reconstruct: grid has fewer than K+1 cells");
  ReconstructionTable tab;
  tab.order = K;
  tab.grid = u.grid;
  tab.coeffs.assign(static_cast<std::size_t>(n), {0.0, 0.0, 0.0});
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k <= K; ++k) {
      Real c = 0.0;
      for (int r = 0; r < st.width; ++r) c += st.weights[k][r] * u.values[wrap_index(j + st.first + r, n)];
      tab.coeffs[j][k] = c;
    }
  }
  return tab;
}

namespace detail {

/// Calls visit(j_unwrapped, zeta_lo, zeta_hi) for every nonempty piece of
/// the upstream interval of cell i, in grid units.
template <class Visit>
void for_each_upstream_piece(const ShiftField<Grid1D>& shifts, int i, Visit&& visit) {
  const int n = shifts.grid.n;
  const Real a = i + shifts.xi[static_cast<std::size_t>(i)];
  const Real b = i + 1 + shifts.xi[static_cast<std::size_t>(wrap_index(i + 1, n))];
  if (!(a < b))
    throw IllPosedShifts("sl_step_exact: upstream interval of cell " + std::to_string(i) + " is inverted");
  const long j0 = static_cast<long>(std::floor(a));
  const long j1 = static_cast<long>(std::ceil(b)) - 1;
  for (long j = j0; j <= j1; ++j) {
    const Real lo = std::max(a, static_cast<Real>(j));
    const Real hi = std::min(b, static_cast<Real>(j + 1));
    if (hi <= lo) continue;
    visit(j, lo - j - 0.5, hi - j - 0.5);
  }
}

}  // namespace detail

/// One exact-tracing step: U_i^{new} = (1/h) * integral of the
/// reconstruction over the upstream cell of I_i.
inline CellField<Grid1D> sl_step_exact(const CellField<Grid1D>& u, const ShiftField<Grid1D>& shifts, int K) {
  if (!(u.grid == shifts.grid)) throw ShapeError("sl_step_exact: grid mismatch");
  const auto tab = reconstruct(u, K);
  const int n = u.grid.n;
  CellField<Grid1D> out(u.grid, u.time + shifts.dt);
  for (int i = 0; i < n; ++i) {
    Real acc = 0.0;
    detail::for_each_upstream_piece(shifts, i, [&](long j, Real lo, Real hi) {
      const auto jw = static_cast<std::size_t>(wrap_index(j, n));
      if (lo == -0.5 && hi == 0.5) {
        // whole cell: the reconstruction reproduces its average
        acc += u.values[jw];
        return;
      }
      const auto& c = tab.coeffs[jw];
      for (int k = 0; k <= K; ++k) acc += c[k] * monomial_integral(k, lo, hi);
    });
    out.values[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

/// Coefficient tensor d with apply_coefficients(u, d) == sl_step_exact(u, shifts, K).
/// Throws StencilEscape when the upstream dependence of some cell reaches
/// beyond the fixed centered stencil of half-width s.
inline CoeffField<Grid1D> exact_coefficients(const ShiftField<Grid1D>& shifts, int K, int s) {
  const auto st = reconstruction_stencil(K);
  const int n = shifts.grid.n;
  if (n < stencil_width(s)) throw std::invalid_argument("exact_coefficients: grid narrower than stencil");
  CoeffField<Grid1D> d(shifts.grid, s);
  for (int i = 0; i < n; ++i) {
    detail::for_each_upstream_piece(shifts, i, [&](long j, Real lo, Real hi) {
      if (lo == -0.5 && hi == 0.5) {
        const long offset = j - i;
        if (offset < -s || offset > s)
          throw StencilEscape("exact_coefficients: dependence region of cell " + std::to_string(i) +
                              " escapes the stencil");
        d(i, static_cast<int>(offset + s)) += 1.0;
        return;
      }
      for (int k = 0; k <= K; ++k) {
        const Real w = monomial_integral(k, lo, hi);
        for (int r = 0; r < st.width; ++r) {
          const Real contrib = w * st.weights[k][r];
          if (contrib == 0.0) continue;
          const long offset = j - i + st.first + r;
          if (offset < -s || offset > s)
            throw StencilEscape("exact_coefficients: dependence region of cell " + std::to_string(i) +
                                " escapes the stencil");
          d(i, static_cast<int>(offset + s)) += contrib;
        }
      }
    });
  }
  return d;
}

}  // namespace mlsl
