#pragma once
/// @file weno.hpp
/// @brief Eulerian finite volume WENO5 + SSPRK3 solver for linear
/// conservative transport u_t + div(v u) = 0 on periodic grids.
///
/// Reconstruction follows Jiang & Shu: three third-order candidates,
/// smoothness indicators beta_k, linear weights (1/10, 3/5, 3/10),
/// alpha_k = gamma_k / (eps + beta_k)^2 with eps = 1e-6. Interface fluxes
/// use the analytic velocity at the interface and pick the upwind state by
/// its sign. 2D is dimension-by-dimension; transverse flux quadrature is
/// midpoint by default, with a 3-point Gauss option.

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "characteristics.hpp"
#include "core.hpp"

namespace mlsl {

inline constexpr Real kWenoEps = 1e-6;

struct Weno5Weights {
  std::array<Real, 3> beta{};
  std::array<Real, 3> omega{};
};

/// WENO5 value at the right edge of the center cell v2 from averages
/// v0..v4 (left-biased upwind reconstruction).
inline Real weno5_edge(Real v0, Real v1, Real v2, Real v3, Real v4, Weno5Weights* info = nullptr) {
  const Real q0 = (2.0 * v0 - 7.0 * v1 + 11.0 * v2) / 6.0;
  const Real q1 = (-v1 + 5.0 * v2 + 2.0 * v3) / 6.0;
  const Real q2 = (2.0 * v2 + 5.0 * v3 - v4) / 6.0;

  const Real d0 = v0 - 2.0 * v1 + v2;
  const Real d1 = v1 - 2.0 * v2 + v3;
  const Real d2 = v2 - 2.0 * v3 + v4;
  const Real e0 = v0 - 4.0 * v1 + 3.0 * v2;
  const Real e1 = v1 - v3;
  const Real e2 = 3.0 * v2 - 4.0 * v3 + v4;
  const Real b0 = 13.0 / 12.0 * d0 * d0 + 0.25 * e0 * e0;
  const Real b1 = 13.0 / 12.0 * d1 * d1 + 0.25 * e1 * e1;
  const Real b2 = 13.0 / 12.0 * d2 * d2 + 0.25 * e2 * e2;

  const Real a0 = 0.1 / ((kWenoEps + b0) * (kWenoEps + b0));
  const Real a1 = 0.6 / ((kWenoEps + b1) * (kWenoEps + b1));
  const Real a2 = 0.3 / ((kWenoEps + b2) * (kWenoEps + b2));
  const Real inv = 1.0 / (a0 + a1 + a2);
  const Real w0 = a0 * inv, w1 = a1 * inv, w2 = a2 * inv;
  if (info) {
    info->beta = {b0, b1, b2};
    info->omega = {w0, w1, w2};
  }
  return w0 * q0 + w1 * q1 + w2 * q2;
}

/// Reconstructed states at every face f of a periodic line (face f is the
/// left face of cell f): minus from the left cell, plus from the right cell.
struct WenoWorkspace {
  std::vector<Real> minus;
  std::vector<Real> plus;
  std::vector<Weno5Weights> minus_weights;
  std::vector<Weno5Weights> plus_weights;
  std::vector<Real> flux;
};

inline WenoWorkspace weno5_interface_states(const CellField<Grid1D>& u) {
  const int n = u.grid.n;
  if (n < 5) throw std::invalid_argument("weno5_interface_states: need at least 5 cells");
  WenoWorkspace ws;
  ws.minus.resize(n);
  ws.plus.resize(n);
  ws.minus_weights.resize(n);
  ws.plus_weights.resize(n);
  auto at = [&](long k) { return u.values[static_cast<std::size_t>(wrap_index(k, n))]; };
  for (int f = 0; f < n; ++f) {
    ws.minus[f] = weno5_edge(at(f - 3), at(f - 2), at(f - 1), at(f), at(f + 1), &ws.minus_weights[f]);
    ws.plus[f] = weno5_edge(at(f + 2), at(f + 1), at(f), at(f - 1), at(f - 2), &ws.plus_weights[f]);
  }
  return ws;
}

enum class FluxQuadrature { midpoint, gauss3 };

struct WenoOptions {
  Real cfl_fine = 0.4;
  FluxQuadrature quadrature = FluxQuadrature::midpoint;
};

namespace detail {

/// Weights w[r], r = -2..2, so that sum_r w[r] * avg_{j+r}(p) = p(x_j + zeta h)
/// for every polynomial p of degree <= 4.
inline std::array<Real, 5> point_from_averages(Real zeta) {
  // rows: monomial m, columns: cell offset r; A[m][r] = avg over cell r of z^m
  std::array<std::array<Real, 6>, 5> A{};
  for (int m = 0; m < 5; ++m) {
    for (int r = 0; r < 5; ++r) {
      const Real lo = r - 2 - 0.5, hi = r - 2 + 0.5;
      A[m][r] = (std::pow(hi, m + 1) - std::pow(lo, m + 1)) / (m + 1);
    }
    A[m][5] = std::pow(zeta, m);
  }
  // Gauss-Jordan with partial pivoting on the 5x5 system A w = z^m
  for (int c = 0; c < 5; ++c) {
    int piv = c;
    for (int r = c + 1; r < 5; ++r)
      if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
    std::swap(A[c], A[piv]);
    for (int r = 0; r < 5; ++r) {
      if (r == c) continue;
      const Real f = A[r][c] / A[c][c];
      for (int k = c; k < 6; ++k) A[r][k] -= f * A[c][k];
    }
  }
  std::array<Real, 5> w{};
  for (int r = 0; r < 5; ++r) w[r] = A[r][5] / A[r][r];
  return w;
}

}  // namespace detail

/// Method-of-lines WENO5 discretization with SSPRK3 stepping.
template <GridType G>
class WenoSolver {
public:
  WenoSolver(const G& grid, VelocityModel model, WenoOptions opts = {})
      : grid_(grid), model_(std::move(model)), opts_(opts) {
    if (model_dim(model_) != G::dim) throw std::invalid_argument("WenoSolver: model dimension mismatch");
    if (grid.nx() < 5 || (G::dim == 2 && grid.ny() < 5))
      throw std::invalid_argument("WenoSolver: need at least 5 cells per dimension");
    build_velocity_tables();
  }

  const G& grid() const { return grid_; }

  /// Largest step with CFL <= cfl_fine on this grid.
  Real stable_dt() const {
    const auto sb = speed_bound(model_);
    Real rate = 0.0;
    if constexpr (G::dim == 1) rate = sb.ax / grid_.h();
    else rate = sb.ax / grid_.hx() + sb.by / grid_.hy();
    return rate > 0.0 ? opts_.cfl_fine / rate : 0.0;
  }

  /// du/dt = -div(v u) in flux form.
  void rhs(std::span<const Real> u, Real t, std::span<Real> out) {
    std::fill(out.begin(), out.end(), 0.0);
    if constexpr (G::dim == 1) {
      sweep_1d(u, t, out);
    } else {
      sweep_x(u, t, out);
      sweep_y(u, t, out);
    }
  }

  /// One Shu-Osher SSPRK3 step.
  void step(std::vector<Real>& u, Real t, Real dt) {
    const std::size_t n = u.size();
    k_.resize(n);
    u1_.resize(n);
    u2_.resize(n);
    rhs(u, t, k_);
    for (std::size_t c = 0; c < n; ++c) u1_[c] = u[c] + dt * k_[c];
    rhs(u1_, t + dt, k_);
    for (std::size_t c = 0; c < n; ++c) u2_[c] = 0.75 * u[c] + 0.25 * (u1_[c] + dt * k_[c]);
    rhs(u2_, t + 0.5 * dt, k_);
    for (std::size_t c = 0; c < n; ++c) u[c] = (u[c] + 2.0 * (u2_[c] + dt * k_[c])) / 3.0;
  }

  /// Advances `n_steps` snapshots spaced exactly `coarse_dt` apart, substepping
  /// each interval with dt = coarse_dt / ceil(coarse_dt / stable_dt).
  std::vector<CellField<G>> solve(const CellField<G>& u0, Real coarse_dt, int n_steps) {
    if (!(u0.grid == grid_)) throw ShapeError("WenoSolver::solve: grid mismatch");
    std::vector<CellField<G>> snaps;
    snaps.reserve(static_cast<std::size_t>(n_steps) + 1);
    snaps.push_back(u0);
    if (n_steps <= 0) return snaps;
    const Real dts = stable_dt();
    const int nsub = dts > 0.0 ? std::max(1, static_cast<int>(std::ceil(coarse_dt / dts - 1e-12))) : 1;
    const Real dt = coarse_dt / nsub;
    std::vector<Real> u = u0.values;
    for (int m = 0; m < n_steps; ++m) {
      const Real t_start = u0.time + m * coarse_dt;
      for (int k = 0; k < nsub; ++k) step(u, t_start + k * dt, dt);
      snaps.emplace_back(grid_, u, u0.time + (m + 1) * coarse_dt);
    }
    return snaps;
  }

private:
  // Velocity normal to each face; for models of the form v(x) g(t) the
  // spatial part is tabulated once and scaled by g(t).
  bool separable_ = true;
  std::vector<Real> ax_;  // x faces [quad][j][f]
  std::vector<Real> by_;  // y faces [quad][f][i]
  std::vector<Real> qpts_{0.0};
  std::vector<Real> qwts_{1.0};
  std::vector<std::array<Real, 5>> qinterp_;

  Real time_factor(Real t) const {
    if (const auto* s = std::get_if<Swirl2D>(&model_)) return std::cos(std::numbers::pi * t / s->period);
    return 1.0;
  }

  void build_velocity_tables() {
    separable_ = !std::holds_alternative<VariableSin1D>(model_);
    if constexpr (G::dim == 2) {
      if (opts_.quadrature == FluxQuadrature::gauss3) {
        const Real g = 0.5 * std::sqrt(0.6);
        qpts_ = {-g, 0.0, g};
        qwts_ = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
      }
      for (Real z : qpts_) qinterp_.push_back(detail::point_from_averages(z));
      const int nx = grid_.nx(), ny = grid_.ny();
      const std::size_t nq = qpts_.size();
      ax_.assign(nq * grid_.size(), 0.0);
      by_.assign(nq * grid_.size(), 0.0);
      // tabulate at t = 0, where the swirl time factor is one
      for (std::size_t q = 0; q < nq; ++q) {
        for (int j = 0; j < ny; ++j)
          for (int f = 0; f < nx; ++f)
            ax_[q * grid_.size() + grid_.index(f, j)] =
                velocity_at(model_, grid_.face_x(f), grid_.center_y(j) + qpts_[q] * grid_.hy(), 0.0).a;
        for (int f = 0; f < ny; ++f)
          for (int i = 0; i < nx; ++i)
            by_[q * grid_.size() + grid_.index(i, f)] =
                *velocity_at(model_, grid_.center_x(i) + qpts_[q] * grid_.hx(), grid_.face_y(f), 0.0).b;
      }
    } else {
      ax_.assign(grid_.size(), 0.0);
      if (separable_)
        for (int f = 0; f < grid_.n; ++f) ax_[f] = velocity_at(model_, grid_.face(f), std::nullopt, 0.0).a;
    }
  }

  void sweep_1d(std::span<const Real> u, Real t, std::span<Real> out) requires(G::dim == 1) {
    const int n = grid_.n;
    const Real inv_h = 1.0 / grid_.h();
    flux_.resize(n);
    auto at = [&](long k) { return u[static_cast<std::size_t>(wrap_index(k, n))]; };
    for (int f = 0; f < n; ++f) {
      const Real a = separable_ ? ax_[f] : velocity_at(model_, grid_.face(f), std::nullopt, t).a;
      const Real s = a >= 0.0 ? weno5_edge(at(f - 3), at(f - 2), at(f - 1), at(f), at(f + 1))
                              : weno5_edge(at(f + 2), at(f + 1), at(f), at(f - 1), at(f - 2));
      flux_[f] = a * s;
    }
    for (int i = 0; i < n; ++i) out[i] -= (flux_[wrap_index(i + 1, n)] - flux_[i]) * inv_h;
  }

  // Face states along x for every row, then transverse quadrature.
  void sweep_x(std::span<const Real> u, Real t, std::span<Real> out) requires(G::dim == 2) {
    const int nx = grid_.nx(), ny = grid_.ny();
    const Real g = time_factor(t);
    const Real inv_h = 1.0 / grid_.hx();
    const std::size_t N = grid_.size();
    face_minus_.resize(N);
    face_plus_.resize(N);
    flux_.assign(N, 0.0);
    for (int j = 0; j < ny; ++j) {
      const Real* row = u.data() + static_cast<std::size_t>(j) * nx;
      auto at = [&](long k) { return row[wrap_index(k, nx)]; };
      for (int f = 0; f < nx; ++f) {
        face_minus_[grid_.index(f, j)] = weno5_edge(at(f - 3), at(f - 2), at(f - 1), at(f), at(f + 1));
        face_plus_[grid_.index(f, j)] = weno5_edge(at(f + 2), at(f + 1), at(f), at(f - 1), at(f - 2));
      }
    }
    for (std::size_t q = 0; q < qpts_.size(); ++q) {
      const Real* vel = ax_.data() + q * N;
      for (int j = 0; j < ny; ++j) {
        for (int f = 0; f < nx; ++f) {
          const std::size_t c = grid_.index(f, j);
          const Real a = vel[c] * g;
          const auto& src = a >= 0.0 ? face_minus_ : face_plus_;
          Real s;
          if (qpts_.size() == 1) {
            s = src[c];
          } else {
            s = 0.0;
            for (int r = 0; r < 5; ++r) s += qinterp_[q][r] * src[grid_.index(f, static_cast<int>(wrap_index(j + r - 2, ny)))];
          }
          flux_[c] += qwts_[q] * a * s;
        }
      }
    }
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        out[grid_.index(i, j)] -= (flux_[grid_.index(static_cast<int>(wrap_index(i + 1, nx)), j)] - flux_[grid_.index(i, j)]) * inv_h;
  }

  void sweep_y(std::span<const Real> u, Real t, std::span<Real> out) requires(G::dim == 2) {
    const int nx = grid_.nx(), ny = grid_.ny();
    const Real g = time_factor(t);
    const Real inv_h = 1.0 / grid_.hy();
    const std::size_t N = grid_.size();
    face_minus_.resize(N);
    face_plus_.resize(N);
    flux_.assign(N, 0.0);
    for (int i = 0; i < nx; ++i) {
      auto at = [&](long k) { return u[static_cast<std::size_t>(wrap_index(k, ny)) * nx + i]; };
      for (int f = 0; f < ny; ++f) {
        face_minus_[grid_.index(i, f)] = weno5_edge(at(f - 3), at(f - 2), at(f - 1), at(f), at(f + 1));
        face_plus_[grid_.index(i, f)] = weno5_edge(at(f + 2), at(f + 1), at(f), at(f - 1), at(f - 2));
      }
    }
    for (std::size_t q = 0; q < qpts_.size(); ++q) {
      const Real* vel = by_.data() + q * N;
      for (int f = 0; f < ny; ++f) {
        for (int i = 0; i < nx; ++i) {
          const std::size_t c = grid_.index(i, f);
          const Real b = vel[c] * g;
          const auto& src = b >= 0.0 ? face_minus_ : face_plus_;
          Real s;
          if (qpts_.size() == 1) {
            s = src[c];
          } else {
            s = 0.0;
            for (int r = 0; r < 5; ++r) s += qinterp_[q][r] * src[grid_.index(static_cast<int>(wrap_index(i + r - 2, nx)), f)];
          }
          flux_[c] += qwts_[q] * b * s;
        }
      }
    }
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        out[grid_.index(i, j)] -= (flux_[grid_.index(i, static_cast<int>(wrap_index(j + 1, ny)))] - flux_[grid_.index(i, j)]) * inv_h;
  }

  G grid_;
  VelocityModel model_;
  WenoOptions opts_;
  std::vector<Real> k_, u1_, u2_, flux_, face_minus_, face_plus_;
};

/// Time derivative of the cell averages.
template <GridType G>
CellField<G> rhs(const CellField<G>& u, const VelocityModel& model, Real t, WenoOptions opts = {}) {
  WenoSolver<G> solver(u.grid, model, opts);
  CellField<G> out(u.grid, t);
  solver.rhs(u.values, t, out.values);
  return out;
}

/// Generic Shu-Osher SSPRK3 step for y' = f(y, t) on a vector state.
template <class F>
std::vector<Real> ssprk3(const std::vector<Real>& y, Real t, Real dt, F&& f) {
  const std::size_t n = y.size();
  std::vector<Real> k = f(y, t);
  std::vector<Real> y1(n), y2(n), out(n);
  for (std::size_t c = 0; c < n; ++c) y1[c] = y[c] + dt * k[c];
  k = f(y1, t + dt);
  for (std::size_t c = 0; c < n; ++c) y2[c] = 0.75 * y[c] + 0.25 * (y1[c] + dt * k[c]);
  k = f(y2, t + 0.5 * dt);
  for (std::size_t c = 0; c < n; ++c) out[c] = (y[c] + 2.0 * (y2[c] + dt * k[c])) / 3.0;
  return out;
}

template <GridType G>
CellField<G> ssprk3_step(const CellField<G>& u, const VelocityModel& model, Real t, Real dt, WenoOptions opts = {}) {
  WenoSolver<G> solver(u.grid, model, opts);
  CellField<G> out = u;
  solver.step(out.values, t, dt);
  out.time = t + dt;
  return out;
}

/// Reference trajectory sampled every coarse_dt (n_coarse_steps + 1 snapshots).
template <GridType G>
std::vector<CellField<G>> solve_reference(const CellField<G>& u0, const VelocityModel& model, Real t0, Real coarse_dt,
                                          int n_coarse_steps, WenoOptions opts = {}) {
  WenoSolver<G> solver(u0.grid, model, opts);
  CellField<G> start = u0;
  start.time = t0;
  return solver.solve(start, coarse_dt, n_coarse_steps);
}

}  // namespace mlsl
