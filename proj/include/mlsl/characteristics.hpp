#pragma once
/// @file characteristics.hpp
/// @brief Analytic velocity models and backward characteristic tracing.

#include <cmath>
#include <iostream>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>

#include "core.hpp"

namespace mlsl {

struct Constant1D {
  Real a = 1.0;
};

/// a(x, t) = sin(x + t)
struct VariableSin1D {};

struct Constant2D {
  Real a = 1.0;
  Real b = 1.0;
};

/// Reversing deformational flow on the unit square with period T.
struct Swirl2D {
  Real period = 2.0;
};

using VelocityModel = std::variant<Constant1D, VariableSin1D, Constant2D, Swirl2D>;

inline int model_dim(const VelocityModel& m) {
  return std::holds_alternative<Constant1D>(m) || std::holds_alternative<VariableSin1D>(m) ? 1 : 2;
}

inline std::string model_name(const VelocityModel& m) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Constant1D>) return "const1d";
        else if constexpr (std::is_same_v<T, VariableSin1D>) return "sin1d";
        else if constexpr (std::is_same_v<T, Constant2D>) return "const2d";
        else return "swirl2d";
      },
      m);
}

inline bool is_constant(const VelocityModel& m) {
  return std::holds_alternative<Constant1D>(m) || std::holds_alternative<Constant2D>(m);
}

struct Velocity {
  Real a = 0.0;
  std::optional<Real> b;
};

inline Velocity velocity_at(const VelocityModel& model, Real x, std::optional<Real> y, Real t) {
  using std::numbers::pi;
  if (y.has_value() != (model_dim(model) == 2))
    throw std::invalid_argument("velocity_at: coordinate count does not match model dimension");
  return std::visit(
      [&](const auto& m) -> Velocity {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Constant1D>) {
          return {m.a, std::nullopt};
        } else if constexpr (std::is_same_v<T, VariableSin1D>) {
          return {std::sin(x + t), std::nullopt};
        } else if constexpr (std::is_same_v<T, Constant2D>) {
          return {m.a, m.b};
        } else {
          const Real yy = *y;
          const Real sx = std::sin(pi * x);
          const Real sy = std::sin(pi * yy);
          const Real c = std::cos(pi * t / m.period);
          return {sx * sx * std::sin(2.0 * pi * yy) * c, -sy * sy * std::sin(2.0 * pi * x) * c};
        }
      },
      model);
}

/// Sup-norm bounds of each velocity component over space and time.
struct SpeedBound {
  Real ax = 0.0;
  Real by = 0.0;
};

inline SpeedBound speed_bound(const VelocityModel& model) {
  return std::visit(
      [](const auto& m) -> SpeedBound {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Constant1D>) return {std::abs(m.a), 0.0};
        else if constexpr (std::is_same_v<T, VariableSin1D>) return {1.0, 0.0};
        else if constexpr (std::is_same_v<T, Constant2D>) return {std::abs(m.a), std::abs(m.b)};
        else return {1.0, 1.0};
      },
      model);
}

/// Time step giving the requested CFL number on `grid`: the largest
/// per-axis Courant number |v_axis| dt / h_axis equals `cfl`.
inline Real dt_for_cfl(const VelocityModel& model, const Grid1D& g, Real cfl) {
  const auto sb = speed_bound(model);
  if (sb.ax == 0.0) throw std::invalid_argument("dt_for_cfl: zero velocity");
  return cfl * g.h() / sb.ax;
}

inline Real dt_for_cfl(const VelocityModel& model, const Grid2D& g, Real cfl) {
  const auto sb = speed_bound(model);
  const Real rate = std::max(sb.ax / g.hx(), sb.by / g.hy());
  if (rate == 0.0) throw std::invalid_argument("dt_for_cfl: zero velocity");
  return cfl / rate;
}

inline int default_substeps(Real cfl) { return static_cast<int>(std::ceil(cfl)) + 1; }

struct DeparturePoint {
  Real x = 0.0;
  std::optional<Real> y;
};

/// Integrates dx/dt = v(x, t) backward from t_end to t_end - dt with
/// classical RK4 on `n_substeps` equal substeps. Constant models use the
/// closed form.
inline DeparturePoint trace_backward(const VelocityModel& model, Real x_end, std::optional<Real> y_end, Real t_end,
                                     Real dt, int n_substeps) {
  if (!(dt >= 0.0)) throw std::invalid_argument("trace_backward: dt must be nonnegative");
  if (n_substeps < 1) throw std::invalid_argument("trace_backward: n_substeps must be positive");
  if (const auto* c = std::get_if<Constant1D>(&model)) return {x_end - c->a * dt, std::nullopt};
  if (const auto* c = std::get_if<Constant2D>(&model)) {
    if (!y_end) throw std::invalid_argument("trace_backward: 2D model needs y");
    return {x_end - c->a * dt, *y_end - c->b * dt};
  }

  const Real tau = dt / n_substeps;
  Real x = x_end;
  Real t = t_end;
  if (model_dim(model) == 1) {
    auto f = [&](Real xx, Real tt) { return velocity_at(model, xx, std::nullopt, tt).a; };
    for (int k = 0; k < n_substeps; ++k) {
      // stepping with negative increment
      const Real k1 = f(x, t);
      const Real k2 = f(x - 0.5 * tau * k1, t - 0.5 * tau);
      const Real k3 = f(x - 0.5 * tau * k2, t - 0.5 * tau);
      const Real k4 = f(x - tau * k3, t - tau);
      x -= tau / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t -= tau;
    }
    return {x, std::nullopt};
  }

  if (!y_end) throw std::invalid_argument("trace_backward: 2D model needs y");
  Real y = *y_end;
  auto f = [&](Real xx, Real yy, Real tt) { return velocity_at(model, xx, yy, tt); };
  for (int k = 0; k < n_substeps; ++k) {
    const auto v1 = f(x, y, t);
    const auto v2 = f(x - 0.5 * tau * v1.a, y - 0.5 * tau * *v1.b, t - 0.5 * tau);
    const auto v3 = f(x - 0.5 * tau * v2.a, y - 0.5 * tau * *v2.b, t - 0.5 * tau);
    const auto v4 = f(x - tau * v3.a, y - tau * *v3.b, t - tau);
    x -= tau / 6.0 * (v1.a + 2.0 * v2.a + 2.0 * v3.a + v4.a);
    y -= tau / 6.0 * (*v1.b + 2.0 * *v2.b + 2.0 * *v3.b + *v4.b);
    t -= tau;
  }
  return {x, y};
}

/// Normalized shifts of every left interface for the step ending at t_next.
inline ShiftField<Grid1D> shifts_1d(const VelocityModel& model, const Grid1D& grid, Real t_next, Real dt,
                                    int n_substeps) {
  if (model_dim(model) != 1) throw std::invalid_argument("shifts_1d: model is not one-dimensional");
  ShiftField<Grid1D> out(grid, dt);
  const Real h = grid.h();
  if (const auto* c = std::get_if<Constant1D>(&model)) {
    out.xi.assign(grid.size(), -c->a * dt / h);
    return out;
  }
  for (int i = 0; i < grid.n; ++i) {
    const Real xf = grid.face(i);
    out.xi[i] = (trace_backward(model, xf, std::nullopt, t_next, dt, n_substeps).x - xf) / h;
  }
  return out;
}

/// Normalized shifts of every lower-left cell corner for the step ending at t_next.
inline ShiftField<Grid2D> shifts_2d(const VelocityModel& model, const Grid2D& grid, Real t_next, Real dt,
                                    int n_substeps) {
  if (model_dim(model) != 2) throw std::invalid_argument("shifts_2d: model is not two-dimensional");
  ShiftField<Grid2D> out(grid, dt);
  if (const auto* c = std::get_if<Constant2D>(&model)) {
    out.xi.assign(grid.size(), -c->a * dt / grid.hx());
    out.eta.assign(grid.size(), -c->b * dt / grid.hy());
    return out;
  }
  for (int j = 0; j < grid.ny(); ++j) {
    for (int i = 0; i < grid.nx(); ++i) {
      const Real xf = grid.face_x(i);
      const Real yf = grid.face_y(j);
      const auto p = trace_backward(model, xf, yf, t_next, dt, n_substeps);
      out.xi[grid.index(i, j)] = (p.x - xf) / grid.hx();
      out.eta[grid.index(i, j)] = (*p.y - yf) / grid.hy();
    }
  }
  return out;
}

inline ShiftField<Grid1D> compute_shifts(const VelocityModel& m, const Grid1D& g, Real t_next, Real dt, int nsub) {
  return shifts_1d(m, g, t_next, dt, nsub);
}
inline ShiftField<Grid2D> compute_shifts(const VelocityModel& m, const Grid2D& g, Real t_next, Real dt, int nsub) {
  return shifts_2d(m, g, t_next, dt, nsub);
}

/// Warns once per call site when shifts leave the fixed stencil of
/// half-width s; returns whether they did.
template <GridType G>
bool warn_if_outside_stencil(const ShiftField<G>& sh, int s, const char* context) {
  const Real m = sh.max_abs();
  if (m >= s) {
    std::cerr << "warning: " << context << ": max |shift| = " << m << " >= stencil half-width " << s
              << "; the dependence region escapes the fixed stencil\n";
    return true;
  }
  return false;
}

}  // namespace mlsl
