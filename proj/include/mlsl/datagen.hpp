#pragma once
/// @file datagen.hpp
/// @brief Random initial conditions, fine reference trajectories, block
/// coarsening and the SLTD1 dataset container.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "characteristics.hpp"
#include "container.hpp"
#include "json_io.hpp"
#include "rng.hpp"
#include "weno.hpp"

namespace mlsl {

// ---------------------------------------------------------------------------
// Initial conditions

/// Periodic box of the given height on [center - width/2, center + width/2].
struct Box1D {
  Real height, width, center;
};

/// Isosceles triangle: peak `height` at `center`, zero at center +- width/2.
struct Hat1D {
  Real height, width, center;
};

/// Axis-aligned square of side `width`.
struct Box2D {
  Real height, width, cx, cy;
};

/// Cosine bell 0.5 (1 + cos(pi r)), r = min(1, 6 |x - c|).
struct Bell2D {
  Real cx, cy;
};

using Shape = std::variant<Box1D, Hat1D, Box2D, Bell2D>;

enum class IcKind { square1d, triangle_square1d, square_var1d, square2d, cosine_bell2d, two_squares1d, two_bells2d };

inline const char* ic_name(IcKind k) {
  switch (k) {
    case IcKind::square1d: return "square1d";
    case IcKind::triangle_square1d: return "triangle_square1d";
    case IcKind::square_var1d: return "square_var1d";
    case IcKind::square2d: return "square2d";
    case IcKind::cosine_bell2d: return "cosine_bell2d";
    case IcKind::two_squares1d: return "two_squares1d";
    case IcKind::two_bells2d: return "two_bells2d";
  }
  return "?";
}

inline IcKind ic_from_name(const std::string& s) {
  for (auto k : {IcKind::square1d, IcKind::triangle_square1d, IcKind::square_var1d, IcKind::square2d,
                 IcKind::cosine_bell2d, IcKind::two_squares1d, IcKind::two_bells2d})
    if (s == ic_name(k)) return k;
  throw ConfigError("unknown initial condition kind '" + s + "'");
}

inline int ic_dim(IcKind k) {
  return (k == IcKind::square2d || k == IcKind::cosine_bell2d || k == IcKind::two_bells2d) ? 2 : 1;
}

/// A sampled initial condition: the sum of its shapes.
struct InitialCondition {
  IcKind kind = IcKind::square1d;
  std::vector<Shape> shapes;
};

namespace detail {

/// Length of [a, b] intersected with the periodic copies of [lo, hi].
inline Real periodic_overlap(Real a, Real b, Real lo, Real hi, Real period) {
  Real total = 0.0;
  for (int k = -2; k <= 2; ++k) {
    const Real l = std::max(a, lo + k * period);
    const Real r = std::min(b, hi + k * period);
    if (r > l) total += r - l;
  }
  return total;
}

/// Integral of a hat (peak 1 at 0, support [-w2, w2]) over (-inf, t].
inline Real hat_cdf(Real t, Real w2) {
  if (t <= -w2) return 0.0;
  if (t <= 0.0) return (t + w2) * (t + w2) / (2.0 * w2);
  if (t <= w2) return w2 - (w2 - t) * (w2 - t) / (2.0 * w2);
  return w2;
}

inline Real hat_integral(Real a, Real b, const Hat1D& s, Real period) {
  const Real w2 = 0.5 * s.width;
  Real total = 0.0;
  for (int k = -2; k <= 2; ++k) {
    const Real c = s.center + k * period;
    total += hat_cdf(b - c, w2) - hat_cdf(a - c, w2);
  }
  return s.height * total;
}

inline Real periodic_delta(Real d, Real period) { return d - period * std::round(d / period); }

inline Real bell_value(const Bell2D& b, Real x, Real y, Real lx, Real ly) {
  const Real dx = periodic_delta(x - b.cx, lx);
  const Real dy = periodic_delta(y - b.cy, ly);
  const Real r = std::min(1.0, 6.0 * std::sqrt(dx * dx + dy * dy));
  return 0.5 * (1.0 + std::cos(std::numbers::pi * r));
}

}  // namespace detail

/// Exact cell averages of the 1D shapes.
inline CellField<Grid1D> cell_averages(const InitialCondition& ic, const Grid1D& g) {
  CellField<Grid1D> u(g);
  const Real L = g.length();
  for (int i = 0; i < g.n; ++i) {
    const Real a = g.face(i), b = g.face(i + 1);
    Real acc = 0.0;
    for (const auto& sh : ic.shapes) {
      if (const auto* bx = std::get_if<Box1D>(&sh)) {
        acc += bx->height * detail::periodic_overlap(a, b, bx->center - 0.5 * bx->width, bx->center + 0.5 * bx->width, L);
      } else if (const auto* hat = std::get_if<Hat1D>(&sh)) {
        acc += detail::hat_integral(a, b, *hat, L);
      } else {
        throw std::invalid_argument("cell_averages: 2D shape on a 1D grid");
      }
    }
    u.values[i] = acc / g.h();
  }
  return u;
}

/// Cell averages of the 2D shapes: exact for boxes, 4x4 Gauss for bells.
inline CellField<Grid2D> cell_averages(const InitialCondition& ic, const Grid2D& g) {
  static constexpr std::array<Real, 4> gx = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563,
                                             0.8611363115940526};
  static constexpr std::array<Real, 4> gw = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461,
                                             0.3478548451374538};
  CellField<Grid2D> u(g);
  const Real lx = g.x_hi - g.x_lo, ly = g.y_hi - g.y_lo;
  for (int j = 0; j < g.ny(); ++j) {
    for (int i = 0; i < g.nx(); ++i) {
      Real acc = 0.0;
      for (const auto& sh : ic.shapes) {
        if (const auto* bx = std::get_if<Box2D>(&sh)) {
          const Real ox = detail::periodic_overlap(g.face_x(i), g.face_x(i + 1), bx->cx - 0.5 * bx->width,
                                                   bx->cx + 0.5 * bx->width, lx);
          const Real oy = detail::periodic_overlap(g.face_y(j), g.face_y(j + 1), bx->cy - 0.5 * bx->width,
                                                   bx->cy + 0.5 * bx->width, ly);
          acc += bx->height * ox * oy / g.cell_volume();
        } else if (const auto* bell = std::get_if<Bell2D>(&sh)) {
          Real q = 0.0;
          for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b)
              q += gw[a] * gw[b] *
                   detail::bell_value(*bell, g.center_x(i) + 0.5 * g.hx() * gx[a], g.center_y(j) + 0.5 * g.hy() * gx[b],
                                      lx, ly);
          acc += 0.25 * q;
        } else {
          throw std::invalid_argument("cell_averages: 1D shape on a 2D grid");
        }
      }
      u.values[g.index(i, j)] = acc;
    }
  }
  return u;
}

/// Draws the shape parameters of `kind` on the domain of `g`.
template <GridType G>
InitialCondition sample_profile(IcKind kind, Rng& rng, const G& g) {
  if (ic_dim(kind) != G::dim) throw std::invalid_argument("sample_profile: initial condition dimension mismatch");
  InitialCondition ic{kind, {}};
  if constexpr (G::dim == 1) {
    const Real L = g.length();
    auto center = [&] { return uniform(rng, g.x_lo, g.x_hi); };
    switch (kind) {
      case IcKind::square1d:
        ic.shapes.push_back(Box1D{uniform(rng, 0.1, 1.0), uniform(rng, 0.2, 0.4), center()});
        break;
      case IcKind::triangle_square1d: {
        const Real c = center();
        ic.shapes.push_back(Hat1D{uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.3), c});
        // opposite half of the period, so the two waves never overlap
        ic.shapes.push_back(Box1D{uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.3), c + 0.5 * L});
        break;
      }
      case IcKind::square_var1d:
        ic.shapes.push_back(Box1D{uniform(rng, 0.1, 1.0), uniform(rng, 2.5, 3.5), center()});
        break;
      case IcKind::two_squares1d: {
        const Real c = center();
        ic.shapes.push_back(Box1D{uniform(rng, 0.1, 1.0), uniform(rng, 0.2, 0.4), c});
        ic.shapes.push_back(Box1D{uniform(rng, 0.1, 1.0), uniform(rng, 0.2, 0.4), c + 0.5 * L});
        break;
      }
      default:
        break;
    }
  } else {
    switch (kind) {
      case IcKind::square2d:
        ic.shapes.push_back(Box2D{uniform(rng, 0.5, 1.0), uniform(rng, 0.3, 0.5), uniform(rng, g.x_lo, g.x_hi),
                                  uniform(rng, g.y_lo, g.y_hi)});
        break;
      case IcKind::cosine_bell2d:
        ic.shapes.push_back(Bell2D{uniform(rng, 0.25, 0.75), uniform(rng, 0.25, 0.75)});
        break;
      case IcKind::two_bells2d: {
        const Bell2D first{uniform(rng, 0.25, 0.75), uniform(rng, 0.25, 0.75)};
        Bell2D second{};
        // disjoint supports (radius 1/6 each)
        do second = {uniform(rng, 0.25, 0.75), uniform(rng, 0.25, 0.75)};
        while (std::hypot(second.cx - first.cx, second.cy - first.cy) < 1.0 / 3.0);
        ic.shapes.push_back(first);
        ic.shapes.push_back(second);
        break;
      }
      default:
        break;
    }
  }
  return ic;
}

/// Moves every shape by (dx, dy), wrapping centres back into the domain.
template <GridType G>
InitialCondition translate_profile(InitialCondition ic, Real dx, Real dy, const G& g) {
  auto wrap = [](Real c, Real lo, Real hi) {
    const Real L = hi - lo;
    Real r = std::fmod(c - lo, L);
    if (r < 0.0) r += L;
    return lo + r;
  };
  for (auto& sh : ic.shapes) {
    std::visit(
        [&](auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Box1D> || std::is_same_v<T, Hat1D>) {
            s.center = wrap(s.center + dx, g.x_lo, g.x_hi);
          } else if constexpr (G::dim == 2) {
            s.cx = wrap(s.cx + dx, g.x_lo, g.x_hi);
            s.cy = wrap(s.cy + dy, g.y_lo, g.y_hi);
          }
        },
        sh);
  }
  return ic;
}

template <GridType G>
CellField<G> sample_initial_condition(IcKind kind, std::uint64_t seed, const G& g) {
  Rng rng = substream(seed, 0);
  return cell_averages(sample_profile(kind, rng, g), g);
}

// ---------------------------------------------------------------------------
// Coarsening

template <GridType G>
G coarse_grid(const G& fine, int r) {
  if (r < 1) throw std::invalid_argument("coarsen: factor must be positive");
  if constexpr (G::dim == 1) {
    if (fine.n % r != 0) throw std::invalid_argument("coarsen: cell count not divisible by factor");
    return Grid1D(fine.x_lo, fine.x_hi, fine.n / r);
  } else {
    if (fine.n_x % r != 0 || fine.n_y % r != 0)
      throw std::invalid_argument("coarsen: cell counts not divisible by factor");
    return Grid2D(fine.x_lo, fine.x_hi, fine.y_lo, fine.y_hi, fine.n_x / r, fine.n_y / r);
  }
}

/// Block means over r (1D) or r x r (2D) fine cells.
template <GridType G>
CellField<G> coarsen(const CellField<G>& fine, int r) {
  const G cg = coarse_grid(fine.grid, r);
  CellField<G> out(cg, fine.time);
  if constexpr (G::dim == 1) {
    for (int i = 0; i < cg.n; ++i) {
      Real acc = 0.0;
      for (int k = 0; k < r; ++k) acc += fine.values[static_cast<std::size_t>(i) * r + k];
      out.values[i] = acc / r;
    }
  } else {
    for (int j = 0; j < cg.ny(); ++j)
      for (int i = 0; i < cg.nx(); ++i) {
        Real acc = 0.0;
        for (int b = 0; b < r; ++b)
          for (int a = 0; a < r; ++a) acc += fine.values[fine.grid.index(i * r + a, j * r + b)];
        out.values[cg.index(i, j)] = acc / (r * r);
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

template <GridType G>
struct DatasetConfig {
  VelocityModel velocity = Constant1D{1.0};
  G fine_grid;
  int factor = 8;
  IcKind ic = IcKind::square1d;
  int n_trajectories = 1;
  int n_steps = 0;
  /// When set, overrides n_steps: each trajectory runs to exactly t_final
  /// with dt shrunk so that the CFL never exceeds the drawn value.
  std::optional<Real> t_final;
  Real t0 = 0.0;
  Real cfl_min = 0.3;
  Real cfl_max = 1.8;
  int s = 2;
  std::uint64_t seed = 0;
  WenoOptions weno;
  int n_substeps = 0;  // 0: ceil(CFL) + 1
};

template <GridType G>
struct Trajectory {
  Real cfl = 0.0;
  Real coarse_dt = 0.0;
  std::vector<CellField<G>> snapshots;
  std::vector<ShiftField<G>> shifts;  // shifts[m] maps snapshot m to m + 1
};

template <GridType G>
struct Dataset {
  VelocityModel velocity = Constant1D{1.0};
  G fine_grid;
  G coarse_grid;
  int factor = 1;
  Real cfl_min = 0.0, cfl_max = 0.0;
  int s = 2;
  std::uint64_t seed = 0;
  std::string ic;
  std::vector<Trajectory<G>> trajectories;
};

/// Number of coarse steps and their size for one trajectory.
template <GridType G>
std::pair<int, Real> trajectory_steps(const DatasetConfig<G>& cfg, const G& cg, Real cfl) {
  Real dt = dt_for_cfl(cfg.velocity, cg, cfl);
  int n = cfg.n_steps;
  if (cfg.t_final) {
    n = std::max(1, static_cast<int>(std::ceil(*cfg.t_final / dt - 1e-9)));
    dt = *cfg.t_final / n;
  }
  return {n, dt};
}

template <GridType G>
Trajectory<G> build_trajectory(const DatasetConfig<G>& cfg, std::uint64_t index) {
  const G cg = coarse_grid(cfg.fine_grid, cfg.factor);
  Rng rng = substream(cfg.seed, index);
  const auto profile = sample_profile(cfg.ic, rng, cfg.fine_grid);
  Trajectory<G> tr;
  tr.cfl = uniform(rng, cfg.cfl_min, cfg.cfl_max);
  const auto [n_steps, dt] = trajectory_steps(cfg, cg, tr.cfl);
  tr.coarse_dt = dt;
  CellField<G> u0 = cell_averages(profile, cfg.fine_grid);
  u0.time = cfg.t0;
  const auto fine = solve_reference(u0, cfg.velocity, cfg.t0, dt, n_steps, cfg.weno);
  const int nsub = cfg.n_substeps > 0 ? cfg.n_substeps : default_substeps(tr.cfl);
  tr.snapshots.reserve(fine.size());
  for (const auto& f : fine) tr.snapshots.push_back(coarsen(f, cfg.factor));
  for (int m = 0; m < n_steps; ++m)
    tr.shifts.push_back(compute_shifts(cfg.velocity, cg, cfg.t0 + (m + 1) * dt, dt, nsub));
  return tr;
}

template <GridType G>
Dataset<G> build_dataset(const DatasetConfig<G>& cfg) {
  if (model_dim(cfg.velocity) != G::dim || ic_dim(cfg.ic) != G::dim)
    throw std::invalid_argument("build_dataset: dimension mismatch between grid, velocity and initial condition");
  if (cfg.n_trajectories < 0 || cfg.n_steps < 0) throw std::invalid_argument("build_dataset: negative counts");
  if (!(cfg.cfl_min > 0.0) || cfg.cfl_max < cfg.cfl_min) throw std::invalid_argument("build_dataset: bad CFL range");
  Dataset<G> ds;
  ds.velocity = cfg.velocity;
  ds.fine_grid = cfg.fine_grid;
  ds.coarse_grid = coarse_grid(cfg.fine_grid, cfg.factor);
  ds.factor = cfg.factor;
  ds.cfl_min = cfg.cfl_min;
  ds.cfl_max = cfg.cfl_max;
  ds.s = cfg.s;
  ds.seed = cfg.seed;
  ds.ic = ic_name(cfg.ic);
  bool warned = false;
  for (int k = 0; k < cfg.n_trajectories; ++k) {
    ds.trajectories.push_back(build_trajectory(cfg, static_cast<std::uint64_t>(k)));
    for (const auto& sh : ds.trajectories.back().shifts) {
      if (warned) break;
      warned = warn_if_outside_stencil(sh, cfg.s, "build_dataset");
    }
  }
  return ds;
}

inline constexpr const char* kDatasetTag = "SLTD";

template <GridType G>
std::vector<std::uint8_t> encode_dataset(const Dataset<G>& ds) {
  json meta;
  meta["format"] = "SLTD1";
  meta["dim"] = G::dim;
  meta["velocity"] = velocity_to_json(ds.velocity);
  meta["fine_grid"] = grid_to_json(ds.fine_grid);
  meta["coarse_grid"] = grid_to_json(ds.coarse_grid);
  meta["factor"] = ds.factor;
  meta["cfl_range"] = {ds.cfl_min, ds.cfl_max};
  meta["stencil_half_width"] = ds.s;
  meta["seed"] = ds.seed;
  meta["initial_condition"] = ds.ic;
  json trajs = json::array();
  for (const auto& tr : ds.trajectories) {
    if (tr.shifts.size() + 1 != tr.snapshots.size())
      throw std::invalid_argument("encode_dataset: shifts must number snapshots - 1");
    trajs.push_back({{"cfl", tr.cfl},
                     {"coarse_dt", tr.coarse_dt},
                     {"t0", tr.snapshots.empty() ? 0.0 : tr.snapshots.front().time},
                     {"n_snapshots", tr.snapshots.size()}});
  }
  meta["trajectories"] = trajs;

  ByteWriter w = begin_container(kDatasetTag, meta);
  for (const auto& tr : ds.trajectories)
    for (const auto& s : tr.snapshots) w.put_f64s(s.values);
  for (const auto& tr : ds.trajectories)
    for (const auto& sh : tr.shifts) {
      w.put_f64s(sh.xi);
      if constexpr (G::dim == 2) w.put_f64s(sh.eta);
    }
  finish_container(w);
  return std::move(w.bytes());
}

template <GridType G>
Dataset<G> decode_dataset(std::span<const std::uint8_t> bytes) {
  std::span<const std::uint8_t> body;
  const json meta = open_container(kDatasetTag, bytes, body);
  Dataset<G> ds;
  try {
    if (meta.at("dim").get<int>() != G::dim) throw FormatError("dataset: dimension mismatch");
    ds.velocity = velocity_from_json(meta.at("velocity"));
    ds.fine_grid = grid_from_json<G>(meta.at("fine_grid"));
    ds.coarse_grid = grid_from_json<G>(meta.at("coarse_grid"));
    ds.factor = meta.at("factor").get<int>();
    ds.cfl_min = meta.at("cfl_range").at(0).get<Real>();
    ds.cfl_max = meta.at("cfl_range").at(1).get<Real>();
    ds.s = meta.at("stencil_half_width").get<int>();
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.ic = meta.at("initial_condition").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset: bad metadata: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("dataset: bad metadata: ") + e.what());
  }

  const auto& trajs = meta.at("trajectories");
  const std::size_t cells = ds.coarse_grid.size();
  std::size_t expected = 0;
  for (const auto& t : trajs) {
    const auto n = t.at("n_snapshots").get<std::size_t>();
    if (n == 0) throw FormatError("dataset: empty trajectory");
    expected += n * cells + (n - 1) * cells * G::dim;
  }
  if (body.size() != expected * 8) throw FormatError("dataset: payload length does not match metadata");

  ByteReader r(body);
  for (const auto& t : trajs) {
    Trajectory<G> tr;
    tr.cfl = t.at("cfl").get<Real>();
    tr.coarse_dt = t.at("coarse_dt").get<Real>();
    const Real t0 = t.at("t0").get<Real>();
    const auto n = t.at("n_snapshots").get<std::size_t>();
    for (std::size_t m = 0; m < n; ++m) {
      CellField<G> s(ds.coarse_grid, t0 + static_cast<Real>(m) * tr.coarse_dt);
      r.get_f64s(s.values);
      tr.snapshots.push_back(std::move(s));
    }
    ds.trajectories.push_back(std::move(tr));
  }
  for (auto& tr : ds.trajectories) {
    for (std::size_t m = 0; m + 1 < tr.snapshots.size(); ++m) {
      ShiftField<G> sh(ds.coarse_grid, tr.coarse_dt);
      r.get_f64s(sh.xi);
      if constexpr (G::dim == 2) r.get_f64s(sh.eta);
      tr.shifts.push_back(std::move(sh));
    }
  }
  return ds;
}

template <GridType G>
void write_dataset(const Dataset<G>& ds, const std::string& path) {
  write_file(path, encode_dataset(ds));
}

template <GridType G>
Dataset<G> read_dataset(const std::string& path) {
  const auto bytes = read_file(path);
  return decode_dataset<G>(bytes);
}

/// Spatial dimension recorded in a dataset file (validates the envelope).
inline int dataset_dim(const std::string& path) {
  const auto bytes = read_file(path);
  std::span<const std::uint8_t> body;
  const json meta = open_container(kDatasetTag, bytes, body);
  return meta.at("dim").get<int>();
}

}  // namespace mlsl
