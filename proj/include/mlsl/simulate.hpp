#pragma once
/// @file simulate.hpp
/// @brief Autoregressive ML rollouts, the baseline runners and CSV export.
///
/// CSV layouts:
///   series   step,time,value                    (errors_*, mass_*)
///   profile  x,<method>...                       (1D snapshot, one row per cell)
///   contour  line 1 "nx,ny", line 2 the sizes, then ny rows of nx values

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "characteristics.hpp"
#include "classic_sl.hpp"
#include "datagen.hpp"
#include "nnet.hpp"
#include "training.hpp"
#include "weno.hpp"

namespace mlsl {

class SimulationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

template <GridType G>
struct SimOptions {
  int snapshot_stride = 0;                              // 0 keeps only the final state
  const std::vector<CellField<G>>* reference = nullptr;  // per-step reference on the same grid
  std::optional<std::pair<Real, Real>> trained_cfl;      // warn outside this range
  int n_substeps = 0;                                   // characteristic tracing; 0 = default
  WenoOptions weno;
};

template <GridType G>
struct RunRecord {
  std::string method;
  nlohmann::json config = nlohmann::json::object();
  Real dt = 0.0;
  Real cfl = 0.0;
  std::vector<Real> time;     // n_steps + 1
  std::vector<Real> mass;     // n_steps + 1
  std::vector<Real> max_norm; // n_steps + 1
  std::vector<Real> mse;      // n_steps + 1 when a reference is given, else empty
  std::vector<Real> step_ms;  // n_steps + 1, entry 0 is zero
  std::vector<int> snapshot_steps;
  std::vector<CellField<G>> snapshots;
  CellField<G> final_state;

  std::size_t steps() const { return time.empty() ? 0 : time.size() - 1; }

  std::vector<Real> mass_deviation() const {
    std::vector<Real> out;
    for (Real m : mass) out.push_back(relative_mass_deviation(m, mass.front()));
    return out;
  }
  Real max_mass_deviation() const {
    Real d = 0.0;
    for (Real v : mass_deviation()) d = std::max(d, v);
    return d;
  }
  Real mean_mse() const {
    if (mse.size() < 2) return 0.0;
    Real acc = 0.0;
    for (std::size_t k = 1; k < mse.size(); ++k) acc += mse[k];
    return acc / static_cast<Real>(mse.size() - 1);
  }
};

/// Largest per-axis Courant number of a step dt on `g`.
inline Real cfl_of(const VelocityModel& m, const Grid1D& g, Real dt) { return dt * speed_bound(m).ax / g.h(); }
inline Real cfl_of(const VelocityModel& m, const Grid2D& g, Real dt) {
  const auto sb = speed_bound(m);
  return dt * std::max(sb.ax / g.hx(), sb.by / g.hy());
}

namespace detail {

template <GridType G>
class Recorder {
public:
  Recorder(RunRecord<G>& rec, const SimOptions<G>& opt, const CellField<G>& u0, int n_steps)
      : rec_(rec), opt_(opt), n_steps_(n_steps) {
    if (opt.reference && opt.reference->size() < static_cast<std::size_t>(n_steps) + 1)
      throw std::invalid_argument("simulate: reference shorter than the run");
    record(0, u0, 0.0);
  }

  void record(int step, const CellField<G>& u, Real ms) {
    if (!all_finite(u)) throw SimulationError(rec_.method + ": non-finite state at step " + std::to_string(step));
    rec_.time.push_back(u.time);
    rec_.mass.push_back(total_mass(u));
    rec_.max_norm.push_back(max_abs(u));
    rec_.step_ms.push_back(ms);
    if (opt_.reference) rec_.mse.push_back(mse(u, (*opt_.reference)[step]));
    if (opt_.snapshot_stride > 0 && (step % opt_.snapshot_stride == 0 || step == n_steps_)) {
      rec_.snapshot_steps.push_back(step);
      rec_.snapshots.push_back(u);
    }
    if (step == n_steps_) rec_.final_state = u;
  }

private:
  RunRecord<G>& rec_;
  const SimOptions<G>& opt_;
  int n_steps_;
};

inline Real elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<Real, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// ML-SL rollout: shifts from the velocity model, one network evaluation and
/// one coefficient application per step.
template <GridType G>
RunRecord<G> simulate_ml(const Network& net, const CellField<G>& u0, const VelocityModel& model, Real dt, int n_steps,
                         const SimOptions<G>& opt = {}) {
  if (net.spec.dim != G::dim || model_dim(model) != G::dim)
    throw std::invalid_argument("simulate_ml: dimension mismatch between network, model and grid");
  RunRecord<G> rec;
  rec.method = "ml";
  rec.dt = dt;
  rec.cfl = cfl_of(model, u0.grid, dt);
  if (opt.trained_cfl && (rec.cfl < opt.trained_cfl->first - 1e-12 || rec.cfl > opt.trained_cfl->second + 1e-12))
    std::cerr << "warning: simulate_ml: CFL " << rec.cfl << " outside trained range [" << opt.trained_cfl->first << ", "
              << opt.trained_cfl->second << "]\n";
  const int nsub = opt.n_substeps > 0 ? opt.n_substeps : default_substeps(rec.cfl);
  detail::Recorder<G> recorder(rec, opt, u0, n_steps);
  CellField<G> u = u0;
  for (int m = 0; m < n_steps; ++m) {
    const auto t0 = std::chrono::steady_clock::now();
    const Real t_next = u0.time + (m + 1) * dt;
    const auto sh = compute_shifts(model, u.grid, t_next, dt, nsub);
    u = apply_coefficients(u, forward(net, u, sh));
    u.time = t_next;
    recorder.record(m + 1, u, detail::elapsed_ms(t0));
  }
  if (n_steps == 0) rec.final_state = u0;
  return rec;
}

/// Same-grid WENO5 baseline, substepped to its stable CFL inside each step.
template <GridType G>
RunRecord<G> simulate_weno_coarse(const CellField<G>& u0, const VelocityModel& model, Real dt, int n_steps,
                                  const SimOptions<G>& opt = {}) {
  RunRecord<G> rec;
  rec.method = "weno";
  rec.dt = dt;
  rec.cfl = cfl_of(model, u0.grid, dt);
  WenoSolver<G> solver(u0.grid, model, opt.weno);
  detail::Recorder<G> recorder(rec, opt, u0, n_steps);
  CellField<G> u = u0;
  for (int m = 0; m < n_steps; ++m) {
    const auto t0 = std::chrono::steady_clock::now();
    u = solver.solve(u, dt, 1).back();
    u.time = u0.time + (m + 1) * dt;
    recorder.record(m + 1, u, detail::elapsed_ms(t0));
  }
  if (n_steps == 0) rec.final_state = u0;
  return rec;
}

/// Classical SL FV rollout of order K + 1 with traced shifts (1D).
inline RunRecord<Grid1D> simulate_classic_sl(const CellField<Grid1D>& u0, const VelocityModel& model, Real dt,
                                             int n_steps, int K, const SimOptions<Grid1D>& opt = {}) {
  RunRecord<Grid1D> rec;
  rec.method = "classic_sl" + std::to_string(K);
  rec.dt = dt;
  rec.cfl = cfl_of(model, u0.grid, dt);
  const int nsub = opt.n_substeps > 0 ? opt.n_substeps : default_substeps(rec.cfl);
  detail::Recorder<Grid1D> recorder(rec, opt, u0, n_steps);
  CellField<Grid1D> u = u0;
  for (int m = 0; m < n_steps; ++m) {
    const auto t0 = std::chrono::steady_clock::now();
    const Real t_next = u0.time + (m + 1) * dt;
    u = sl_step_exact(u, shifts_1d(model, u.grid, t_next, dt, nsub), K);
    u.time = t_next;
    recorder.record(m + 1, u, detail::elapsed_ms(t0));
  }
  if (n_steps == 0) rec.final_state = u0;
  return rec;
}

/// Fine-grid WENO5 run averaged down to the coarse grid at every step.
template <GridType G>
std::vector<CellField<G>> coarse_reference(const CellField<G>& u0_fine, const VelocityModel& model, Real dt,
                                           int n_steps, int factor, WenoOptions weno = {}) {
  const auto fine = solve_reference(u0_fine, model, u0_fine.time, dt, n_steps, weno);
  std::vector<CellField<G>> out;
  out.reserve(fine.size());
  for (const auto& f : fine) out.push_back(coarsen(f, factor));
  return out;
}

// --- CSV ----------------------------------------------------------------------

inline std::string format_real(Real v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_series_csv(const std::string& path, const std::vector<Real>& time, const std::vector<Real>& values) {
  if (time.size() != values.size()) throw ShapeError("write_series_csv: length mismatch");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "step,time,value\n";
  for (std::size_t k = 0; k < values.size(); ++k) out << k << ',' << format_real(time[k]) << ',' << format_real(values[k]) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

struct Series {
  std::vector<int> step;
  std::vector<Real> time;
  std::vector<Real> value;
};

inline Series read_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line) || line != "step,time,value") throw FormatError("'" + path + "': bad series header");
  Series s;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string a, b, c;
    if (!std::getline(row, a, ',') || !std::getline(row, b, ',') || !std::getline(row, c))
      throw FormatError("'" + path + "': malformed row '" + line + "'");
    s.step.push_back(std::stoi(a));
    s.time.push_back(std::stod(b));
    s.value.push_back(std::stod(c));
  }
  return s;
}

/// One row per cell: x followed by one column per named field.
inline void write_profile_csv(const std::string& path, const std::vector<std::pair<std::string, const CellField<Grid1D>*>>& cols) {
  if (cols.empty()) throw std::invalid_argument("write_profile_csv: no columns");
  const Grid1D& g = cols.front().second->grid;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << 'x';
  for (const auto& c : cols) out << ',' << c.first;
  out << '\n';
  for (int i = 0; i < g.n; ++i) {
    out << format_real(g.center(i));
    for (const auto& c : cols) out << ',' << format_real(c.second->values[i]);
    out << '\n';
  }
}

inline void write_contour_csv(const std::string& path, const CellField<Grid2D>& u) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "nx,ny\n" << u.grid.nx() << ',' << u.grid.ny() << '\n';
  for (int j = 0; j < u.grid.ny(); ++j) {
    for (int i = 0; i < u.grid.nx(); ++i) out << (i ? "," : "") << format_real(u.values[u.grid.index(i, j)]);
    out << '\n';
  }
}

template <GridType G>
void write_run_csvs(const RunRecord<G>& rec, const std::string& dir, const std::string& tag) {
  if (!rec.mse.empty()) write_series_csv(dir + "/errors_" + rec.method + "_" + tag + ".csv", rec.time, rec.mse);
  write_series_csv(dir + "/mass_" + rec.method + "_" + tag + ".csv", rec.time, rec.mass_deviation());
}

/// Total variation over the periodic grid (sum of jumps along each axis).
template <GridType G>
Real total_variation(const CellField<G>& u) {
  Real tv = 0.0;
  const auto& g = u.grid;
  for (std::size_t c = 0; c < g.size(); ++c) {
    tv += std::abs(u.values[shifted_cell(g, c, 1, 0)] - u.values[c]);
    if constexpr (G::dim == 2) tv += std::abs(u.values[shifted_cell(g, c, 0, 1)] - u.values[c]);
  }
  return tv;
}

}  // namespace mlsl
