#pragma once
/// @file benchmark.hpp
/// @brief Test cases, exact solutions and the benchmark battery that writes
/// the error, mass, profile and contour series of an experiment.
///
/// Output layout of run_benchmark(dir):
///   errors_<method>_<cfl>.csv        mean per-step MSE over test samples
///   mass_<sample>.csv                ML relative mass deviation per step
///   profile_<step>.csv               1D: x, reference, ml, weno, classic_sl<K>
///   contour/<method>/contour_<t>.csv 2D snapshots (method: reference, ml, weno)
///   cut_<step>.csv                   2D: row nearest y = 0.5, columns as profile
///   errors_<method>_generalization.csv
///   final_time.txt                   per-sample final-time MSE table
///   report.json                      summary of all of the above

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "simulate.hpp"

namespace mlsl {

inline std::string cfl_tag(Real cfl) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", cfl);
  return buf;
}

template <GridType G>
struct TestCase {
  InitialCondition profile;
  CellField<G> u0;  // coarse
  Real dt = 0.0;
  int n_steps = 0;
  std::vector<CellField<G>> reference;  // coarsened fine WENO5, per step
};

/// Steps and step size of a test run at `cfl`; a configured horizon wins
/// over the step count.
template <GridType G>
std::pair<int, Real> test_steps(const ExperimentConfig& c, Real cfl) {
  Real dt = dt_for_cfl(c.velocity, c.coarse<G>(), cfl);
  int n = c.eval.n_steps;
  if (c.eval.t_final) {
    n = std::max(1, static_cast<int>(std::ceil(*c.eval.t_final / dt - 1e-9)));
    dt = *c.eval.t_final / n;
  }
  return {n, dt};
}

template <GridType G>
TestCase<G> make_test_case(const ExperimentConfig& c, IcKind kind, std::uint64_t seed, Real cfl) {
  TestCase<G> tc;
  Rng rng = substream(seed, 0);
  tc.profile = sample_profile(kind, rng, c.grid<G>());
  std::tie(tc.n_steps, tc.dt) = test_steps<G>(c, cfl);
  const auto u0f = cell_averages(tc.profile, c.grid<G>());
  tc.reference = coarse_reference(u0f, c.velocity, tc.dt, tc.n_steps, c.factor, c.weno);
  tc.u0 = tc.reference.front();
  return tc;
}

/// Closed-form cell averages at time t where the flow admits one: rigid
/// translation for constant velocities, the initial state at whole periods
/// of the swirl.
template <GridType G>
std::optional<CellField<G>> exact_solution(const VelocityModel& model, const InitialCondition& profile, Real t,
                                           const G& grid) {
  if (const auto* m = std::get_if<Constant1D>(&model)) {
    if constexpr (G::dim == 1) return cell_averages(translate_profile(profile, m->a * t, 0.0, grid), grid);
  } else if (const auto* m = std::get_if<Constant2D>(&model)) {
    if constexpr (G::dim == 2) return cell_averages(translate_profile(profile, m->a * t, m->b * t, grid), grid);
  } else if (const auto* m = std::get_if<Swirl2D>(&model)) {
    const Real cycles = t / m->period;
    if (std::abs(cycles - std::round(cycles)) < 1e-9) return cell_averages(profile, grid);
  }
  return std::nullopt;
}

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

struct MeanSeries {
  std::vector<Real> time;
  std::vector<Real> sum;
  int count = 0;

  void add(const std::vector<Real>& t, const std::vector<Real>& v) {
    if (sum.empty()) {
      time = t;
      sum.assign(v.size(), 0.0);
    }
    if (v.size() != sum.size()) throw ShapeError("benchmark: series length mismatch");
    for (std::size_t k = 0; k < v.size(); ++k) sum[k] += v[k];
    ++count;
  }
  std::vector<Real> mean() const {
    std::vector<Real> out = sum;
    for (Real& v : out) v /= std::max(count, 1);
    return out;
  }
  Real mean_over_steps() const {
    const auto m = mean();
    if (m.size() < 2) return 0.0;
    return std::accumulate(m.begin() + 1, m.end(), 0.0) / static_cast<Real>(m.size() - 1);
  }
};

inline std::size_t row_nearest(const Grid2D& g, Real y) {
  int best = 0;
  for (int j = 1; j < g.ny(); ++j)
    if (std::abs(g.center_y(j) - y) < std::abs(g.center_y(best) - y)) best = j;
  return static_cast<std::size_t>(best);
}

template <GridType G>
const CellField<G>& snapshot_at(const RunRecord<G>& r, int step) {
  for (std::size_t k = 0; k < r.snapshot_steps.size(); ++k)
    if (r.snapshot_steps[k] == step) return r.snapshots[k];
  throw std::out_of_range("benchmark: no snapshot at step " + std::to_string(step));
}

}  // namespace detail

/// Final-time MSE of the ML model, same-grid WENO5 and a finer WENO5 run,
/// per test sample.
struct FinalTimeTable {
  std::string error_kind;  // "exact" or "reference"
  std::string fine_label;
  std::string coarse_label;
  std::vector<std::array<Real, 3>> rows;  // weno_fine, weno, ml
};

inline void write_final_time_table(const std::string& path, const FinalTimeTable& t) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %-22s %-22s %-22s\n", "Samples\\Method", ("WENO5 (" + t.fine_label + ")").c_str(),
                ("WENO5 (" + t.coarse_label + ")").c_str(), "ML-based SL FV");
  out << line;
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    std::snprintf(line, sizeof line, "%-14s %-22.3E %-22.3E %-22.3E\n", ("Sample = " + std::to_string(k)).c_str(),
                  t.rows[k][0], t.rows[k][1], t.rows[k][2]);
    out << line;
  }
  out << "# final-time MSE vs " << (t.error_kind == "exact" ? "exact cell averages" : "coarsened fine WENO5 reference")
      << '\n';
}

inline std::string grid_label(const Grid1D& g) { return std::to_string(g.n); }
inline std::string grid_label(const Grid2D& g) { return std::to_string(g.nx()) + "x" + std::to_string(g.ny()); }

template <GridType G>
G refine(const G& g, int f) {
  if constexpr (G::dim == 1) return Grid1D(g.x_lo, g.x_hi, g.n * f);
  else return Grid2D(g.x_lo, g.x_hi, g.y_lo, g.y_hi, g.nx() * f, g.ny() * f);
}

/// Runs the whole battery with a trained network and writes it under dir.
template <GridType G>
nlohmann::json run_benchmark(const ExperimentConfig& c, const Network& net, const std::string& dir,
                             std::optional<std::pair<Real, Real>> trained_cfl = std::nullopt) {
  detail::ensure_dir(dir);
  nlohmann::json report;
  report["example"] = c.name;
  report["coarse_grid"] = grid_to_json(c.coarse<G>());
  report["samples"] = c.eval.n_samples;
  const Real cfl0 = c.eval.cfl.front();
  const auto sample_seed = [&](int k) { return c.eval.seed + static_cast<std::uint64_t>(k); };

  FinalTimeTable table;
  table.coarse_label = grid_label(c.coarse<G>());
  table.fine_label = grid_label(refine(c.coarse<G>(), c.eval.fine_factor));

  for (Real cfl : c.eval.cfl) {
    const std::string tag = cfl_tag(cfl);
    std::map<std::string, detail::MeanSeries> errors;
    std::map<std::string, Real> max_mass, ms_per_step;
    for (int k = 0; k < c.eval.n_samples; ++k) {
      const auto tc = make_test_case<G>(c, c.ic, sample_seed(k), cfl);
      const bool first = (k == 0 && cfl == cfl0);
      SimOptions<G> opt;
      opt.reference = &tc.reference;
      opt.trained_cfl = trained_cfl;
      opt.n_substeps = c.n_substeps;
      opt.weno = c.weno;
      opt.snapshot_stride = first ? 1 : 0;

      std::vector<RunRecord<G>> runs;
      runs.push_back(simulate_ml(net, tc.u0, c.velocity, tc.dt, tc.n_steps, opt));
      runs.push_back(simulate_weno_coarse(tc.u0, c.velocity, tc.dt, tc.n_steps, opt));
      if constexpr (G::dim == 1) runs.push_back(simulate_classic_sl(tc.u0, c.velocity, tc.dt, tc.n_steps, c.eval.classic_k, opt));
      for (const auto& r : runs) {
        errors[r.method].add(r.time, r.mse);
        max_mass[r.method] = std::max(max_mass[r.method], r.max_mass_deviation());
        ms_per_step[r.method] += std::accumulate(r.step_ms.begin(), r.step_ms.end(), 0.0) /
                                 std::max<std::size_t>(r.steps(), 1) / c.eval.n_samples;
      }
      if (cfl == cfl0) {
        write_series_csv(dir + "/mass_" + std::to_string(k) + ".csv", runs[0].time, runs[0].mass_deviation());

        // final-time row
        const Real t_end = tc.u0.time + tc.n_steps * tc.dt;
        const auto exact = exact_solution(c.velocity, tc.profile, t_end, c.coarse<G>());
        const G fine_grid = refine(c.coarse<G>(), c.eval.fine_factor);
        auto u0_fine = cell_averages(tc.profile, fine_grid);
        const auto fine_run = solve_reference(u0_fine, c.velocity, 0.0, tc.dt, tc.n_steps, c.weno);
        std::array<Real, 3> row{};
        if (exact) {
          table.error_kind = "exact";
          row[0] = mse(fine_run.back(), *exact_solution(c.velocity, tc.profile, t_end, fine_grid));
          row[1] = mse(runs[1].final_state, *exact);
          row[2] = mse(runs[0].final_state, *exact);
        } else {
          table.error_kind = "reference";
          row[0] = mse(coarsen(fine_run.back(), c.eval.fine_factor), tc.reference.back());
          row[1] = mse(runs[1].final_state, tc.reference.back());
          row[2] = mse(runs[0].final_state, tc.reference.back());
        }
        table.rows.push_back(row);
      }
      if (first) {
        std::vector<int> steps = c.eval.profile_steps;
        if (steps.empty()) steps = {0, tc.n_steps / 2, tc.n_steps};
        for (int s : steps) {
          if (s < 0 || s > tc.n_steps) continue;
          const auto& ref = tc.reference[s];
          if constexpr (G::dim == 1) {
            std::vector<std::pair<std::string, const CellField<Grid1D>*>> cols{{"reference", &ref}};
            for (const auto& r : runs) cols.push_back({r.method, &detail::snapshot_at(r, s)});
            write_profile_csv(dir + "/profile_" + std::to_string(s) + ".csv", cols);
          } else {
            const std::string t = cfl_tag(ref.time);
            detail::ensure_dir(dir + "/contour/reference");
            write_contour_csv(dir + "/contour/reference/contour_" + t + ".csv", ref);
            for (const auto& r : runs) {
              detail::ensure_dir(dir + "/contour/" + r.method);
              write_contour_csv(dir + "/contour/" + r.method + "/contour_" + t + ".csv", detail::snapshot_at(r, s));
            }
            // 1D cut along the row nearest y = 0.5
            const auto j = detail::row_nearest(ref.grid, 0.5);
            const Grid1D line(ref.grid.x_lo, ref.grid.x_hi, ref.grid.nx());
            auto cut = [&](const CellField<Grid2D>& f) {
              CellField<Grid1D> out(line, f.time);
              for (int i = 0; i < line.n; ++i) out.values[i] = f.values[ref.grid.index(i, static_cast<int>(j))];
              return out;
            };
            std::vector<CellField<Grid1D>> cuts{cut(ref)};
            for (const auto& r : runs) cuts.push_back(cut(detail::snapshot_at(r, s)));
            std::vector<std::pair<std::string, const CellField<Grid1D>*>> cols{{"reference", &cuts[0]}};
            for (std::size_t m = 0; m < runs.size(); ++m) cols.push_back({runs[m].method, &cuts[m + 1]});
            write_profile_csv(dir + "/cut_" + std::to_string(s) + ".csv", cols);
          }
        }
      }
    }
    nlohmann::json entry;
    for (auto& [method, series] : errors) {
      write_series_csv(dir + "/errors_" + method + "_" + tag + ".csv", series.time, series.mean());
      entry["mean_mse"][method] = series.mean_over_steps();
      entry["final_mse"][method] = series.mean().back();
      entry["max_mass_deviation"][method] = max_mass[method];
      entry["ms_per_step"][method] = ms_per_step[method];
    }
    entry["ratio_ml_over_weno"] = entry["mean_mse"]["ml"].get<Real>() / entry["mean_mse"]["weno"].get<Real>();
    report["cfl"][tag] = entry;
  }
  report["headline_cfl"] = cfl0;
  report["ratio_ml_over_weno"] = report["cfl"][cfl_tag(cfl0)]["ratio_ml_over_weno"];

  if (c.eval.generalization) {
    detail::MeanSeries ml_err, weno_err;
    bool finite = true;
    Real growth = 0.0;
    for (int k = 0; k < c.eval.n_samples; ++k) {
      const auto tc = make_test_case<G>(c, *c.eval.generalization, sample_seed(k) + 7919, cfl0);
      SimOptions<G> opt;
      opt.reference = &tc.reference;
      opt.n_substeps = c.n_substeps;
      opt.weno = c.weno;
      try {
        const auto ml = simulate_ml(net, tc.u0, c.velocity, tc.dt, tc.n_steps, opt);
        ml_err.add(ml.time, ml.mse);
        growth = std::max(growth, *std::max_element(ml.max_norm.begin(), ml.max_norm.end()) / ml.max_norm.front());
      } catch (const SimulationError&) {
        finite = false;
      }
      const auto we = simulate_weno_coarse(tc.u0, c.velocity, tc.dt, tc.n_steps, opt);
      weno_err.add(we.time, we.mse);
    }
    nlohmann::json g;
    g["initial_condition"] = ic_name(*c.eval.generalization);
    g["finite"] = finite;
    if (finite) {
      write_series_csv(dir + "/errors_ml_generalization.csv", ml_err.time, ml_err.mean());
      g["mean_mse"]["ml"] = ml_err.mean_over_steps();
      g["max_norm_growth"] = growth;
    }
    write_series_csv(dir + "/errors_weno_generalization.csv", weno_err.time, weno_err.mean());
    g["mean_mse"]["weno"] = weno_err.mean_over_steps();
    report["generalization"] = g;
  }

  write_final_time_table(dir + "/final_time.txt", table);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows) rows.push_back({{"weno_fine", r[0]}, {"weno", r[1]}, {"ml", r[2]}});
  report["final_time"] = {{"error_kind", table.error_kind}, {"fine_grid", table.fine_label}, {"rows", rows}};

  std::ofstream out(dir + "/report.json", std::ios::trunc);
  if (!out) throw IoError("cannot write report in '" + dir + "'");
  out << report.dump(2) << '\n';
  return report;
}

}  // namespace mlsl
