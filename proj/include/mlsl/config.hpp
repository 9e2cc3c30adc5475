#pragma once
/// @file config.hpp
/// @brief JSON experiment configuration shared by every CLI subcommand.
/// Unknown keys are rejected by name.

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "datagen.hpp"
#include "json_io.hpp"
#include "nnet.hpp"
#include "training.hpp"

namespace mlsl {

inline constexpr const char* kConfigHelp = R"(Config keys (JSON object; unknown keys are rejected):
  name                 string   experiment label
  dim                  1 | 2
  velocity             {kind: const1d, a} | {kind: sin1d} | {kind: const2d, a, b} | {kind: swirl2d, period}
  grid                 fine grid; 1D {x_lo, x_hi, n}, 2D {x_lo, x_hi, y_lo, y_hi, nx, ny}
  factor               fine-to-coarse coarsening factor per axis
  initial_condition    square1d | triangle_square1d | square_var1d | two_squares1d |
                       square2d | cosine_bell2d | two_bells2d
  seed                 master seed (data, initialization, shuffling)
  out                  output directory
  data.n_trajectories  number of training trajectories
  data.n_steps         coarse steps per trajectory (ignored when data.t_final is set)
  data.t_final         optional horizon; steps = ceil(t_final / dt)
  data.cfl_min/max     per-trajectory CFL range
  data.s               stencil half-width
  data.cfl_fine        WENO5 reference CFL on the fine grid (default 0.4)
  data.quadrature      midpoint | gauss3 (2D WENO5 face quadrature)
  data.n_substeps      RK4 substeps for characteristic tracing (0 = ceil(CFL) + 1)
  network.n_layers     convolution layers (default 6)
  network.filters      filters per hidden layer (default 32)
  network.kernel       kernel size, odd (default 5)
  network.normalize_input  divide the U input by max|U| (default false)
  network.donor_cell_baseline  learn a correction to donor-cell coefficients (default false)
  network.upstream_frame  read U and place coefficients relative to the upstream cell (default false)
  train.unroll         unrolled steps per window (default 4)
  train.batch          windows per optimizer step (default 8)
  train.epochs         epochs
  train.lr             Adam learning rate (default 1e-3)
  train.schedule       constant | cosine
  train.val_fraction   held-out fraction of trajectories (default 0.1)
  train.checkpoint_every  epochs between checkpoints (0 = none)
  train.clip_norm      global gradient-norm clip (<= 0 disables; default 1.0)
  eval.n_samples       test samples per CFL (default 10)
  eval.seed            seed of the test initial conditions
  eval.n_steps         steps per test rollout (ignored when eval.t_final is set)
  eval.t_final         optional test horizon
  eval.cfl             list of test CFL numbers
  eval.generalization  optional initial condition for the generalization runs
  eval.profile_steps   steps at which profiles / contours are written
  eval.fine_factor     refinement of the finer WENO5 comparison run (default 4)
  eval.classic_k       reconstruction order of the classical SL baseline (1D, default 2)
)";

struct EvalSettings {
  int n_samples = 10;
  std::uint64_t seed = 1000;
  int n_steps = 256;
  std::optional<Real> t_final;
  std::vector<Real> cfl{0.3, 0.6, 0.9};
  std::optional<IcKind> generalization;
  std::vector<int> profile_steps;
  int fine_factor = 4;
  int classic_k = 2;
};

struct ExperimentConfig {
  std::string name = "experiment";
  int dim = 1;
  VelocityModel velocity = Constant1D{1.0};
  Grid1D grid1;
  Grid2D grid2;
  int factor = 8;
  IcKind ic = IcKind::square1d;
  std::uint64_t seed = 0;
  std::string out = "out";

  int n_trajectories = 10;
  int n_steps = 128;
  std::optional<Real> t_final;
  Real cfl_min = 0.3;
  Real cfl_max = 1.8;
  int s = 2;
  WenoOptions weno;
  int n_substeps = 0;

  TrainConfig train;
  EvalSettings eval;

  template <GridType G>
  const G& grid() const {
    if constexpr (G::dim == 1) return grid1;
    else return grid2;
  }

  template <GridType G>
  G coarse() const {
    return coarse_grid(grid<G>(), factor);
  }

  template <GridType G>
  DatasetConfig<G> dataset_config() const {
    DatasetConfig<G> dc;
    dc.velocity = velocity;
    dc.fine_grid = grid<G>();
    dc.factor = factor;
    dc.ic = ic;
    dc.n_trajectories = n_trajectories;
    dc.n_steps = n_steps;
    dc.t_final = t_final;
    dc.cfl_min = cfl_min;
    dc.cfl_max = cfl_max;
    dc.s = s;
    dc.seed = seed;
    dc.weno = weno;
    dc.n_substeps = n_substeps;
    return dc;
  }
};

namespace detail {

template <class T>
T get_as(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + where + "." + key + "'");
  }
}

template <class T>
void read_opt(const json& j, const char* key, const std::string& where, T& dst) {
  if (j.contains(key)) dst = get_as<T>(j, key, where);
}

inline void read_opt_real(const json& j, const char* key, const std::string& where, std::optional<Real>& dst) {
  if (j.contains(key) && !j.at(key).is_null()) dst = get_as<Real>(j, key, where);
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  using detail::get_as;
  using detail::read_opt;
  check_keys(j, {"name", "dim", "velocity", "grid", "factor", "initial_condition", "seed", "out", "data", "network", "train",
                 "eval"},
             "config");
  ExperimentConfig c;
  read_opt(j, "name", "config", c.name);
  c.dim = get_as<int>(j, "dim", "config");
  if (c.dim != 1 && c.dim != 2) throw ConfigError("bad value for 'config.dim': must be 1 or 2");
  if (!j.contains("velocity")) throw ConfigError("missing key 'config.velocity'");
  c.velocity = velocity_from_json(j.at("velocity"));
  if (model_dim(c.velocity) != c.dim) throw ConfigError("velocity kind does not match 'config.dim'");
  if (!j.contains("grid")) throw ConfigError("missing key 'config.grid'");
  try {
    if (c.dim == 1) {
      check_keys(j.at("grid"), {"x_lo", "x_hi", "n"}, "grid");
      c.grid1 = grid_from_json<Grid1D>(j.at("grid"));
    } else {
      check_keys(j.at("grid"), {"x_lo", "x_hi", "y_lo", "y_hi", "nx", "ny"}, "grid");
      c.grid2 = grid_from_json<Grid2D>(j.at("grid"));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value in 'config.grid': ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("bad value in 'config.grid': ") + e.what());
  }
  read_opt(j, "factor", "config", c.factor);
  if (j.contains("initial_condition")) c.ic = ic_from_name(get_as<std::string>(j, "initial_condition", "config"));
  if (ic_dim(c.ic) != c.dim) throw ConfigError("'config.initial_condition' does not match 'config.dim'");
  read_opt(j, "seed", "config", c.seed);
  read_opt(j, "out", "config", c.out);
  try {
    if (c.dim == 1) coarse_grid(c.grid1, c.factor);
    else coarse_grid(c.grid2, c.factor);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("bad value for 'config.factor': ") + e.what());
  }

  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, {"n_trajectories", "n_steps", "t_final", "cfl_min", "cfl_max", "s", "cfl_fine", "quadrature", "n_substeps"},
               "data");
    read_opt(d, "n_trajectories", "data", c.n_trajectories);
    read_opt(d, "n_steps", "data", c.n_steps);
    detail::read_opt_real(d, "t_final", "data", c.t_final);
    read_opt(d, "cfl_min", "data", c.cfl_min);
    read_opt(d, "cfl_max", "data", c.cfl_max);
    read_opt(d, "s", "data", c.s);
    read_opt(d, "cfl_fine", "data", c.weno.cfl_fine);
    read_opt(d, "n_substeps", "data", c.n_substeps);
    if (d.contains("quadrature")) {
      const auto q = get_as<std::string>(d, "quadrature", "data");
      if (q == "midpoint") c.weno.quadrature = FluxQuadrature::midpoint;
      else if (q == "gauss3") c.weno.quadrature = FluxQuadrature::gauss3;
      else throw ConfigError("bad value for 'data.quadrature': " + q);
    }
  }
  if (c.n_trajectories < 0 || c.n_steps < 0) throw ConfigError("bad value in 'data': counts must be nonnegative");
  if (!(c.cfl_min > 0.0) || c.cfl_max < c.cfl_min) throw ConfigError("bad value in 'data': need 0 < cfl_min <= cfl_max");
  if (c.s < 0) throw ConfigError("bad value for 'data.s'");

  if (j.contains("network")) {
    const auto& n = j.at("network");
    check_keys(n,
               {"n_layers", "filters", "kernel", "normalize_input", "donor_cell_baseline", "upstream_frame"},
               "network");
    read_opt(n, "n_layers", "network", c.train.spec.n_layers);
    read_opt(n, "filters", "network", c.train.spec.filters);
    read_opt(n, "kernel", "network", c.train.spec.kernel);
    read_opt(n, "normalize_input", "network", c.train.spec.normalize_input);
    read_opt(n, "donor_cell_baseline", "network", c.train.spec.donor_cell_baseline);
    read_opt(n, "upstream_frame", "network", c.train.spec.upstream_frame);
  }
  c.train.spec.dim = c.dim;
  c.train.spec.s = c.s;
  try {
    c.train.spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("bad value in 'network': ") + e.what());
  }

  c.train.seed = c.seed;
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, {"unroll", "batch", "epochs", "lr", "schedule", "val_fraction", "checkpoint_every", "clip_norm"}, "train");
    read_opt(t, "unroll", "train", c.train.unroll);
    read_opt(t, "batch", "train", c.train.batch);
    read_opt(t, "epochs", "train", c.train.epochs);
    read_opt(t, "lr", "train", c.train.lr);
    read_opt(t, "val_fraction", "train", c.train.val_fraction);
    read_opt(t, "checkpoint_every", "train", c.train.checkpoint_every);
    read_opt(t, "clip_norm", "train", c.train.clip_norm);
    if (t.contains("schedule")) {
      const auto s = get_as<std::string>(t, "schedule", "train");
      if (s == "constant") c.train.schedule = LrSchedule::constant;
      else if (s == "cosine") c.train.schedule = LrSchedule::cosine;
      else throw ConfigError("bad value for 'train.schedule': " + s);
    }
  }
  try {
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("bad value in 'train': ") + e.what());
  }

  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    check_keys(e, {"n_samples", "seed", "n_steps", "t_final", "cfl", "generalization", "profile_steps", "fine_factor",
                   "classic_k"},
               "eval");
    read_opt(e, "n_samples", "eval", c.eval.n_samples);
    read_opt(e, "seed", "eval", c.eval.seed);
    read_opt(e, "n_steps", "eval", c.eval.n_steps);
    detail::read_opt_real(e, "t_final", "eval", c.eval.t_final);
    read_opt(e, "cfl", "eval", c.eval.cfl);
    read_opt(e, "profile_steps", "eval", c.eval.profile_steps);
    read_opt(e, "fine_factor", "eval", c.eval.fine_factor);
    read_opt(e, "classic_k", "eval", c.eval.classic_k);
    if (e.contains("generalization") && !e.at("generalization").is_null()) {
      c.eval.generalization = ic_from_name(get_as<std::string>(e, "generalization", "eval"));
      if (ic_dim(*c.eval.generalization) != c.dim)
        throw ConfigError("'eval.generalization' does not match 'config.dim'");
    }
  }
  if (c.eval.n_samples < 1 || c.eval.n_steps < 0 || c.eval.cfl.empty() || c.eval.fine_factor < 1)
    throw ConfigError("bad value in 'eval'");
  for (Real v : c.eval.cfl)
    if (!(v > 0.0)) throw ConfigError("bad value in 'eval.cfl': CFL numbers must be positive");
  if (c.eval.classic_k < 0 || c.eval.classic_k > 2) throw ConfigError("bad value for 'eval.classic_k'");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed JSON in '" + path + "': " + e.what());
  }
  return parse_config(j);
}

}  // namespace mlsl
