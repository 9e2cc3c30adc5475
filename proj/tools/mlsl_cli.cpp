// Command-line driver: gen-data, train, simulate, evaluate, benchmark.
//
// Every subcommand reads a JSON experiment config (--config) and writes under
// its output directory:
//   <out>/dataset.sltd         gen-data
//   <out>/model.slmd           train (plus train_log.jsonl, checkpoints/)
//   <out>/simulate/            simulate (errors_/mass_ CSVs, final profile)
//   <out>/evaluate/            evaluate (evaluation.json, errors/mass CSVs)
//   <out>/benchmark/           benchmark (see benchmark.hpp)
//
// Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlsl/mlsl.hpp"

namespace fs = std::filesystem;
using namespace mlsl;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> cfl;
  std::optional<int> steps;
  std::optional<std::string> model;
  std::optional<std::string> data;
  std::optional<int> epochs;
  bool train = false;
  bool resume = false;
  std::string example;
};

ExperimentConfig resolve_config(const Overrides& o) {
  std::string path = o.config;
  if (path.empty() && !o.example.empty()) {
    for (const std::string& cand : {"configs/" + o.example + ".json", o.example + ".json"})
      if (fs::exists(cand)) {
        path = cand;
        break;
      }
    // short ids: "ex1" selects configs/ex1_*.json
    if (path.empty() && fs::is_directory("configs"))
      for (const auto& e : fs::directory_iterator("configs"))
        if (e.path().extension() == ".json" && e.path().stem().string().rfind(o.example + "_", 0) == 0) {
          path = e.path().string();
          break;
        }
    if (path.empty()) throw ConfigError("no config found for example '" + o.example + "'");
  }
  if (path.empty()) throw ConfigError("no config given (use --config <file>)");
  ExperimentConfig c = load_config(path);
  if (o.seed) {
    c.seed = *o.seed;
    c.train.seed = *o.seed;
  }
  if (o.out) c.out = *o.out;
  if (o.epochs) {
    if (*o.epochs < 0) throw ConfigError("bad value for '--epochs'");
    c.train.epochs = *o.epochs;
  }
  if (o.cfl && !(*o.cfl > 0.0)) throw ConfigError("bad value for '--cfl': must be positive");
  if (o.steps && *o.steps < 0) throw ConfigError("bad value for '--steps': must be nonnegative");
  return c;
}

std::string data_path(const ExperimentConfig& c, const Overrides& o) {
  return o.data ? *o.data : c.out + "/dataset.sltd";
}
std::string model_path(const ExperimentConfig& c, const Overrides& o) {
  return o.model ? *o.model : c.out + "/model.slmd";
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

template <GridType G>
Dataset<G> generate(const ExperimentConfig& c, const std::string& path) {
  fs::create_directories(fs::path(path).parent_path().empty() ? fs::path(".") : fs::path(path).parent_path());
  auto ds = build_dataset(c.dataset_config<G>());
  write_dataset(ds, path);
  std::cout << "dataset: " << ds.trajectories.size() << " trajectories -> " << path << '\n';
  return ds;
}

template <GridType G>
Network train_model(const ExperimentConfig& c, const Overrides& o) {
  const std::string dpath = data_path(c, o);
  Dataset<G> ds = fs::exists(dpath) ? read_dataset<G>(dpath) : generate<G>(c, dpath);
  TrainConfig tc = c.train;
  tc.log_path = c.out + "/train_log.jsonl";
  tc.checkpoint_dir = c.out + "/checkpoints";
  fs::create_directories(c.out);

  std::optional<ResumePoint> rp;
  if (o.resume) {
    std::optional<fs::path> latest;
    int best = -1;
    if (fs::exists(tc.checkpoint_dir))
      for (const auto& e : fs::directory_iterator(tc.checkpoint_dir)) {
        const auto name = e.path().stem().string();
        if (name.rfind("epoch_", 0) != 0) continue;
        const int n = std::stoi(name.substr(6));
        if (n > best) best = n, latest = e.path();
      }
    if (!latest) throw std::runtime_error("--resume: no checkpoint in '" + tc.checkpoint_dir + "'");
    rp = resume_from(load_model_file(latest->string()));
    std::cout << "resuming from " << latest->string() << '\n';
  }
  auto res = train(tc, ds, rp ? &*rp : nullptr, [](const EpochRecord& e) {
    std::printf("epoch %d  train %.4e  val %.4e  (%.0f ms)\n", e.epoch, e.train_loss, e.val_loss, e.wall_ms);
    std::fflush(stdout);
  });
  auto info = checkpoint_info(static_cast<int>(res.log.size()), res.initial_val_loss, res.initial_train_loss, res.log);
  info["cfl_range"] = {ds.cfl_min, ds.cfl_max};
  info["example"] = c.name;
  const std::string mpath = model_path(c, o);
  save_model(res.net, mpath, nullptr, info);
  std::cout << "model -> " << mpath << '\n';
  return res.net;
}

std::optional<std::pair<Real, Real>> trained_range(const ModelFile& mf) {
  if (mf.info.contains("cfl_range"))
    return std::pair<Real, Real>{mf.info["cfl_range"][0].get<Real>(), mf.info["cfl_range"][1].get<Real>()};
  return std::nullopt;
}

template <GridType G>
void simulate_cmd(const ExperimentConfig& c, const Overrides& o) {
  const auto mf = load_model_file(model_path(c, o));
  if (mf.net.spec.dim != G::dim) throw ConfigError("model dimension does not match 'config.dim'");
  const Real cfl = o.cfl ? *o.cfl : c.eval.cfl.front();
  ExperimentConfig run = c;
  if (o.steps) {
    run.eval.n_steps = *o.steps;
    run.eval.t_final.reset();
  }
  const auto tc = make_test_case<G>(run, c.ic, c.eval.seed, cfl);
  SimOptions<G> opt;
  opt.reference = &tc.reference;
  opt.trained_cfl = trained_range(mf);
  opt.n_substeps = c.n_substeps;
  opt.weno = c.weno;

  const std::string dir = c.out + "/simulate";
  fs::create_directories(dir);
  const std::string tag = cfl_tag(cfl);
  std::vector<RunRecord<G>> runs;
  runs.push_back(simulate_ml(mf.net, tc.u0, c.velocity, tc.dt, tc.n_steps, opt));
  runs.push_back(simulate_weno_coarse(tc.u0, c.velocity, tc.dt, tc.n_steps, opt));
  if constexpr (G::dim == 1) runs.push_back(simulate_classic_sl(tc.u0, c.velocity, tc.dt, tc.n_steps, c.eval.classic_k, opt));
  nlohmann::json summary;
  summary["cfl"] = cfl;
  summary["dt"] = tc.dt;
  summary["steps"] = tc.n_steps;
  for (const auto& r : runs) {
    write_run_csvs(r, dir, tag);
    summary["mean_mse"][r.method] = r.mean_mse();
    summary["max_mass_deviation"][r.method] = r.max_mass_deviation();
    std::printf("%-12s mean MSE %.4e  max mass deviation %.2e\n", r.method.c_str(), r.mean_mse(), r.max_mass_deviation());
  }
  if constexpr (G::dim == 1) {
    std::vector<std::pair<std::string, const CellField<Grid1D>*>> cols{{"reference", &tc.reference.back()}};
    for (const auto& r : runs) cols.push_back({r.method, &r.final_state});
    write_profile_csv(dir + "/profile_" + std::to_string(tc.n_steps) + ".csv", cols);
  } else {
    for (const auto& r : runs) write_contour_csv(dir + "/contour_" + r.method + "_" + tag + ".csv", r.final_state);
  }
  write_json(dir + "/summary_" + tag + ".json", summary);
}

template <GridType G>
void evaluate_cmd(const ExperimentConfig& c, const Overrides& o) {
  const auto net = load_model(model_path(c, o));
  const auto ds = read_dataset<G>(data_path(c, o));
  const auto m = evaluate(net, ds);
  const std::string dir = c.out + "/evaluate";
  fs::create_directories(dir);
  std::vector<Real> steps(m.mse_history.size());
  for (std::size_t k = 0; k < steps.size(); ++k) steps[k] = static_cast<Real>(k);
  write_series_csv(dir + "/errors_ml_dataset.csv", steps, m.mse_history);
  write_series_csv(dir + "/mass_ml_dataset.csv", steps, m.mass_deviation);
  write_json(dir + "/evaluation.json", {{"trajectories", ds.trajectories.size()},
                                         {"mean_mse", m.mean_mse},
                                         {"final_mse", m.final_mse},
                                         {"max_mass_deviation", m.max_mass_deviation}});
  std::printf("mean MSE %.4e  final MSE %.4e  max mass deviation %.2e\n", m.mean_mse, m.final_mse, m.max_mass_deviation);
}

template <GridType G>
void benchmark_cmd(const ExperimentConfig& c, const Overrides& o) {
  Network net;
  std::optional<std::pair<Real, Real>> range;
  if (o.train) {
    net = train_model<G>(c, o);
    range = std::pair<Real, Real>{c.cfl_min, c.cfl_max};
  } else {
    const std::string mpath = model_path(c, o);
    if (!fs::exists(mpath)) throw std::runtime_error("benchmark: no model at '" + mpath + "' (train first or pass --train)");
    const auto mf = load_model_file(mpath);
    net = mf.net;
    range = trained_range(mf);
  }
  if (net.spec.dim != G::dim) throw ConfigError("model dimension does not match 'config.dim'");
  const auto report = run_benchmark<G>(c, net, c.out + "/benchmark", range);
  for (const auto& [tag, e] : report["cfl"].items()) {
    const double ml = e["mean_mse"]["ml"], weno = e["mean_mse"]["weno"], ratio = e["ratio_ml_over_weno"];
    std::printf("CFL %-5s mean MSE  ml %.4e  weno %.4e  ratio %.3f\n", tag.c_str(), ml, weno, ratio);
  }
  std::cout << "report -> " << c.out << "/benchmark/report.json\n";
}

template <class Fn1, class Fn2>
void dispatch(const ExperimentConfig& c, Fn1&& one, Fn2&& two) {
  if (c.dim == 1) one();
  else two();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Machine-learned semi-Lagrangian finite-volume transport"};
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  app.footer(kConfigHelp);
  app.require_subcommand(1);

  Overrides o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON experiment config");
    sub->add_option("--seed", o.seed, "override the master seed");
    sub->add_option("--out", o.out, "override the output directory");
    sub->add_option("--model", o.model, "model file (default <out>/model.slmd)");
    sub->add_option("--data", o.data, "dataset file (default <out>/dataset.sltd)");
    sub->footer(kConfigHelp);
  };
  auto* gen = app.add_subcommand("gen-data", "generate the training dataset");
  add_common(gen);
  auto* tr = app.add_subcommand("train", "train the network (generates data if missing)");
  add_common(tr);
  tr->add_option("--epochs", o.epochs, "override train.epochs");
  tr->add_flag("--resume", o.resume, "continue from the newest checkpoint");
  auto* sim = app.add_subcommand("simulate", "roll out ML, WENO5 and classical SL on one test sample");
  add_common(sim);
  sim->add_option("--cfl", o.cfl, "CFL number of the run");
  sim->add_option("--steps", o.steps, "number of steps");
  auto* ev = app.add_subcommand("evaluate", "roll out the model over the dataset trajectories");
  add_common(ev);
  auto* bench = app.add_subcommand("benchmark", "full benchmark battery for one example");
  add_common(bench);
  bench->add_option("example", o.example, "example id (ex1 .. ex5); selects configs/<id>.json unless --config is given");
  bench->add_flag("--train", o.train, "train a model first");
  bench->add_option("--epochs", o.epochs, "override train.epochs (with --train)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  ExperimentConfig c;
  try {
    c = resolve_config(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*gen) {
      dispatch(c, [&] { generate<Grid1D>(c, data_path(c, o)); }, [&] { generate<Grid2D>(c, data_path(c, o)); });
    } else if (*tr) {
      dispatch(c, [&] { train_model<Grid1D>(c, o); }, [&] { train_model<Grid2D>(c, o); });
    } else if (*sim) {
      dispatch(c, [&] { simulate_cmd<Grid1D>(c, o); }, [&] { simulate_cmd<Grid2D>(c, o); });
    } else if (*ev) {
      dispatch(c, [&] { evaluate_cmd<Grid1D>(c, o); }, [&] { evaluate_cmd<Grid2D>(c, o); });
    } else if (*bench) {
      dispatch(c, [&] { benchmark_cmd<Grid1D>(c, o); }, [&] { benchmark_cmd<Grid2D>(c, o); });
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
