#pragma once
/// @file training.hpp
/// @brief Unrolled-trajectory loss, the optimization loop with checkpoints,
/// and held-out evaluation.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "datagen.hpp"
#include "nnet.hpp"
#include "rng.hpp"

namespace mlsl {

class TrainingError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  int unroll = 4;
  int batch = 8;
  int epochs = 10;
  Real lr = 1e-3;
  LrSchedule schedule = LrSchedule::constant;
  std::uint64_t seed = 0;
  Real val_fraction = 0.1;
  int checkpoint_every = 0;  // epochs; 0 disables
  std::string checkpoint_dir;
  std::string log_path;  // JSON lines, one record per epoch
  Real clip_norm = 1.0;  // <= 0 disables clipping
  ConvSpec spec;         // dim and s are taken from the dataset

  void validate() const {
    if (unroll < 1 || unroll > 32) throw std::invalid_argument("TrainConfig: unroll must be in [1, 32]");
    if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be positive");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be nonnegative");
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
      throw std::invalid_argument("TrainConfig: val_fraction must be in [0, 1)");
    if (checkpoint_every < 0) throw std::invalid_argument("TrainConfig: checkpoint_every must be nonnegative");
  }
};

struct Window {
  int trajectory = 0;
  int start = 0;
};

struct EpochRecord {
  int epoch = 0;
  Real train_loss = 0.0;
  Real val_loss = 0.0;
  Real wall_ms = 0.0;
};

struct TrainResult {
  Network net;
  AdamState adam;
  std::vector<EpochRecord> log;
  Real initial_val_loss = 0.0;
  Real initial_train_loss = 0.0;
};

/// Mean over T_u steps of the per-step MSE of an autoregressive rollout
/// from snapshot `start`, fed with the stored shifts. When g_params is
/// given, the exact gradient is added into it (scaled by `weight`).
template <GridType G>
Real unrolled_loss(const Network& net, const Trajectory<G>& tr, int start, int unroll,
                   std::vector<Real>* g_params = nullptr, Real weight = 1.0) {
  if (unroll < 1) throw std::invalid_argument("unrolled_loss: unroll must be positive");
  if (start < 0 || static_cast<std::size_t>(start + unroll) > tr.shifts.size())
    throw std::out_of_range("unrolled_loss: window exhausted (start " + std::to_string(start) + ", unroll " +
                            std::to_string(unroll) + ", " + std::to_string(tr.shifts.size()) + " steps)");
  std::vector<CellField<G>> states{tr.snapshots[start]};
  std::vector<CoeffField<G>> coeffs;
  std::vector<ForwardTape<G>> tapes(g_params ? unroll : 0);
  Real loss = 0.0;
  for (int k = 0; k < unroll; ++k) {
    coeffs.push_back(forward(net, states.back(), tr.shifts[start + k], g_params ? &tapes[k] : nullptr));
    states.push_back(apply_coefficients(states.back(), coeffs.back()));
    loss += mse(states.back(), tr.snapshots[start + k + 1]);
  }
  loss /= unroll;
  if (!g_params) return loss;

  const std::size_t n = states[0].size();
  const Real scale = weight * 2.0 / (static_cast<Real>(n) * unroll);
  std::vector<Real> g_u(n, 0.0);
  CoeffField<G> g_d;
  for (int k = unroll - 1; k >= 0; --k) {
    const auto& pred = states[k + 1];
    const auto& ref = tr.snapshots[start + k + 1];
    for (std::size_t c = 0; c < n; ++c) g_u[c] += scale * (pred.values[c] - ref.values[c]);
    std::vector<Real> g_prev(n, 0.0);
    apply_coefficients_backward(states[k], coeffs[k], g_u, g_d, g_prev);
    const auto g_in = backward(net, tapes[k], g_d, *g_params);
    for (std::size_t c = 0; c < n; ++c) g_prev[c] += g_in[c];
    g_u = std::move(g_prev);
  }
  return loss;
}

/// Every stride-1 window of length `unroll` in the listed trajectories.
template <GridType G>
std::vector<Window> enumerate_windows(const Dataset<G>& ds, const std::vector<int>& trajectories, int unroll) {
  std::vector<Window> out;
  for (int t : trajectories) {
    const int steps = static_cast<int>(ds.trajectories[t].shifts.size());
    for (int m = 0; m + unroll <= steps; ++m) out.push_back({t, m});
  }
  return out;
}

/// Whole-trajectory split: the last round(val_fraction * n) trajectories
/// are held out (at least one when the fraction is positive and n > 1).
inline std::pair<std::vector<int>, std::vector<int>> split_trajectories(int n, Real val_fraction) {
  int n_val = static_cast<int>(std::lround(val_fraction * n));
  if (val_fraction > 0.0 && n > 1) n_val = std::max(n_val, 1);
  n_val = std::min(n_val, std::max(n - 1, 0));
  std::vector<int> train, val;
  for (int k = 0; k < n; ++k) (k < n - n_val ? train : val).push_back(k);
  return {train, val};
}

template <GridType G>
Real mean_window_loss(const Network& net, const Dataset<G>& ds, const std::vector<Window>& windows, int unroll) {
  if (windows.empty()) return std::numeric_limits<Real>::quiet_NaN();
  Real acc = 0.0;
  for (const auto& w : windows) acc += unrolled_loss(net, ds.trajectories[w.trajectory], w.start, unroll);
  return acc / static_cast<Real>(windows.size());
}

inline nlohmann::json epoch_to_json(const EpochRecord& e) {
  return {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"wall_ms", e.wall_ms}};
}

inline Real scheduled_lr(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps) {
  if (cfg.schedule == LrSchedule::constant || total_steps <= 0) return cfg.lr;
  const Real frac = std::min<Real>(1.0, static_cast<Real>(step) / static_cast<Real>(total_steps));
  return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * frac));
}

/// State carried by a checkpoint.
struct ResumePoint {
  Network net;
  AdamState adam;
  int epochs_done = 0;
  Real initial_val_loss = 0.0;
  Real initial_train_loss = 0.0;
  std::vector<EpochRecord> log;
};

inline nlohmann::json checkpoint_info(int epochs_done, Real init_val, Real init_train, const std::vector<EpochRecord>& log) {
  nlohmann::json losses = nlohmann::json::array();
  // wall-clock times stay out of the model file so it is reproducible
  for (const auto& e : log) losses.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  return {{"epochs_done", epochs_done}, {"initial_val_loss", init_val}, {"initial_train_loss", init_train},
          {"losses", losses}};
}

inline ResumePoint resume_from(const ModelFile& mf) {
  if (!mf.adam) throw FormatError("checkpoint: model file carries no optimizer state");
  ResumePoint rp;
  rp.net = mf.net;
  rp.adam = *mf.adam;
  try {
    rp.epochs_done = mf.info.at("epochs_done").get<int>();
    rp.initial_val_loss = mf.info.at("initial_val_loss").get<Real>();
    rp.initial_train_loss = mf.info.at("initial_train_loss").get<Real>();
    for (const auto& e : mf.info.at("losses"))
      rp.log.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<Real>(), e.at("val_loss").get<Real>(), 0.0});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: missing training state: ") + e.what());
  }
  return rp;
}

/// Trains a network on `ds`. Epoch e shuffles its windows with substream
/// (seed, 2, e), so resuming from a checkpoint replays the same sequence as
/// an uninterrupted run.
template <GridType G>
TrainResult train(const TrainConfig& cfg_in, const Dataset<G>& ds, const ResumePoint* resume = nullptr,
                  const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  cfg.spec.dim = G::dim;
  cfg.spec.s = ds.s;
  cfg.spec.validate();

  TrainResult res;
  if (resume) {
    if (!(resume->net.spec == cfg.spec)) throw std::invalid_argument("train: checkpoint network does not match config");
    res.net = resume->net;
    res.adam = resume->adam;
    res.log = resume->log;
  } else {
    res.net = make_network(cfg.spec, cfg.seed);
    res.adam.lr = cfg.lr;
  }

  const auto [train_ids, val_ids] = split_trajectories(static_cast<int>(ds.trajectories.size()), cfg.val_fraction);
  const auto train_windows = enumerate_windows(ds, train_ids, cfg.unroll);
  const auto val_windows = enumerate_windows(ds, val_ids, cfg.unroll);
  if (cfg.epochs > 0 && train_windows.empty())
    throw std::invalid_argument("train: no training windows of length " + std::to_string(cfg.unroll));

  if (resume) {
    res.initial_val_loss = resume->initial_val_loss;
    res.initial_train_loss = resume->initial_train_loss;
  } else {
    res.initial_train_loss = mean_window_loss(res.net, ds, train_windows, cfg.unroll);
    res.initial_val_loss = val_windows.empty() ? res.initial_train_loss : mean_window_loss(res.net, ds, val_windows, cfg.unroll);
  }

  const int first_epoch = resume ? resume->epochs_done : 0;
  const std::int64_t batches_per_epoch =
      (static_cast<std::int64_t>(train_windows.size()) + cfg.batch - 1) / cfg.batch;
  const std::int64_t total_steps = batches_per_epoch * cfg.epochs;

  std::ofstream log_file;
  if (!cfg.log_path.empty()) {
    log_file.open(cfg.log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log_file) throw IoError("cannot open training log '" + cfg.log_path + "'");
  }

  std::vector<Real> grads(res.net.params.size());
  for (int epoch = first_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto order = train_windows;
    Rng rng = substream(cfg.seed, 2, static_cast<std::uint64_t>(epoch));
    shuffle(order, rng);

    Real epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch));
      const Real w = 1.0 / static_cast<Real>(b1 - b0);
      std::fill(grads.begin(), grads.end(), 0.0);
      for (std::size_t k = b0; k < b1; ++k) {
        const auto& win = order[k];
        const Real l = unrolled_loss(res.net, ds.trajectories[win.trajectory], win.start, cfg.unroll, &grads, w);
        if (!std::isfinite(l)) {
          std::ostringstream msg;
          msg << "train: non-finite loss at epoch " << epoch << ", optimizer step " << res.adam.step << ", window (trajectory "
              << win.trajectory << ", start " << win.start << "), lr " << res.adam.lr;
          throw TrainingError(msg.str());
        }
        epoch_loss += l;
      }
      if (cfg.clip_norm > 0.0) clip_global_norm(grads, cfg.clip_norm);
      res.adam.lr = scheduled_lr(cfg, res.adam.step, total_steps);
      adam_update(res.net.params, grads, res.adam);
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = epoch_loss / static_cast<Real>(order.size());
    rec.val_loss = val_windows.empty() ? rec.train_loss : mean_window_loss(res.net, ds, val_windows, cfg.unroll);
    rec.wall_ms = std::chrono::duration<Real, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(rec);
    if (log_file) log_file << epoch_to_json(rec).dump() << '\n' << std::flush;
    if (on_epoch) on_epoch(rec);

    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && (epoch + 1) % cfg.checkpoint_every == 0) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
      const auto path = std::filesystem::path(cfg.checkpoint_dir) / ("epoch_" + std::to_string(epoch + 1) + ".slmd");
      save_model(res.net, path.string(), &res.adam,
                 checkpoint_info(epoch + 1, res.initial_val_loss, res.initial_train_loss, res.log));
    }
  }
  return res;
}

struct EvalMetrics {
  std::vector<Real> mse_history;       // mean over trajectories, per step (index 0 = initial)
  std::vector<Real> mass_deviation;    // max relative |mass - mass0| over trajectories, per step
  std::vector<int> counts;             // trajectories contributing to each step
  Real mean_mse = 0.0;                 // mean of mse_history[1..]
  Real final_mse = 0.0;
  Real max_mass_deviation = 0.0;
};

inline Real relative_mass_deviation(Real m, Real m0) {
  const Real scale = std::max(std::abs(m0), std::numeric_limits<Real>::min());
  return std::abs(m - m0) / scale;
}

/// Full-length autoregressive rollouts from each trajectory's first
/// snapshot with the stored shifts.
template <GridType G>
std::vector<CellField<G>> rollout(const Network& net, const Trajectory<G>& tr) {
  std::vector<CellField<G>> out{tr.snapshots.front()};
  for (const auto& sh : tr.shifts) {
    auto next = apply_coefficients(out.back(), forward(net, out.back(), sh));
    next.time = out.back().time + tr.coarse_dt;
    out.push_back(std::move(next));
  }
  return out;
}

/// Metrics from precomputed rollouts paired with their trajectories.
template <GridType G>
EvalMetrics metrics_from_rollouts(const std::vector<std::vector<CellField<G>>>& rollouts,
                                  const std::vector<const Trajectory<G>*>& refs) {
  EvalMetrics m;
  std::size_t len = 0;
  for (const auto& r : rollouts) len = std::max(len, r.size());
  m.mse_history.assign(len, 0.0);
  m.mass_deviation.assign(len, 0.0);
  m.counts.assign(len, 0);
  for (std::size_t t = 0; t < rollouts.size(); ++t) {
    const auto& r = rollouts[t];
    const Real m0 = total_mass(r.front());
    for (std::size_t k = 0; k < r.size(); ++k) {
      m.mse_history[k] += mse(r[k], refs[t]->snapshots[k]);
      m.mass_deviation[k] = std::max(m.mass_deviation[k], relative_mass_deviation(total_mass(r[k]), m0));
      ++m.counts[k];
    }
  }
  for (std::size_t k = 0; k < len; ++k)
    if (m.counts[k] > 0) m.mse_history[k] /= m.counts[k];
  if (len > 1) {
    Real acc = 0.0;
    for (std::size_t k = 1; k < len; ++k) acc += m.mse_history[k];
    m.mean_mse = acc / static_cast<Real>(len - 1);
    m.final_mse = m.mse_history.back();
  }
  for (Real d : m.mass_deviation) m.max_mass_deviation = std::max(m.max_mass_deviation, d);
  return m;
}

template <GridType G>
EvalMetrics evaluate(const Network& net, const Dataset<G>& ds, const std::vector<int>& trajectories,
                     std::vector<std::vector<CellField<G>>>* rollouts_out = nullptr) {
  std::vector<std::vector<CellField<G>>> rollouts;
  std::vector<const Trajectory<G>*> refs;
  for (int t : trajectories) {
    rollouts.push_back(rollout(net, ds.trajectories.at(t)));
    refs.push_back(&ds.trajectories[t]);
  }
  auto m = metrics_from_rollouts(rollouts, refs);
  if (rollouts_out) *rollouts_out = std::move(rollouts);
  return m;
}

template <GridType G>
EvalMetrics evaluate(const Network& net, const Dataset<G>& ds) {
  std::vector<int> all(ds.trajectories.size());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = static_cast<int>(k);
  return evaluate(net, ds, all);
}

}  // namespace mlsl
