#pragma once
/// @file nnet.hpp
/// @brief Convolutional coefficient network, the conservation constraint
/// layer, coefficient application, reverse-mode gradients and Adam.
///
/// Parameter layout, layer after layer: weights W[co][ci][t] followed by
/// biases b[co]. Tap t = ty * kernel + tx reads the input cell offset by
/// (tx - r, ty - r) with r = kernel / 2 (1D: ty = 0 only). Convolutions are
/// cross-correlations with circular padding.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "container.hpp"
#include "core.hpp"
#include "rng.hpp"

namespace mlsl {

using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvSpec {
  int dim = 1;
  int n_layers = 6;
  int filters = 32;
  int kernel = 5;
  int s = 2;
  bool normalize_input = false;      // feed U / max|U| instead of U
  bool donor_cell_baseline = false;  // predict a gated correction to donor-cell coefficients
  bool upstream_frame = false;       // gather U and place coefficients relative to the upstream cell

  int in_channels() const { return dim + 1; }
  int out_channels() const { return dim == 1 ? stencil_width(s) : stencil_width(s) * stencil_width(s); }
  int taps() const { return dim == 1 ? kernel : kernel * kernel; }
  int layer_in(int l) const { return l == 0 ? in_channels() : filters; }
  int layer_out(int l) const { return l == n_layers - 1 ? out_channels() : filters; }

  void validate() const {
    if (dim != 1 && dim != 2) throw std::invalid_argument("ConvSpec: dim must be 1 or 2");
    if (n_layers < 1) throw std::invalid_argument("ConvSpec: n_layers must be positive");
    if (filters < 1) throw std::invalid_argument("ConvSpec: filters must be positive");
    if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("ConvSpec: kernel must be odd and positive");
    if (s < 0) throw std::invalid_argument("ConvSpec: negative stencil half-width");
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (int l = 0; l < n_layers; ++l)
      n += static_cast<std::size_t>(layer_out(l)) * (static_cast<std::size_t>(layer_in(l)) * taps() + 1);
    return n;
  }

  bool operator==(const ConvSpec&) const = default;
};

inline nlohmann::json spec_to_json(const ConvSpec& c) {
  return {{"dim", c.dim},
          {"n_layers", c.n_layers},
          {"filters", c.filters},
          {"kernel", c.kernel},
          {"s", c.s},
          {"normalize_input", c.normalize_input},
          {"donor_cell_baseline", c.donor_cell_baseline},
          {"upstream_frame", c.upstream_frame}};
}

inline ConvSpec spec_from_json(const nlohmann::json& j) {
  ConvSpec c;
  c.dim = j.at("dim").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.filters = j.at("filters").get<int>();
  c.kernel = j.at("kernel").get<int>();
  c.s = j.at("s").get<int>();
  c.normalize_input = j.value("normalize_input", false);
  c.donor_cell_baseline = j.value("donor_cell_baseline", false);
  c.upstream_frame = j.value("upstream_frame", false);
  c.validate();
  return c;
}

struct Network {
  ConvSpec spec;
  std::vector<Real> params;

  std::size_t weight_offset(int l) const {
    std::size_t off = 0;
    for (int k = 0; k < l; ++k)
      off += static_cast<std::size_t>(spec.layer_out(k)) * (static_cast<std::size_t>(spec.layer_in(k)) * spec.taps() + 1);
    return off;
  }
  std::size_t bias_offset(int l) const {
    return weight_offset(l) + static_cast<std::size_t>(spec.layer_out(l)) * spec.layer_in(l) * spec.taps();
  }
};

/// Output-layer weights are drawn this much smaller than He-uniform.
inline constexpr Real kOutputInitGain = 1e-2;

/// He-uniform weights (bound sqrt(6 / fan_in)), zero biases. The output
/// layer is scaled by kOutputInitGain, so an untrained network predicts
/// coefficients close to the uniform stencil average 1 / stencil size.
inline Network make_network(const ConvSpec& spec, std::uint64_t seed) {
  spec.validate();
  Network net{spec, std::vector<Real>(spec.param_count(), 0.0)};
  Rng rng = substream(seed, 0x6e6e6574);
  for (int l = 0; l < spec.n_layers; ++l) {
    const std::size_t fan_in = static_cast<std::size_t>(spec.layer_in(l)) * spec.taps();
    Real bound = std::sqrt(6.0 / static_cast<Real>(fan_in));
    if (l == spec.n_layers - 1) bound *= kOutputInitGain;
    const std::size_t w0 = net.weight_offset(l);
    const std::size_t nw = static_cast<std::size_t>(spec.layer_out(l)) * fan_in;
    for (std::size_t k = 0; k < nw; ++k) net.params[w0 + k] = uniform(rng, -bound, bound);
  }
  return net;
}

namespace detail {

/// nbr[t * cells + c] = flat index read by tap t at cell c.
template <GridType G>
std::vector<std::size_t> tap_table(const G& g, int kernel) {
  const int r = kernel / 2;
  const int ky = G::dim == 1 ? 1 : kernel;
  const int ry = G::dim == 1 ? 0 : r;
  const std::size_t n = g.size();
  std::vector<std::size_t> nbr(static_cast<std::size_t>(kernel) * ky * n);
  for (int ty = 0; ty < ky; ++ty)
    for (int tx = 0; tx < kernel; ++tx) {
      const std::size_t t = static_cast<std::size_t>(ty) * kernel + tx;
      for (std::size_t c = 0; c < n; ++c) nbr[t * n + c] = shifted_cell(g, c, tx - r, ty - ry);
    }
  return nbr;
}

inline void im2col(const Matrix& in, const std::vector<std::size_t>& nbr, int taps, Matrix& col) {
  const Eigen::Index n = in.cols();
  col.resize(in.rows() * taps, n);
  for (Eigen::Index ci = 0; ci < in.rows(); ++ci) {
    const Real* src = in.row(ci).data();
    for (int t = 0; t < taps; ++t) {
      Real* dst = col.row(ci * taps + t).data();
      const std::size_t* idx = nbr.data() + static_cast<std::size_t>(t) * n;
      for (Eigen::Index c = 0; c < n; ++c) dst[c] = src[idx[c]];
    }
  }
}

inline void col2im(const Matrix& col, const std::vector<std::size_t>& nbr, int taps, Matrix& out) {
  const Eigen::Index n = col.cols();
  const Eigen::Index channels = col.rows() / taps;
  out.setZero(channels, n);
  for (Eigen::Index ci = 0; ci < channels; ++ci) {
    Real* dst = out.row(ci).data();
    for (int t = 0; t < taps; ++t) {
      const Real* src = col.row(ci * taps + t).data();
      const std::size_t* idx = nbr.data() + static_cast<std::size_t>(t) * n;
      for (Eigen::Index c = 0; c < n; ++c) dst[idx[c]] += src[c];
    }
  }
}

}  // namespace detail

/// Activations recorded by forward() for the backward pass.
/// Per-cell integer part (dx, dy) of the corner shift and the source cell
/// it points at. Channel k with stencil offset p then addresses the target
/// offset (dx, dy) + 1 + p; offsets outside the stencil are dropped.
struct UpstreamFrame {
  std::vector<int> dx, dy;
  std::vector<std::size_t> src;
};

template <GridType G>
UpstreamFrame upstream_frame(const ShiftField<G>& sh) {
  UpstreamFrame f;
  const std::size_t n = sh.grid.size();
  f.dx.resize(n);
  f.dy.assign(n, -1);
  f.src.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    f.dx[c] = static_cast<int>(std::floor(sh.xi[c]));
    if constexpr (G::dim == 2) f.dy[c] = static_cast<int>(std::floor(sh.eta[c]));
    f.src[c] = shifted_cell(sh.grid, c, f.dx[c], G::dim == 2 ? f.dy[c] : 0);
  }
  return f;
}

/// Target channel of frame channel k at cell c, or -1 when it leaves the stencil.
template <GridType G>
int frame_channel(const UpstreamFrame& f, std::size_t c, int k, int s) {
  const auto [px, py] = stencil_offset<G>(k, s);
  const int ox = f.dx[c] + 1 + px;
  if (ox < -s || ox > s) return -1;
  if constexpr (G::dim == 1) {
    return ox + s;
  } else {
    const int oy = f.dy[c] + 1 + py;
    if (oy < -s || oy > s) return -1;
    return (ox + s) * stencil_width(s) + oy + s;
  }
}

template <GridType G>
struct ForwardTape {
  G grid;
  std::vector<std::size_t> nbr;
  std::vector<Matrix> cols;  // im2col of each layer input
  std::vector<Matrix> acts;  // acts[0] = input, acts[l + 1] = layer l output
  bool recorded = false;
  bool normalized = false;    // input divided by input_scale
  Real input_scale = 1.0;     // max|U| when the spec normalizes its input
  Real scale_sign = 1.0;      // sign of U at that cell
  std::size_t scale_arg = 0;  // cell attaining it
  std::vector<Real> gate;     // per-cell correction gate, empty without a baseline
  std::optional<UpstreamFrame> frame;
};

/// Cell-aligned input channels: U, xi and (2D) eta. Shift entries already
/// sit at the left interface / lower-left corner of their cell. With a
/// frame, U is read at the frame source cell and the shifts enter through
/// their fractional parts.
template <GridType G>
Matrix assemble_input(const CellField<G>& u, const ShiftField<G>& sh, Real scale = 1.0,
                      const UpstreamFrame* frame = nullptr) {
  if (!(u.grid == sh.grid) || sh.xi.size() != u.size()) throw ShapeError("forward: shift grid does not match field");
  const Eigen::Index n = static_cast<Eigen::Index>(u.size());
  const auto frac = [](Real v) { return v - std::floor(v); };
  Matrix x(G::dim + 1, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    if (frame) {
      x(0, c) = u.values[frame->src[c]] / scale;
      x(1, c) = frac(sh.xi[c]);
      if constexpr (G::dim == 2) x(2, c) = frac(sh.eta[c]);
      continue;
    }
    x(0, c) = u.values[c] / scale;
    x(1, c) = sh.xi[c];
    if constexpr (G::dim == 2) x(2, c) = sh.eta[c];
  }
  return x;
}

/// Raw network output (out_channels x cells), before the constraint layer.
template <GridType G>
Matrix network_forward(const Network& net, const G& grid, const Matrix& input, ForwardTape<G>* tape = nullptr) {
  const ConvSpec& sp = net.spec;
  if (sp.dim != G::dim) throw ShapeError("forward: network dimension does not match grid");
  if (input.rows() != sp.in_channels() || input.cols() != static_cast<Eigen::Index>(grid.size()))
    throw ShapeError("forward: input channel layout does not match spec");
  if (net.params.size() != sp.param_count()) throw ShapeError("forward: parameter count does not match spec");

  const auto nbr = detail::tap_table(grid, sp.kernel);
  const int taps = sp.taps();
  Matrix a = input;
  Matrix col;
  if (tape) {
    tape->grid = grid;
    tape->cols.assign(sp.n_layers, Matrix());
    tape->acts.assign(sp.n_layers + 1, Matrix());
    tape->acts[0] = input;
  }
  for (int l = 0; l < sp.n_layers; ++l) {
    const int cin = sp.layer_in(l), cout = sp.layer_out(l);
    detail::im2col(a, nbr, taps, col);
    Eigen::Map<const Matrix> w(net.params.data() + net.weight_offset(l), cout, static_cast<Eigen::Index>(cin) * taps);
    Eigen::Map<const Eigen::VectorXd> b(net.params.data() + net.bias_offset(l), cout);
    Matrix z = w * col;
    z.colwise() += b;
    if (l + 1 < sp.n_layers) z = z.cwiseMax(0.0);
    if (tape) {
      tape->cols[l] = std::move(col);
      tape->acts[l + 1] = z;
      col = Matrix();
    }
    a = std::move(z);
  }
  if (tape) {
    tape->nbr = nbr;
    tape->recorded = true;
  }
  return a;
}

/// Adds (S[src] - 1) / M back out of every coefficient reading src, where
/// S[src] is the column sum over the region of influence of src and M the
/// number of stencil channels. Output column sums are exactly one up to
/// rounding; the map is affine and idempotent.
template <GridType G>
CoeffField<G> constraint_project(const CoeffField<G>& raw) {
  const auto sums = coeff_column_sums(raw);
  const Real m = static_cast<Real>(raw.channels());
  CoeffField<G> out = raw;
  for (int k = 0; k < raw.channels(); ++k) {
    const auto [dx, dy] = stencil_offset<G>(k, raw.s);
    for (std::size_t c = 0; c < raw.cells(); ++c)
      out.at(k, c) -= (sums[shifted_cell(raw.grid, c, dx, dy)] - 1.0) / m;
  }
  return out;
}

/// Transpose of the linear part of constraint_project; the linear part is
/// symmetric, so this is the same correction without the constant.
template <GridType G>
CoeffField<G> constraint_project_adjoint(const CoeffField<G>& g) {
  const auto sums = coeff_column_sums(g);
  const Real m = static_cast<Real>(g.channels());
  CoeffField<G> out = g;
  for (int k = 0; k < g.channels(); ++k) {
    const auto [dx, dy] = stencil_offset<G>(k, g.s);
    for (std::size_t c = 0; c < g.cells(); ++c) out.at(k, c) -= sums[shifted_cell(g.grid, c, dx, dy)] / m;
  }
  return out;
}

template <GridType G>
CoeffField<G> coeffs_from_matrix(const G& grid, int s, const Matrix& raw) {
  CoeffField<G> d(grid, s);
  if (raw.rows() != d.channels() || raw.cols() != static_cast<Eigen::Index>(grid.size()))
    throw ShapeError("network output does not match coefficient layout");
  std::copy(raw.data(), raw.data() + raw.size(), d.d.begin());
  return d;
}

namespace detail {

/// Calls add(j - i, overlap) for every cell j within the stencil that the
/// interval [a, b] (grid units, cell i spans [i, i + 1]) touches.
template <class Add>
void donor_overlaps(Real a, Real b, int i, int s, Add&& add) {
  const long lo = std::max(static_cast<long>(std::floor(a)), static_cast<long>(i) - s);
  const long hi = static_cast<long>(i) + s;
  for (long j = lo; j <= hi && j < b; ++j) {
    const Real len = std::min(b, static_cast<Real>(j + 1)) - std::max(a, static_cast<Real>(j));
    if (len > 0.0) add(static_cast<int>(j - i), len);
  }
}

}  // namespace detail

namespace detail {

/// Calls visit(c, lo, hi) with the upstream interval of 1D cell c, or
/// visit(c, ax, bx, ay, by) with the upstream box of 2D cell c. The 2D box
/// is spanned by the edge-averaged corner shifts.
template <GridType G, class Visit>
void for_each_upstream_box(const ShiftField<G>& sh, Visit&& visit) {
  if constexpr (G::dim == 1) {
    const int n = sh.grid.n;
    for (int i = 0; i < n; ++i)
      visit(static_cast<std::size_t>(i), i + sh.xi[static_cast<std::size_t>(i)],
            i + 1 + sh.xi[static_cast<std::size_t>(wrap_index(i + 1, n))]);
  } else {
    const int nx = sh.grid.nx(), ny = sh.grid.ny();
    const auto at = [&](const std::vector<Real>& v, int i, int j) {
      return v[static_cast<std::size_t>(wrap_index(j, ny)) * nx + wrap_index(i, nx)];
    };
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        visit(static_cast<std::size_t>(j) * nx + i, i + 0.5 * (at(sh.xi, i, j) + at(sh.xi, i, j + 1)),
              i + 1 + 0.5 * (at(sh.xi, i + 1, j) + at(sh.xi, i + 1, j + 1)),
              j + 0.5 * (at(sh.eta, i, j) + at(sh.eta, i + 1, j)),
              j + 1 + 0.5 * (at(sh.eta, i, j + 1) + at(sh.eta, i + 1, j + 1)));
  }
}

inline Real interpolation_weight(Real x) {
  const Real f = x - std::floor(x);
  return 4.0 * f * (1.0 - f);
}

}  // namespace detail

/// Piecewise-constant semi-Lagrangian coefficients: the overlap of each
/// upstream cell (box in 2D) with the grid cells. Parts outside the stencil
/// are dropped; the constraint layer then restores the column sums.
template <GridType G>
CoeffField<G> donor_cell_coefficients(const ShiftField<G>& sh, int s) {
  CoeffField<G> d(sh.grid, s);
  if constexpr (G::dim == 1) {
    detail::for_each_upstream_box(sh, [&](std::size_t c, Real a, Real b) {
      const int i = static_cast<int>(c);
      detail::donor_overlaps(a, b, i, s, [&](int off, Real w) { d.at(off + s, c) += w; });
    });
  } else {
    const int nx = sh.grid.nx(), w = stencil_width(s);
    detail::for_each_upstream_box(sh, [&](std::size_t c, Real ax, Real bx, Real ay, Real by) {
      const int i = static_cast<int>(c % nx), j = static_cast<int>(c / nx);
      detail::donor_overlaps(ax, bx, i, s, [&](int ox, Real wx) {
        detail::donor_overlaps(ay, by, j, s, [&](int oy, Real wy) { d.at((ox + s) * w + oy + s, c) += wx * wy; });
      });
    });
  }
  return d;
}

/// Mean of 4 f (1 - f) over the upstream box edges, f the fractional part of
/// the edge position. Zero where every edge lands on a cell face, so the
/// baseline step there is an exact translation.
template <GridType G>
std::vector<Real> donor_cell_gate(const ShiftField<G>& sh) {
  std::vector<Real> g(sh.grid.size());
  using detail::interpolation_weight;
  if constexpr (G::dim == 1) {
    detail::for_each_upstream_box(sh, [&](std::size_t c, Real a, Real b) {
      g[c] = 0.5 * (interpolation_weight(a) + interpolation_weight(b));
    });
  } else {
    detail::for_each_upstream_box(sh, [&](std::size_t c, Real ax, Real bx, Real ay, Real by) {
      g[c] = 0.25 * (interpolation_weight(ax) + interpolation_weight(bx) + interpolation_weight(ay) +
                     interpolation_weight(by));
    });
  }
  return g;
}

/// Network coefficients for one step: conv stack then constraint layer.
template <GridType G>
CoeffField<G> forward(const Network& net, const CellField<G>& u, const ShiftField<G>& sh,
                      ForwardTape<G>* tape = nullptr) {
  const ConvSpec& sp = net.spec;
  Real scale = 1.0;
  std::size_t arg = 0;
  bool normalized = false;
  if (sp.normalize_input) {
    for (std::size_t c = 0; c < u.size(); ++c)
      if (std::abs(u.values[c]) > std::abs(u.values[arg])) arg = c;
    if (std::abs(u.values[arg]) > 0.0) {
      scale = std::abs(u.values[arg]);
      normalized = true;
    }
  }
  std::optional<UpstreamFrame> frame;
  if (sp.upstream_frame) frame = upstream_frame(sh);
  const Matrix raw = network_forward(
      net, u.grid, assemble_input(u, sh, scale, frame ? &*frame : nullptr), tape);
  auto d = coeffs_from_matrix(u.grid, sp.s, raw);
  if (frame) {
    CoeffField<G> placed(u.grid, sp.s);
    for (int k = 0; k < d.channels(); ++k)
      for (std::size_t c = 0; c < d.cells(); ++c)
        if (const int t = frame_channel<G>(*frame, c, k, sp.s); t >= 0) placed.at(t, c) = d.at(k, c);
    d = std::move(placed);
  }
  std::vector<Real> gate;
  if (sp.donor_cell_baseline) {
    const auto base = donor_cell_coefficients(sh, sp.s);
    gate = donor_cell_gate(sh);
    for (int k = 0; k < d.channels(); ++k)
      for (std::size_t c = 0; c < d.cells(); ++c) d.at(k, c) = gate[c] * d.at(k, c) + base.at(k, c);
  }
  if (tape) {
    tape->normalized = normalized;
    tape->input_scale = scale;
    tape->scale_arg = arg;
    tape->scale_sign = u.values[arg] < 0.0 ? -1.0 : 1.0;
    tape->gate = std::move(gate);
    tape->frame = std::move(frame);
  }
  return constraint_project(d);
}

/// U_new[c] = sum_k d(k, c) * U[src(c, k)] with periodic wrapping.
template <GridType G>
CellField<G> apply_coefficients(const CellField<G>& u, const CoeffField<G>& d) {
  if (!(u.grid == d.grid)) throw ShapeError("apply_coefficients: grid mismatch");
  CellField<G> out(u.grid, u.time);
  for (int k = 0; k < d.channels(); ++k) {
    const auto [dx, dy] = stencil_offset<G>(k, d.s);
    for (std::size_t c = 0; c < d.cells(); ++c) out.values[c] += d.at(k, c) * u.values[shifted_cell(u.grid, c, dx, dy)];
  }
  return out;
}

/// Reverse pass of apply_coefficients: writes dL/dd into g_d and adds
/// dL/du into g_u.
template <GridType G>
void apply_coefficients_backward(const CellField<G>& u, const CoeffField<G>& d, const std::vector<Real>& g_out,
                                 CoeffField<G>& g_d, std::vector<Real>& g_u) {
  if (g_out.size() != u.size() || g_u.size() != u.size()) throw ShapeError("apply_coefficients_backward: size mismatch");
  g_d = CoeffField<G>(d.grid, d.s);
  for (int k = 0; k < d.channels(); ++k) {
    const auto [dx, dy] = stencil_offset<G>(k, d.s);
    for (std::size_t c = 0; c < d.cells(); ++c) {
      const std::size_t src = shifted_cell(u.grid, c, dx, dy);
      g_d.at(k, c) = g_out[c] * u.values[src];
      g_u[src] += d.at(k, c) * g_out[c];
    }
  }
}

/// Backpropagates dL/d(raw output) through the conv stack. Parameter
/// gradients are added into g_params; returns dL/d(input channels).
template <GridType G>
Matrix network_backward(const Network& net, const ForwardTape<G>& tape, const Matrix& g_raw,
                        std::vector<Real>& g_params) {
  if (!tape.recorded) throw std::logic_error("backward: no recorded activations");
  const ConvSpec& sp = net.spec;
  if (g_params.size() != net.params.size()) throw ShapeError("backward: gradient buffer size mismatch");
  const int taps = sp.taps();
  Matrix g = g_raw;
  Matrix gcol, gin;
  for (int l = sp.n_layers - 1; l >= 0; --l) {
    const int cin = sp.layer_in(l), cout = sp.layer_out(l);
    if (l + 1 < sp.n_layers) g = (tape.acts[l + 1].array() > 0.0).select(g, 0.0);
    Eigen::Map<Matrix> gw(g_params.data() + net.weight_offset(l), cout, static_cast<Eigen::Index>(cin) * taps);
    Eigen::Map<Eigen::VectorXd> gb(g_params.data() + net.bias_offset(l), cout);
    gw.noalias() += g * tape.cols[l].transpose();
    gb += g.rowwise().sum();
    Eigen::Map<const Matrix> w(net.params.data() + net.weight_offset(l), cout, static_cast<Eigen::Index>(cin) * taps);
    gcol.noalias() = w.transpose() * g;
    detail::col2im(gcol, tape.nbr, taps, gin);
    g = std::move(gin);
    gin = Matrix();
  }
  return g;
}

/// Gradients from dL/d(projected coefficients): parameters accumulate into
/// g_params, the returned vector is dL/dU through the network input.
template <GridType G>
std::vector<Real> backward(const Network& net, const ForwardTape<G>& tape, const CoeffField<G>& g_coeffs,
                           std::vector<Real>& g_params) {
  CoeffField<G> g_raw = constraint_project_adjoint(g_coeffs);
  if (!tape.gate.empty())
    for (int k = 0; k < g_raw.channels(); ++k)
      for (std::size_t c = 0; c < g_raw.cells(); ++c) g_raw.at(k, c) *= tape.gate[c];
  if (tape.frame) {
    CoeffField<G> g_frame(g_raw.grid, g_raw.s);
    for (int k = 0; k < g_raw.channels(); ++k)
      for (std::size_t c = 0; c < g_raw.cells(); ++c)
        if (const int t = frame_channel<G>(*tape.frame, c, k, g_raw.s); t >= 0) g_frame.at(k, c) = g_raw.at(t, c);
    g_raw = std::move(g_frame);
  }
  Eigen::Map<const Matrix> gm(g_raw.d.data(), g_raw.channels(), static_cast<Eigen::Index>(g_raw.cells()));
  const Matrix g_in = network_backward(net, tape, Matrix(gm), g_params);
  const std::size_t n = static_cast<std::size_t>(g_in.cols());
  std::vector<Real> g_u(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) g_u[tape.frame ? tape.frame->src[c] : c] += g_in(0, static_cast<Eigen::Index>(c));
  if (tape.normalized) {
    // input x_c = u[src_c] / m with m = |u[arg]|: dx_c/du = e_src / m - x_c sign(u[arg]) e_arg / m
    const Real m = tape.input_scale;
    Real dot = 0.0;
    for (std::size_t c = 0; c < n; ++c) dot += g_in(0, static_cast<Eigen::Index>(c)) * tape.acts[0](0, static_cast<Eigen::Index>(c));
    for (Real& v : g_u) v /= m;
    g_u[tape.scale_arg] -= tape.scale_sign * dot / m;
  }
  return g_u;
}

struct AdamState {
  Real lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Real> m;
  std::vector<Real> v;
};

/// One bias-corrected Adam step. Moment buffers are sized on first use.
inline void adam_update(std::vector<Real>& params, const std::vector<Real>& grads, AdamState& st) {
  if (grads.size() != params.size()) throw ShapeError("adam_update: gradient size mismatch");
  if (st.m.empty() && st.v.empty()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
  }
  if (st.m.size() != params.size() || st.v.size() != params.size())
    throw ShapeError("adam_update: moment buffer size mismatch");
  ++st.step;
  const Real c1 = 1.0 - std::pow(st.beta1, static_cast<Real>(st.step));
  const Real c2 = 1.0 - std::pow(st.beta2, static_cast<Real>(st.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * grads[k];
    st.v[k] = st.beta2 * st.v[k] + (1.0 - st.beta2) * grads[k] * grads[k];
    const Real mh = st.m[k] / c1;
    const Real vh = st.v[k] / c2;
    params[k] -= st.lr * mh / (std::sqrt(vh) + st.eps);
  }
}

/// Rescales grads to global L2 norm at most max_norm; returns the norm
/// before clipping.
inline Real clip_global_norm(std::vector<Real>& grads, Real max_norm) {
  Real sq = 0.0;
  for (Real g : grads) sq += g * g;
  const Real norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const Real scale = max_norm / norm;
    for (Real& g : grads) g *= scale;
  }
  return norm;
}

// --- SLMD1 model files -----------------------------------------------------

struct ModelFile {
  Network net;
  std::optional<AdamState> adam;
  nlohmann::json info = nlohmann::json::object();
};

/// Payload: parameters, then (when present) the Adam first and second
/// moments.
inline std::vector<std::uint8_t> encode_model(const Network& net, const AdamState* adam = nullptr,
                                              const nlohmann::json& info = nlohmann::json::object()) {
  if (net.params.size() != net.spec.param_count()) throw ShapeError("save_model: parameter count does not match spec");
  nlohmann::json meta = {{"format", "SLMD1"},
                         {"spec", spec_to_json(net.spec)},
                         {"n_params", net.params.size()},
                         {"info", info}};
  if (adam) {
    if (adam->m.size() != net.params.size() || adam->v.size() != net.params.size())
      throw ShapeError("save_model: Adam moments do not match parameters");
    meta["adam"] = {{"lr", adam->lr}, {"beta1", adam->beta1}, {"beta2", adam->beta2},
                    {"eps", adam->eps}, {"step", adam->step}};
  }
  ByteWriter w = begin_container("SLMD", meta);
  w.put_f64s(net.params);
  if (adam) {
    w.put_f64s(adam->m);
    w.put_f64s(adam->v);
  }
  finish_container(w);
  return std::move(w.bytes());
}

inline ModelFile decode_model(std::span<const std::uint8_t> bytes) {
  std::span<const std::uint8_t> body;
  const auto meta = open_container("SLMD", bytes, body);
  ModelFile mf;
  try {
    mf.net.spec = spec_from_json(meta.at("spec"));
    const auto n = meta.at("n_params").get<std::size_t>();
    if (n != mf.net.spec.param_count())
      throw FormatError("model: spec implies " + std::to_string(mf.net.spec.param_count()) + " parameters, file declares " +
                        std::to_string(n));
    if (meta.contains("info")) mf.info = meta.at("info");
    const bool has_adam = meta.contains("adam");
    const std::size_t expect = n * 8 * (has_adam ? 3 : 1);
    if (body.size() != expect)
      throw FormatError("model: payload is " + std::to_string(body.size()) + " bytes, expected " + std::to_string(expect));
    ByteReader r(body);
    mf.net.params.resize(n);
    r.get_f64s(mf.net.params);
    if (has_adam) {
      const auto& a = meta.at("adam");
      AdamState st;
      st.lr = a.at("lr").get<Real>();
      st.beta1 = a.at("beta1").get<Real>();
      st.beta2 = a.at("beta2").get<Real>();
      st.eps = a.at("eps").get<Real>();
      st.step = a.at("step").get<std::int64_t>();
      st.m.resize(n);
      st.v.resize(n);
      r.get_f64s(st.m);
      r.get_f64s(st.v);
      mf.adam = std::move(st);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model: bad metadata: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("model: bad spec: ") + e.what());
  }
  return mf;
}

inline void save_model(const Network& net, const std::string& path, const AdamState* adam = nullptr,
                       const nlohmann::json& info = nlohmann::json::object()) {
  write_file(path, encode_model(net, adam, info));
}

inline ModelFile load_model_file(const std::string& path) { return decode_model(read_file(path)); }

inline Network load_model(const std::string& path) { return load_model_file(path).net; }

}  // namespace mlsl
