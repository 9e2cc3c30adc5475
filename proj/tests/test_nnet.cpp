#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "mlsl/classic_sl.hpp"
#include "mlsl/nnet.hpp"

using namespace mlsl;

namespace {

CellField<Grid1D> random_field(const Grid1D& g, Rng& rng, Real lo = 0.0, Real hi = 1.0) {
  CellField<Grid1D> u(g);
  for (auto& v : u.values) v = uniform(rng, lo, hi);
  return u;
}

CellField<Grid2D> random_field(const Grid2D& g, Rng& rng, Real lo = 0.0, Real hi = 1.0) {
  CellField<Grid2D> u(g);
  for (auto& v : u.values) v = uniform(rng, lo, hi);
  return u;
}

template <GridType G>
ShiftField<G> random_shifts(const G& g, Rng& rng, Real amp) {
  ShiftField<G> sh(g, 0.1);
  for (auto& v : sh.xi) v = uniform(rng, -amp, amp);
  for (auto& v : sh.eta) v = uniform(rng, -amp, amp);
  return sh;
}

// Direct periodic cross-correlation stack, written against the documented
// parameter layout without any im2col machinery.
std::vector<std::vector<Real>> naive_network(const Network& net, int nx, int ny, std::vector<std::vector<Real>> a) {
  const auto& sp = net.spec;
  const int r = sp.kernel / 2;
  const int ky = sp.dim == 1 ? 1 : sp.kernel;
  const int ry = sp.dim == 1 ? 0 : r;
  for (int l = 0; l < sp.n_layers; ++l) {
    const int cin = sp.layer_in(l), cout = sp.layer_out(l);
    const std::size_t w0 = net.weight_offset(l), b0 = net.bias_offset(l);
    std::vector<std::vector<Real>> z(cout, std::vector<Real>(static_cast<std::size_t>(nx) * ny));
    for (int co = 0; co < cout; ++co)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
          Real acc = net.params[b0 + co];
          for (int ci = 0; ci < cin; ++ci)
            for (int ty = 0; ty < ky; ++ty)
              for (int tx = 0; tx < sp.kernel; ++tx) {
                const std::size_t w = w0 + (static_cast<std::size_t>(co) * cin + ci) * sp.taps() + ty * sp.kernel + tx;
                const long si = wrap_index(i + tx - r, nx), sj = wrap_index(j + ty - ry, ny);
                acc += net.params[w] * a[ci][sj * nx + si];
              }
          z[co][static_cast<std::size_t>(j) * nx + i] = (l + 1 < sp.n_layers) ? std::max(acc, 0.0) : acc;
        }
    a = std::move(z);
  }
  return a;
}

Real rel_err(Real a, Real b) {
  const Real scale = std::max(std::abs(a), std::abs(b));
  return scale < 1e-9 ? std::abs(a - b) : std::abs(a - b) / scale;
}

Real single_step_loss(const Network& net, const CellField<Grid1D>& u, const ShiftField<Grid1D>& sh,
                      const CellField<Grid1D>& target) {
  return mse(apply_coefficients(u, forward(net, u, sh)), target);
}

}  // namespace

TEST(ConvSpec, ChannelsAndCounts) {
  ConvSpec c;
  EXPECT_EQ(c.in_channels(), 2);
  EXPECT_EQ(c.out_channels(), 5);
  c.dim = 2;
  EXPECT_EQ(c.in_channels(), 3);
  EXPECT_EQ(c.out_channels(), 25);
  ConvSpec tiny{1, 2, 3, 3, 1};
  // (3 * 2 * 3 + 3) + (3 * 3 * 3 + 3)
  EXPECT_EQ(tiny.param_count(), 21u + 30u);
  ConvSpec bad;
  bad.kernel = 4;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(ConstraintProject, ZeroRawGivesUniformWeights) {
  const Grid1D g(0.0, 1.0, 12);
  const auto d = constraint_project(CoeffField<Grid1D>(g, 2));
  for (Real v : d.d) EXPECT_NEAR(v, 0.2, 1e-16);
  const Grid2D g2(0.0, 1.0, 0.0, 1.0, 6, 7);
  const auto d2 = constraint_project(CoeffField<Grid2D>(g2, 1));
  for (Real v : d2.d) EXPECT_NEAR(v, 1.0 / 9.0, 1e-16);
}

TEST(ConstraintProject, ExactCoefficientsAreFixedPoint) {
  const Grid1D g(0.0, 1.0, 16);
  ShiftField<Grid1D> sh(g, 0.1);
  Rng rng = substream(41, 0);
  for (auto& v : sh.xi) v = uniform(rng, -0.8, 0.0);
  const auto d = exact_coefficients(sh, 2, 2);
  const auto p = constraint_project(d);
  for (std::size_t k = 0; k < d.d.size(); ++k) EXPECT_NEAR(p.d[k], d.d[k], 1e-14);
}

TEST(ConstraintProject, ColumnSumsAndIdempotence) {
  Rng rng = substream(42, 0);
  const Grid1D g(0.0, 1.0, 20);
  const Grid2D g2(0.0, 1.0, 0.0, 1.0, 9, 8);
  for (int trial = 0; trial < 20; ++trial) {
    CoeffField<Grid1D> raw(g, 2);
    for (auto& v : raw.d) v = uniform(rng, -3.0, 3.0);
    const auto p = constraint_project(raw);
    for (Real s : coeff_column_sums(p)) EXPECT_NEAR(s, 1.0, 1e-13);
    const auto pp = constraint_project(p);
    for (std::size_t k = 0; k < p.d.size(); ++k) EXPECT_NEAR(pp.d[k], p.d[k], 1e-13);

    CoeffField<Grid2D> raw2(g2, 2);
    for (auto& v : raw2.d) v = uniform(rng, -3.0, 3.0);
    const auto p2 = constraint_project(raw2);
    for (Real s : coeff_column_sums(p2)) EXPECT_NEAR(s, 1.0, 1e-13);
    const auto pp2 = constraint_project(p2);
    for (std::size_t k = 0; k < p2.d.size(); ++k) EXPECT_NEAR(pp2.d[k], p2.d[k], 1e-13);
  }
}

TEST(ConstraintProject, AffineStructure) {
  // P(x + c) - P(x) equals the linear part applied to c, which is c minus
  // its redistributed column sums.
  Rng rng = substream(43, 0);
  const Grid1D g(0.0, 1.0, 10);
  CoeffField<Grid1D> x(g, 1), c(g, 1);
  for (auto& v : x.d) v = uniform(rng, -1.0, 1.0);
  for (auto& v : c.d) v = uniform(rng, -1.0, 1.0);
  auto xc = x;
  for (std::size_t k = 0; k < x.d.size(); ++k) xc.d[k] += c.d[k];
  const auto px = constraint_project(x), pxc = constraint_project(xc);
  const auto lin = constraint_project_adjoint(c);
  for (std::size_t k = 0; k < x.d.size(); ++k) EXPECT_NEAR(pxc.d[k] - px.d[k], lin.d[k], 1e-13);
}

TEST(ConstraintProject, AdjointPassesDotProductTest) {
  Rng rng = substream(44, 0);
  const Grid2D g(0.0, 1.0, 0.0, 1.0, 7, 6);
  CoeffField<Grid2D> x(g, 2), y(g, 2), zero(g, 2);
  for (auto& v : x.d) v = uniform(rng, -1.0, 1.0);
  for (auto& v : y.d) v = uniform(rng, -1.0, 1.0);
  // linear part: P(x) - P(0)
  const auto px = constraint_project(x), p0 = constraint_project(zero);
  const auto aty = constraint_project_adjoint(y);
  Real lhs = 0.0, rhs = 0.0;
  for (std::size_t k = 0; k < x.d.size(); ++k) {
    lhs += (px.d[k] - p0.d[k]) * y.d[k];
    rhs += x.d[k] * aty.d[k];
  }
  EXPECT_NEAR(lhs, rhs, 1e-12 * std::abs(lhs) + 1e-13);
}

TEST(ApplyCoefficients, OneHotCases) {
  Rng rng = substream(45, 0);
  const Grid1D g(0.0, 1.0, 16);
  const auto u = random_field(g, rng);
  CoeffField<Grid1D> id(g, 2), left(g, 2);
  for (int i = 0; i < g.n; ++i) {
    id(i, 2) = 1.0;
    left(i, 1) = 1.0;
  }
  EXPECT_EQ(apply_coefficients(u, id).values, u.values);
  const auto shifted = apply_coefficients(u, left);
  for (int i = 0; i < g.n; ++i) EXPECT_EQ(shifted.values[i], u.values[wrap_index(i - 1, g.n)]);
}

TEST(ApplyCoefficients, MatchesClassicalStep) {
  Rng rng = substream(46, 0);
  const Grid1D g(0.0, 1.0, 32);
  ShiftField<Grid1D> sh(g, 0.1);
  std::fill(sh.xi.begin(), sh.xi.end(), -0.3);
  const auto u = random_field(g, rng);
  const auto a = apply_coefficients(u, exact_coefficients(sh, 2, 2));
  const auto b = sl_step_exact(u, sh, 2);
  for (int i = 0; i < g.n; ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-12);
}

TEST(Forward, MatchesNaiveConvolution1D) {
  Rng rng = substream(47, 0);
  const Grid1D g(0.0, 1.0, 24);
  for (int kernel : {3, 5}) {
    ConvSpec spec{1, 4, 6, kernel, 2};
    auto net = make_network(spec, 7);
    for (auto& p : net.params) p += uniform(rng, -0.1, 0.1);  // nonzero biases too
    const auto u = random_field(g, rng);
    const auto sh = random_shifts(g, rng, 1.5);
    const Matrix raw = network_forward(net, g, assemble_input(u, sh));
    const auto oracle = naive_network(net, g.n, 1, {u.values, sh.xi});
    for (int k = 0; k < spec.out_channels(); ++k)
      for (int i = 0; i < g.n; ++i) EXPECT_NEAR(raw(k, i), oracle[k][i], 1e-12);
  }
}

TEST(Forward, MatchesNaiveConvolution2D) {
  Rng rng = substream(48, 0);
  const Grid2D g(0.0, 1.0, 0.0, 1.0, 7, 6);
  for (int kernel : {3, 5}) {
    ConvSpec spec{2, 3, 5, kernel, 1};
    auto net = make_network(spec, 8);
    for (auto& p : net.params) p += uniform(rng, -0.1, 0.1);
    const auto u = random_field(g, rng);
    const auto sh = random_shifts(g, rng, 1.0);
    const Matrix raw = network_forward(net, g, assemble_input(u, sh));
    const auto oracle = naive_network(net, g.nx(), g.ny(), {u.values, sh.xi, sh.eta});
    for (int k = 0; k < spec.out_channels(); ++k)
      for (std::size_t c = 0; c < g.size(); ++c) EXPECT_NEAR(raw(k, c), oracle[k][c], 1e-12);
    // forward() = projection of the raw output
    const auto d = forward(net, u, sh);
    for (Real s : coeff_column_sums(d)) EXPECT_NEAR(s, 1.0, 1e-13);
  }
}

TEST(Forward, RotationEquivariant) {
  Rng rng = substream(49, 0);
  const Grid1D g(0.0, 1.0, 32);
  const auto net = make_network(ConvSpec{}, 9);
  const auto u = random_field(g, rng);
  const auto sh = random_shifts(g, rng, 1.5);
  const int c = 11;
  auto ur = u;
  auto shr = sh;
  for (int i = 0; i < g.n; ++i) {
    ur.values[wrap_index(i + c, g.n)] = u.values[i];
    shr.xi[wrap_index(i + c, g.n)] = sh.xi[i];
  }
  const auto d = forward(net, u, sh), dr = forward(net, ur, shr);
  for (int i = 0; i < g.n; ++i)
    for (int k = 0; k < 5; ++k) EXPECT_NEAR(dr(static_cast<int>(wrap_index(i + c, g.n)), k), d(i, k), 1e-13);

  const Grid2D g2(0.0, 1.0, 0.0, 1.0, 8, 8);
  ConvSpec s2;
  s2.dim = 2;
  s2.n_layers = 3;
  s2.filters = 8;
  const auto net2 = make_network(s2, 10);
  const auto u2 = random_field(g2, rng);
  const auto sh2 = random_shifts(g2, rng, 1.0);
  auto u2r = u2;
  auto sh2r = sh2;
  const int cx = 3, cy = 5;
  for (int j = 0; j < 8; ++j)
    for (int i = 0; i < 8; ++i) {
      const auto dst = g2.index(static_cast<int>(wrap_index(i + cx, 8)), static_cast<int>(wrap_index(j + cy, 8)));
      u2r.values[dst] = u2.values[g2.index(i, j)];
      sh2r.xi[dst] = sh2.xi[g2.index(i, j)];
      sh2r.eta[dst] = sh2.eta[g2.index(i, j)];
    }
  const auto e = forward(net2, u2, sh2), er = forward(net2, u2r, sh2r);
  for (int j = 0; j < 8; ++j)
    for (int i = 0; i < 8; ++i)
      for (int k = 0; k < 25; ++k) {
        const auto dst = g2.index(static_cast<int>(wrap_index(i + cx, 8)), static_cast<int>(wrap_index(j + cy, 8)));
        EXPECT_NEAR(er.at(k, dst), e.at(k, g2.index(i, j)), 1e-13);
      }
}

TEST(Forward, ConservesMassForAnyWeights) {
  Rng rng = substream(50, 0);
  const Grid1D g(0.0, 1.0, 32);
  const Grid2D g2(0.0, 1.0, 0.0, 1.0, 12, 12);
  for (int trial = 0; trial < 10; ++trial) {
    auto net = make_network(ConvSpec{}, 100 + trial);
    for (auto& p : net.params) p *= uniform(rng, 0.5, 3.0);
    const auto u = random_field(g, rng);
    const Real m0 = total_mass(u);
    const Real m1 = total_mass(apply_coefficients(u, forward(net, u, random_shifts(g, rng, 2.0))));
    EXPECT_LE(std::abs(m1 - m0), 1e-12 * std::abs(m0));

    ConvSpec s2;
    s2.dim = 2;
    s2.n_layers = 3;
    s2.filters = 6;
    s2.kernel = 3;
    const auto net2 = make_network(s2, 200 + trial);
    const auto u2 = random_field(g2, rng);
    const Real n0 = total_mass(u2);
    const Real n1 = total_mass(apply_coefficients(u2, forward(net2, u2, random_shifts(g2, rng, 2.0))));
    EXPECT_LE(std::abs(n1 - n0), 1e-12 * std::abs(n0));
  }
}

TEST(DonorCell, MatchesPiecewiseConstantReconstruction1D) {
  Rng rng = substream(60, 0);
  const Grid1D g(0.0, 1.0, 24);
  for (Real base : {-1.7, -0.6, 0.0, 0.9}) {
    auto sh = random_shifts(g, rng, 0.25);
    for (auto& v : sh.xi) v += base;
    const auto d = donor_cell_coefficients(sh, 2);
    const auto e = exact_coefficients(sh, 0, 2);
    for (std::size_t k = 0; k < d.d.size(); ++k) EXPECT_NEAR(d.d[k], e.d[k], 1e-14);
  }
  ShiftField<Grid1D> far(g, 0.1);
  std::fill(far.xi.begin(), far.xi.end(), -2.5);
  const auto clipped = donor_cell_coefficients(far, 2);
  for (int i = 0; i < g.n; ++i) {
    EXPECT_DOUBLE_EQ(clipped(i, 0), 0.5);
    for (int k = 1; k < 5; ++k) EXPECT_EQ(clipped(i, k), 0.0);
  }
}

TEST(DonorCell, ConstantShiftIsTensorProduct2D) {
  const Grid2D g(0.0, 1.0, 0.0, 1.0, 6, 5);
  ShiftField<Grid2D> sh(g, 0.1);
  std::fill(sh.xi.begin(), sh.xi.end(), -0.3);
  std::fill(sh.eta.begin(), sh.eta.end(), -1.4);
  const auto d = donor_cell_coefficients(sh, 2);
  // x: [i - 0.3, i + 0.7] covers 0.3 of cell i - 1; y: [j - 1.4, j - 0.4] covers 0.4 of j - 2
  const Real wx[5] = {0.0, 0.3, 0.7, 0.0, 0.0};
  const Real wy[5] = {0.4, 0.6, 0.0, 0.0, 0.0};
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 6; ++i)
      for (int p = 0; p < 5; ++p)
        for (int q = 0; q < 5; ++q) EXPECT_NEAR(d(i, j, p, q), wx[p] * wy[q], 1e-14);
}

TEST(DonorCell, GateVanishesOnCellFaces) {
  const Grid1D g(0.0, 1.0, 8);
  ShiftField<Grid1D> sh(g, 0.1);
  std::fill(sh.xi.begin(), sh.xi.end(), -1.0);
  for (Real v : donor_cell_gate(sh)) EXPECT_EQ(v, 0.0);
  std::fill(sh.xi.begin(), sh.xi.end(), -0.5);
  for (Real v : donor_cell_gate(sh)) EXPECT_NEAR(v, 1.0, 1e-15);
  std::fill(sh.xi.begin(), sh.xi.end(), -1.25);
  for (Real v : donor_cell_gate(sh)) EXPECT_NEAR(v, 0.75, 1e-15);

  const Grid2D g2(0.0, 1.0, 0.0, 1.0, 4, 4);
  ShiftField<Grid2D> sh2(g2, 0.1);
  std::fill(sh2.xi.begin(), sh2.xi.end(), 2.0);
  std::fill(sh2.eta.begin(), sh2.eta.end(), -0.5);
  for (Real v : donor_cell_gate(sh2)) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(DonorCell, BaselineWithSilentOutputIsExactAtIntegerShift) {
  ConvSpec spec{1, 3, 6, 3, 2};
  spec.donor_cell_baseline = true;
  auto net = make_network(spec, 4);
  for (std::size_t k = net.weight_offset(2); k < net.params.size(); ++k) net.params[k] = 0.0;
  Rng rng = substream(61, 0);
  const Grid1D g(0.0, 1.0, 16);
  const auto u = random_field(g, rng);
  ShiftField<Grid1D> sh(g, 0.1);
  std::fill(sh.xi.begin(), sh.xi.end(), -2.0);
  const auto v = apply_coefficients(u, forward(net, u, sh));
  for (int i = 0; i < g.n; ++i) EXPECT_NEAR(v.values[i], u.values[wrap_index(i - 2, g.n)], 1e-14);
  EXPECT_EQ(spec_from_json(spec_to_json(spec)), spec);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Rng rng = substream(51, 0);
  const Grid1D g(0.0, 1.0, 16);
  const auto net = make_network(ConvSpec{}, 11);
  ForwardTape<Grid1D> tape;
  const auto u = random_field(g, rng);
  forward(net, u, random_shifts(g, rng, 1.0), &tape);
  std::vector<Real> gp(net.params.size(), 0.0);
  const auto gu = backward(net, tape, CoeffField<Grid1D>(g, 2), gp);
  for (Real v : gp) EXPECT_EQ(v, 0.0);
  for (Real v : gu) EXPECT_EQ(v, 0.0);
  ForwardTape<Grid1D> empty;
  EXPECT_THROW(backward(net, empty, CoeffField<Grid1D>(g, 2), gp), std::logic_error);
}

TEST(Backward, MatchesFiniteDifferences) {
  Rng rng = substream(52, 0);
  const Grid1D g(0.0, 1.0, 16);
  auto net = make_network(ConvSpec{1, 4, 8, 5, 2}, 12);
  for (std::size_t l = 0; l < 4; ++l)  // nonzero biases so every layer is exercised
    for (int co = 0; co < net.spec.layer_out(static_cast<int>(l)); ++co)
      net.params[net.bias_offset(static_cast<int>(l)) + co] = uniform(rng, -0.1, 0.1);
  const auto u = random_field(g, rng);
  const auto sh = random_shifts(g, rng, 1.2);
  const auto target = random_field(g, rng);

  ForwardTape<Grid1D> tape;
  const auto d = forward(net, u, sh, &tape);
  const auto pred = apply_coefficients(u, d);
  std::vector<Real> g_out(g.size());
  for (std::size_t c = 0; c < g.size(); ++c) g_out[c] = 2.0 * (pred.values[c] - target.values[c]) / g.n;
  CoeffField<Grid1D> g_d;
  std::vector<Real> g_u(g.size(), 0.0);
  apply_coefficients_backward(u, d, g_out, g_d, g_u);
  std::vector<Real> gp(net.params.size(), 0.0);
  const auto g_in = backward(net, tape, g_d, gp);

  Real worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto k = static_cast<std::size_t>(uniform_index(rng, net.params.size()));
    auto plus = net, minus = net;
    plus.params[k] += 1e-6;
    minus.params[k] -= 1e-6;
    const Real fd = (single_step_loss(plus, u, sh, target) - single_step_loss(minus, u, sh, target)) / 2e-6;
    worst = std::max(worst, rel_err(fd, gp[k]));
  }
  EXPECT_LE(worst, 1e-6);

  // input gradient: both paths through U (apply and the network input)
  for (int i : {0, 5, 11}) {
    auto up = u, um = u;
    up.values[i] += 1e-6;
    um.values[i] -= 1e-6;
    const Real fd = (single_step_loss(net, up, sh, target) - single_step_loss(net, um, sh, target)) / 2e-6;
    EXPECT_LE(rel_err(fd, g_u[i] + g_in[i]), 1e-6);
  }
}

TEST(Backward, NormalizedInputMatchesFiniteDifferences) {
  for (int mode : {0, 1, 2}) {
    SCOPED_TRACE(mode == 0 ? "plain" : mode == 1 ? "donor-cell baseline" : "baseline in upstream frame");
    Rng rng = substream(54, 0);
    const Grid1D g(0.0, 1.0, 12);
    ConvSpec spec{1, 3, 6, 3, 2};
    spec.normalize_input = true;
    spec.donor_cell_baseline = mode > 0;
    spec.upstream_frame = mode == 2;
    auto net = make_network(spec, 14);
    for (int l = 0; l < 3; ++l)
      for (int co = 0; co < spec.layer_out(l); ++co) net.params[net.bias_offset(l) + co] = uniform(rng, -0.1, 0.1);
    // the output layer is initialized small; enlarge it so the input path matters
    for (std::size_t k = net.weight_offset(2); k < net.bias_offset(2); ++k) net.params[k] *= 100.0;
    auto u = random_field(g, rng);
    u.values[7] = -2.0;  // the scale comes from a negative entry
    auto sh = random_shifts(g, rng, 0.45);
    for (auto& v : sh.xi) v -= 0.8;  // integer parts -1 and -2 both occur
    const auto target = random_field(g, rng);

    ForwardTape<Grid1D> tape;
    const auto d = forward(net, u, sh, &tape);
    EXPECT_EQ(tape.scale_arg, 7u);
    const auto pred = apply_coefficients(u, d);
    std::vector<Real> g_out(g.size());
    for (std::size_t c = 0; c < g.size(); ++c) g_out[c] = 2.0 * (pred.values[c] - target.values[c]) / g.n;
    CoeffField<Grid1D> g_d;
    std::vector<Real> g_u(g.size(), 0.0);
    apply_coefficients_backward(u, d, g_out, g_d, g_u);
    std::vector<Real> gp(net.params.size(), 0.0);
    const auto g_in = backward(net, tape, g_d, gp);
    for (int i = 0; i < g.n; ++i) {
      auto up = u, um = u;
      up.values[i] += 1e-6;
      um.values[i] -= 1e-6;
      const Real fd = (single_step_loss(net, up, sh, target) - single_step_loss(net, um, sh, target)) / 2e-6;
      EXPECT_LE(rel_err(fd, g_u[i] + g_in[i]), 1e-6) << "cell " << i;
    }
    for (std::size_t k : {std::size_t{0}, std::size_t{17}, net.weight_offset(2) + 3, net.params.size() - 1}) {
      auto np = net, nm = net;
      np.params[k] += 1e-6;
      nm.params[k] -= 1e-6;
      const Real fd = (single_step_loss(np, u, sh, target) - single_step_loss(nm, u, sh, target)) / 2e-6;
      EXPECT_LE(rel_err(fd, gp[k]), 1e-6) << "param " << k;
    }

    // coefficients are invariant under positive rescaling of U
    auto scaled = u;
    for (Real& v : scaled.values) v *= 3.5;
    const auto d2 = forward(net, scaled, sh);
    for (std::size_t k = 0; k < d.d.size(); ++k) EXPECT_NEAR(d2.d[k], d.d[k], 1e-13);
    EXPECT_EQ(spec_from_json(spec_to_json(spec)), spec);
  }
}

TEST(Backward, UpstreamFrameMatchesFiniteDifferences2D) {
  Rng rng = substream(55, 0);
  const Grid2D g(0.0, 1.0, 0.0, 1.0, 6, 5);
  ConvSpec spec{2, 3, 4, 3, 2};
  spec.normalize_input = true;
  spec.donor_cell_baseline = true;
  spec.upstream_frame = true;
  auto net = make_network(spec, 15);
  for (std::size_t k = net.weight_offset(2); k < net.bias_offset(2); ++k) net.params[k] *= 100.0;
  const auto u = random_field(g, rng, -1.0, 1.0);
  auto sh = random_shifts(g, rng, 0.3);
  for (auto& v : sh.xi) v -= 0.9;
  for (auto& v : sh.eta) v += 0.4;
  const auto target = random_field(g, rng);
  const auto loss = [&](const Network& n, const CellField<Grid2D>& v) {
    return mse(apply_coefficients(v, forward(n, v, sh)), target);
  };

  ForwardTape<Grid2D> tape;
  const auto d = forward(net, u, sh, &tape);
  ASSERT_TRUE(tape.frame.has_value());
  const auto pred = apply_coefficients(u, d);
  std::vector<Real> g_out(g.size());
  for (std::size_t c = 0; c < g.size(); ++c)
    g_out[c] = 2.0 * (pred.values[c] - target.values[c]) / static_cast<Real>(g.size());
  CoeffField<Grid2D> g_d;
  std::vector<Real> g_u(g.size(), 0.0);
  apply_coefficients_backward(u, d, g_out, g_d, g_u);
  std::vector<Real> gp(net.params.size(), 0.0);
  const auto g_in = backward(net, tape, g_d, gp);
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto up = u, um = u;
    up.values[i] += 1e-6;
    um.values[i] -= 1e-6;
    EXPECT_LE(rel_err((loss(net, up) - loss(net, um)) / 2e-6, g_u[i] + g_in[i]), 1e-6) << "cell " << i;
  }
  for (std::size_t k : {std::size_t{3}, net.weight_offset(1) + 7, net.weight_offset(2) + 11, net.params.size() - 2}) {
    auto np = net, nm = net;
    np.params[k] += 1e-6;
    nm.params[k] -= 1e-6;
    EXPECT_LE(rel_err((loss(np, u) - loss(nm, u)) / 2e-6, gp[k]), 1e-6) << "param " << k;
  }
}

TEST(UpstreamFrame, IntegerShiftOfTheVelocityShiftsTheNetwork) {
  // constant flow: at shift xi - 1 the network sees the field of shift xi one cell later
  ConvSpec spec{1, 3, 6, 3, 2};
  spec.normalize_input = true;
  spec.donor_cell_baseline = true;
  spec.upstream_frame = true;
  const auto net = make_network(spec, 21);
  Rng rng = substream(62, 0);
  const Grid1D g(0.0, 1.0, 20);
  const auto u = random_field(g, rng);
  ShiftField<Grid1D> a(g, 0.1), b(g, 0.1);
  std::fill(a.xi.begin(), a.xi.end(), -0.25);
  std::fill(b.xi.begin(), b.xi.end(), -1.25);
  ForwardTape<Grid1D> ta, tb;
  forward(net, u, a, &ta);
  forward(net, u, b, &tb);
  const Matrix& ra = ta.acts.back();
  const Matrix& rb = tb.acts.back();
  for (int i = 0; i < g.n; ++i)
    for (int k = 0; k < 5; ++k) EXPECT_NEAR(rb(k, wrap_index(i + 1, g.n)), ra(k, i), 1e-13);

  // placement: identity at xi in [-1, 0), one cell further upstream below, channel 0 dropped
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(frame_channel<Grid1D>(*ta.frame, 3, k, 2), k);
    EXPECT_EQ(frame_channel<Grid1D>(*tb.frame, 3, k, 2), k - 1);
  }
}

TEST(Backward, MassIsInsensitiveToWeights) {
  Rng rng = substream(53, 0);
  const Grid2D g(0.0, 1.0, 0.0, 1.0, 8, 8);
  ConvSpec spec;
  spec.dim = 2;
  spec.n_layers = 3;
  spec.filters = 6;
  const auto net = make_network(spec, 13);
  const auto u = random_field(g, rng);
  ForwardTape<Grid2D> tape;
  const auto d = forward(net, u, random_shifts(g, rng, 1.0), &tape);
  std::vector<Real> g_out(g.size(), g.cell_volume());
  CoeffField<Grid2D> g_d;
  std::vector<Real> g_u(g.size(), 0.0);
  apply_coefficients_backward(u, d, g_out, g_d, g_u);
  std::vector<Real> gp(net.params.size(), 0.0);
  backward(net, tape, g_d, gp);
  for (Real v : gp) EXPECT_NEAR(v, 0.0, 1e-10);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<Real> p{1.0, -2.0, 0.5};
  const auto before = p;
  AdamState st;
  adam_update(p, {0.0, 0.0, 0.0}, st);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 1);
  EXPECT_THROW(adam_update(p, {0.0}, st), ShapeError);
}

TEST(Adam, FirstStepIsLrTimesSign) {
  std::vector<Real> p{0.0, 0.0};
  AdamState st;
  adam_update(p, {3.0, -0.02}, st);
  EXPECT_NEAR(p[0], -1e-3, 1e-9);
  EXPECT_NEAR(p[1], 1e-3, 1e-9);
}

TEST(Adam, MinimizesScalarQuadratic) {
  std::vector<Real> p{0.0};
  AdamState st;
  st.lr = 0.05;
  for (int k = 0; k < 1000; ++k) adam_update(p, {2.0 * (p[0] - 1.5)}, st);
  EXPECT_NEAR(p[0], 1.5, 1e-3);
}

TEST(ClipGlobalNorm, ScalesDown) {
  std::vector<Real> g{3.0, 4.0};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0], 0.6, 1e-15);
  EXPECT_NEAR(g[1], 0.8, 1e-15);
  std::vector<Real> small{0.1};
  clip_global_norm(small, 1.0);
  EXPECT_EQ(small[0], 0.1);
}

TEST(ModelFile, RoundTripIsBitExact) {
  Rng rng = substream(54, 0);
  const auto net = make_network(ConvSpec{}, 14);
  const auto bytes = encode_model(net);
  const auto path = (std::filesystem::temp_directory_path() / "mlsl_test_model.slmd").string();
  save_model(net, path);
  const auto back = load_model(path);
  EXPECT_EQ(encode_model(back), bytes);
  EXPECT_EQ(back.params, net.params);
  const Grid1D g(0.0, 1.0, 32);
  const auto u = random_field(g, rng);
  const auto sh = random_shifts(g, rng, 1.0);
  EXPECT_EQ(forward(back, u, sh).d, forward(net, u, sh).d);
  std::filesystem::remove(path);
}

TEST(ModelFile, CarriesOptimizerState) {
  auto net = make_network(ConvSpec{1, 2, 4, 3, 1}, 15);
  AdamState st;
  std::vector<Real> grads(net.params.size(), 0.25);
  adam_update(net.params, grads, st);
  const auto mf = decode_model(encode_model(net, &st, {{"epochs_done", 3}}));
  ASSERT_TRUE(mf.adam.has_value());
  EXPECT_EQ(mf.adam->step, 1);
  EXPECT_EQ(mf.adam->m, st.m);
  EXPECT_EQ(mf.adam->v, st.v);
  EXPECT_EQ(mf.info.at("epochs_done"), 3);
}

TEST(ModelFile, RejectsMismatchAndCorruption) {
  const auto net = make_network(ConvSpec{1, 2, 4, 3, 1}, 16);
  // spec claims a bigger network than the payload holds
  auto meta = nlohmann::json{{"format", "SLMD1"}, {"spec", spec_to_json(ConvSpec{1, 3, 4, 3, 1})},
                             {"n_params", ConvSpec{1, 3, 4, 3, 1}.param_count()}};
  ByteWriter w = begin_container("SLMD", meta);
  w.put_f64s(net.params);
  finish_container(w);
  try {
    decode_model(w.bytes());
    FAIL() << "expected payload length error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("payload"), std::string::npos);
  }

  auto bytes = encode_model(net);
  bytes[bytes.size() - 10] ^= 1;
  EXPECT_THROW(decode_model(bytes), FormatError);
  auto truncated = encode_model(net);
  truncated.resize(truncated.size() / 2);
  EXPECT_THROW(decode_model(truncated), FormatError);
  auto tag = encode_model(net);
  tag[0] = 'Q';
  EXPECT_THROW(decode_model(tag), FormatError);
}
