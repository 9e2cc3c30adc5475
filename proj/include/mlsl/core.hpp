#pragma once
/// @file core.hpp
/// @brief Periodic uniform grids, cell/shift/coefficient fields and the
/// reductions shared by every solver in the library.
///
/// Storage conventions:
///   - cell (i, j) of a 2D grid lives at flat index j * nx + i (x fastest);
///     a 1D grid is treated as ny == 1.
///   - shift entry i (1D) is the departure shift of the left interface of
///     cell i, x_lo + i * h; shift entry (i, j) (2D) belongs to the lower-left
///     corner of cell (i, j).
///   - coefficient fields are channel-major: d(k, cell). Channel k of a 1D
///     field reads source cell i - s + k; channel k = p * (2s+1) + q of a 2D
///     field reads source cell (i - s + p, j - s + q).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace mlsl {

using Real = double;

/// Raised when two fields that must share a layout do not.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Periodic index in [0, n).
constexpr long wrap_index(long i, long n) {
  const long r = i % n;
  return r < 0 ? r + n : r;
}

struct Grid1D {
  static constexpr int dim = 1;

  Real x_lo = 0.0;
  Real x_hi = 1.0;
  int n = 1;

  Grid1D() = default;
  Grid1D(Real lo, Real hi, int cells) : x_lo(lo), x_hi(hi), n(cells) {
    if (cells < 1) throw std::invalid_argument("Grid1D: n_cells must be positive");
    if (!(hi > lo)) throw std::invalid_argument("Grid1D: x_hi must exceed x_lo");
  }

  Real h() const { return (x_hi - x_lo) / n; }
  Real length() const { return x_hi - x_lo; }
  int nx() const { return n; }
  int ny() const { return 1; }
  std::size_t size() const { return static_cast<std::size_t>(n); }
  Real cell_volume() const { return h(); }
  Real center(int i) const { return x_lo + (i + 0.5) * h(); }
  Real face(int i) const { return x_lo + i * h(); }

  bool operator==(const Grid1D&) const = default;
};

struct Grid2D {
  static constexpr int dim = 2;

  Real x_lo = 0.0, x_hi = 1.0;
  Real y_lo = 0.0, y_hi = 1.0;
  int n_x = 1, n_y = 1;

  Grid2D() = default;
  Grid2D(Real xlo, Real xhi, Real ylo, Real yhi, int cells_x, int cells_y)
      : x_lo(xlo), x_hi(xhi), y_lo(ylo), y_hi(yhi), n_x(cells_x), n_y(cells_y) {
    if (cells_x < 1 || cells_y < 1)
      throw std::invalid_argument("Grid2D: cell counts must be positive");
    if (!(xhi > xlo) || !(yhi > ylo))
      throw std::invalid_argument("Grid2D: empty domain");
  }

  Real hx() const { return (x_hi - x_lo) / n_x; }
  Real hy() const { return (y_hi - y_lo) / n_y; }
  int nx() const { return n_x; }
  int ny() const { return n_y; }
  std::size_t size() const { return static_cast<std::size_t>(n_x) * n_y; }
  Real cell_volume() const { return hx() * hy(); }
  Real center_x(int i) const { return x_lo + (i + 0.5) * hx(); }
  Real center_y(int j) const { return y_lo + (j + 0.5) * hy(); }
  Real face_x(int i) const { return x_lo + i * hx(); }
  Real face_y(int j) const { return y_lo + j * hy(); }
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(j) * n_x + static_cast<std::size_t>(i);
  }

  bool operator==(const Grid2D&) const = default;
};

template <class G>
concept GridType = std::is_same_v<G, Grid1D> || std::is_same_v<G, Grid2D>;

/// Cell averages at one time level.
template <GridType G>
struct CellField {
  G grid;
  std::vector<Real> values;
  Real time = 0.0;

  CellField() = default;
  explicit CellField(const G& g, Real t = 0.0) : grid(g), values(g.size(), 0.0), time(t) {}
  CellField(const G& g, std::vector<Real> v, Real t = 0.0)
      : grid(g), values(std::move(v)), time(t) {
    if (values.size() != grid.size()) throw ShapeError("CellField: value count does not match grid");
  }

  std::size_t size() const { return values.size(); }
  Real& operator[](std::size_t k) { return values[k]; }
  Real operator[](std::size_t k) const { return values[k]; }
};

/// Normalized departure shifts at interfaces (1D) or lower-left corners (2D).
template <GridType G>
struct ShiftField {
  G grid;
  std::vector<Real> xi;
  std::vector<Real> eta;  // empty in 1D
  Real dt = 0.0;

  ShiftField() = default;
  explicit ShiftField(const G& g, Real step = 0.0) : grid(g), xi(g.size(), 0.0), dt(step) {
    if constexpr (G::dim == 2) eta.assign(g.size(), 0.0);
  }

  Real max_abs() const {
    Real m = 0.0;
    for (Real v : xi) m = std::max(m, std::abs(v));
    for (Real v : eta) m = std::max(m, std::abs(v));
    return m;
  }
};

/// Stencil width per dimension for half-width s.
constexpr int stencil_width(int s) { return 2 * s + 1; }

template <GridType G>
constexpr int stencil_channels(int s) {
  return G::dim == 1 ? stencil_width(s) : stencil_width(s) * stencil_width(s);
}

/// Source-cell offset (dx, dy) read by channel k.
template <GridType G>
constexpr std::pair<int, int> stencil_offset(int k, int s) {
  if constexpr (G::dim == 1) {
    return {k - s, 0};
  } else {
    const int w = stencil_width(s);
    return {k / w - s, k % w - s};
  }
}

/// Per-target-cell stencil coefficients, channel-major.
template <GridType G>
struct CoeffField {
  G grid;
  int s = 0;
  std::vector<Real> d;

  CoeffField() = default;
  CoeffField(const G& g, int half_width)
      : grid(g), s(half_width), d(static_cast<std::size_t>(stencil_channels<G>(half_width)) * g.size(), 0.0) {
    if (half_width < 0) throw std::invalid_argument("CoeffField: negative stencil half-width");
  }

  int channels() const { return stencil_channels<G>(s); }
  std::size_t cells() const { return grid.size(); }

  Real& at(int k, std::size_t cell) { return d[static_cast<std::size_t>(k) * cells() + cell]; }
  Real at(int k, std::size_t cell) const { return d[static_cast<std::size_t>(k) * cells() + cell]; }

  // 1D: d[i][k] == d_{i, i-s+k}
  Real& operator()(int i, int k) requires(G::dim == 1) { return at(k, static_cast<std::size_t>(i)); }
  Real operator()(int i, int k) const requires(G::dim == 1) { return at(k, static_cast<std::size_t>(i)); }

  // 2D: d[i][j][p][q] == d_{ij, (i-s+p, j-s+q)}
  Real& operator()(int i, int j, int p, int q) requires(G::dim == 2) {
    return at(p * stencil_width(s) + q, grid.index(i, j));
  }
  Real operator()(int i, int j, int p, int q) const requires(G::dim == 2) {
    return at(p * stencil_width(s) + q, grid.index(i, j));
  }
};

/// Flat index of the cell at (i + dx, j + dy), wrapped periodically.
template <GridType G>
inline std::size_t shifted_cell(const G& g, std::size_t cell, int dx, int dy) {
  const long nx = g.nx();
  const long ny = g.ny();
  const long i = static_cast<long>(cell) % nx;
  const long j = static_cast<long>(cell) / nx;
  return static_cast<std::size_t>(wrap_index(j + dy, ny) * nx + wrap_index(i + dx, nx));
}

template <GridType G>
Real total_mass(const CellField<G>& f) {
  // extended accumulator; mass drift checks run at the 1e-12 level
  long double sum = 0.0L;
  for (Real v : f.values) sum += v;
  return static_cast<Real>(sum) * f.grid.cell_volume();
}

template <GridType G>
Real mse(const CellField<G>& a, const CellField<G>& b) {
  if (!(a.grid == b.grid) || a.size() != b.size()) throw ShapeError("mse: grid mismatch");
  if (a.size() == 0) return 0.0;
  Real acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const Real e = a.values[k] - b.values[k];
    acc += e * e;
  }
  return acc / static_cast<Real>(a.size());
}

/// Sum of coefficients over the region of influence of every source cell.
/// A scheme of the form U_new = d * U conserves mass iff all sums are one.
template <GridType G>
std::vector<Real> coeff_column_sums(const CoeffField<G>& d) {
  const std::size_t n = d.cells();
  std::vector<Real> sums(n, 0.0);
  for (int k = 0; k < d.channels(); ++k) {
    const auto [dx, dy] = stencil_offset<G>(k, d.s);
    for (std::size_t c = 0; c < n; ++c) sums[shifted_cell(d.grid, c, dx, dy)] += d.at(k, c);
  }
  return sums;
}

template <GridType G>
bool all_finite(const CellField<G>& f) {
  for (Real v : f.values)
    if (!std::isfinite(v)) return false;
  return true;
}

template <GridType G>
Real max_abs(const CellField<G>& f) {
  Real m = 0.0;
  for (Real v : f.values) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace mlsl
