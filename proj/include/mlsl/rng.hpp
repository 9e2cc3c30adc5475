#pragma once
/// @file rng.hpp
/// @brief Seeded random streams. Every consumer derives its own substream
/// from (seed, stream id) so results do not depend on call order.

#include <cstdint>
#include <random>

#include "core.hpp"

namespace mlsl {

using Rng = std::mt19937_64;

inline Rng substream(std::uint64_t seed, std::uint64_t stream, std::uint64_t sub = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(sub), static_cast<std::uint32_t>(sub >> 32)};
  return Rng(seq);
}

/// Uniform draw in [lo, hi) from the top 53 bits; portable across standard
/// libraries, unlike std::uniform_real_distribution.
inline Real uniform(Rng& g, Real lo, Real hi) {
  const Real u = static_cast<Real>(g() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

/// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& g, std::uint64_t n) {
  // rejection keeps the draw unbiased
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do v = g();
  while (v >= limit);
  return v % n;
}

/// Fisher-Yates shuffle driven by uniform_index.
template <class Vec>
void shuffle(Vec& v, Rng& g) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(g, i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace mlsl
