#pragma once

// Portable sampling helpers on top of std::mt19937_64. The standard
// distributions are implementation-defined, so the few we need are written out
// here to keep generated datasets and trained weights reproducible.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace flowctl {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds from a master seed.
constexpr std::uint64_t mix_seed(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index)
{
  return mix_seed(mix_seed(master ^ mix_seed(stream)) + index);
}

/// Uniform on [0, 1) with 53 random bits.
inline double uniform01(Rng & rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng & rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Unbiased uniform integer on {0, ..., n-1}.
inline std::uint64_t uniform_index(Rng & rng, std::uint64_t n)
{
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do { x = rng(); } while (x >= limit);
  return x % n;
}

/// Box-Muller, one variate per call (no cached spare).
inline double standard_normal(Rng & rng)
{
  double u1;
  do { u1 = uniform01(rng); } while (u1 <= 0.0);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template<typename It>
void shuffle(It first, It last, Rng & rng)
{
  const auto n = last - first;
  for (auto i = n - 1; i > 0; --i) {
    const auto j = static_cast<decltype(i)>(uniform_index(rng, static_cast<std::uint64_t>(i + 1)));
    std::swap(first[i], first[j]);
  }
}

}  // namespace flowctl
