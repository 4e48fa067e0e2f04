#ifndef SELAB_RNG_HPP
#define SELAB_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace selab {

// Counter-based generator: every draw is a pure function of its key, so two
// runs that visit the same (seed, episode, step, stream) see the same number
// on any platform.
inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct CounterKey {
  std::uint64_t seed = 0;
  std::uint64_t episode = 0;
  std::uint64_t step = 0;
  std::uint64_t stream = 0;
};

inline constexpr std::uint64_t hash_key(const CounterKey& k) noexcept {
  std::uint64_t h = splitmix64(k.seed);
  h = splitmix64(h ^ k.episode);
  h = splitmix64(h ^ (k.step + 0x632be59bd9b4e019ULL));
  h = splitmix64(h ^ (k.stream + 0x8cb92ba72f3d8dd7ULL));
  return h;
}

/// Uniform draw in [0, 1) with 53 random bits.
inline double uniform01(const CounterKey& k) noexcept {
  return static_cast<double>(hash_key(k) >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller on two sub-streams of the key.
inline double standard_normal(CounterKey k) noexcept {
  const std::uint64_t base = k.stream * 2;
  k.stream = base;
  double u1 = uniform01(k);
  k.stream = base + 1;
  const double u2 = uniform01(k);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Inverse-CDF draw from a probability row. Falls back to the last index with
/// positive mass when rounding leaves u above the cumulative total.
inline int sample_index(std::span<const double> probs, double u) noexcept {
  double acc = 0.0;
  int last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last_positive = static_cast<int>(i);
    if (u < acc) return static_cast<int>(i);
  }
  return last_positive;
}

}  // namespace selab

#endif  // SELAB_RNG_HPP
