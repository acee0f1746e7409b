#pragma once

#include <cmath>
#include <cstdint>

namespace gcpo::rng {

// Counter-based randomness: every draw is a pure hash of (seed, key words),
// so re-sampling position t under the same seed reproduces the same value no
// matter how many draws happened elsewhere. All training, rollout, and
// analysis randomness goes through here; nothing keeps generator state.

// Stream tags keep unrelated draw families on a shared seed from colliding.
enum Stream : std::uint64_t {
  kParamInit = 1,
  kRollout = 2,
  kRandomMask = 3,
  kTrial = 4,
};

/// SplitMix64 finalizer; bijective on 64-bit words.
inline std::uint64_t mix(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

inline std::uint64_t absorb(std::uint64_t h, std::uint64_t word) {
  return mix(h + 0x9E3779B97F4A7C15ULL + word);
}

/// Hash a seed plus any number of key words into a new 64-bit key.
template <class... Words>
std::uint64_t derive(std::uint64_t seed, Words... words) {
  std::uint64_t h = mix(seed + 0x9E3779B97F4A7C15ULL);
  ((h = absorb(h, static_cast<std::uint64_t>(words))), ...);
  return h;
}

/// Uniform double in [0, 1) keyed by (seed, words...).
template <class... Words>
double uniform01(std::uint64_t seed, Words... words) {
  return static_cast<double>(derive(seed, words...) >> 11) * 0x1.0p-53;
}

/// Uniform double strictly inside (0, 1); safe under log().
template <class... Words>
double uniform01_open(std::uint64_t seed, Words... words) {
  return (static_cast<double>(derive(seed, words...) >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal draw (Box-Muller) keyed by (seed, index).
inline double normal(std::uint64_t seed, std::uint64_t index) {
  const double u1 = uniform01_open(seed, 2 * index);
  const double u2 = uniform01(seed, 2 * index + 1);
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

}  // namespace gcpo::rng
