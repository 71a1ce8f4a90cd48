#pragma once

#include <cmath>
#include <cstdint>

namespace ead::rng {

// Counter-based randomness: every draw is a pure function of a 64-bit key.
// Decoding couples its lazy and exhaustive paths by sharing per-index keys,
// so the same (seed, stream, index) always yields the same variate no matter
// which code path asks for it.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(a) ^ (0x9e3779b97f4a7c15ULL + b));
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix(mix(a, b), c);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                         std::uint64_t d) {
  return mix(mix(a, b, c), d);
}

// Purpose tags keep independent uses of the same seed from colliding.
enum class Stream : std::uint64_t {
  kGumbelNoise = 0x67756d62,
  kRolloutSeed = 0x726f6c6c,
  kRolloutToken = 0x746f6b65,
  kTailCount = 0x74636e74,
  kTailSelect = 0x7473656c,
  kTailThin = 0x74746869,
  kTailGumbel = 0x74677562,
  kBaseline = 0x62617365,
  kStep = 0x73746570,
  kTrial = 0x7472696c,
  kScalar = 0x73636c72,
};

inline std::uint64_t substream(std::uint64_t seed, Stream s,
                               std::uint64_t a = 0, std::uint64_t b = 0) {
  return mix(seed, static_cast<std::uint64_t>(s), a, b);
}

/// Uniform in the open interval (0,1); never returns 0 or 1, so it is safe
/// under log(-log(u)).
inline double uniform01(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

inline double uniform_at(std::uint64_t key) {
  return uniform01(splitmix64(key));
}

inline double standard_gumbel_from_uniform(double u) {
  return -std::log(-std::log(u));
}

/// Small deterministic generator for loops that need a stream of values.
class Sequence {
 public:
  explicit Sequence(std::uint64_t seed) : state_(splitmix64(seed)) {}

  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  double next_uniform() { return uniform01(next()); }

  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    // Rejection-free multiply-shift; bias is negligible for n << 2^64.
    unsigned __int128 wide = static_cast<unsigned __int128>(next()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
  }

 private:
  std::uint64_t state_;
};

}  // namespace ead::rng
