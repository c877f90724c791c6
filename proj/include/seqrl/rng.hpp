#pragma once

#include <cstdint>
#include <random>

namespace seqrl {

// Named sub-streams derived from a master seed. Every random draw in the
// library comes from an engine seeded through derive_seed, so any component
// can be replayed in isolation.
enum class Stream : std::uint64_t {
  kInit = 1,
  kSelfPlay = 2,
  kEvaluation = 3,
  kNoise = 4,
  kClutter = 5,
  kTraining = 6,
  kProbe = 7,
  kCalibration = 8,
  kBaseline = 9,
  kDqn = 10,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                                           std::uint64_t a = 0,
                                           std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b + 0x632be59bd9b4e019ULL));
  return h;
}

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed) { return Engine(seed); }

// Uniform double in [0, 1) built from the top 53 bits; unlike
// std::uniform_real_distribution its output is fixed across standard libraries.
inline double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

inline std::uint64_t uniform_below(Engine& eng, std::uint64_t bound) {
  // Lemire-free simple rejection; bounds here are small.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = eng();
  } while (x >= limit);
  return x % bound;
}

}  // namespace seqrl
