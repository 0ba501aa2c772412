#pragma once

#include <cstdint>

namespace agecast {

// SplitMix64 finalizer. Used here as a counter-based generator: every draw is
// a pure function of (stream key, counter), so simulations can replay any
// slot, policies evaluated side by side see identical randomness, and runs
// are reproducible from the written-down seed alone.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream labels are part of the reproducibility contract: a report produced
// from a given seed stays valid as long as these assignments stay put.
enum class StreamPurpose : std::uint64_t {
  Update = 1,       // sensor-side content updates, one draw per slot
  Request = 2,      // per-user request indicators, one draw per user per slot
  Replication = 3,  // seed derivation for independent replications
};

struct RandomStream {
  std::uint64_t key = 0;

  static RandomStream derive(std::uint64_t seed, StreamPurpose purpose,
                             std::uint64_t user) {
    // distinct odd multipliers keep (purpose, user) pairs from aliasing
    const std::uint64_t purpose_salt =
        0x517cc1b727220a95ULL * static_cast<std::uint64_t>(purpose);
    return RandomStream{mix64(mix64(seed ^ purpose_salt) ^
                              (0x2545f4914f6cdd1dULL * (user + 1)))};
  }

  // uniform in [0, 1) with 53 random bits
  double uniform(std::uint64_t counter) const {
    return static_cast<double>(mix64(key ^ mix64(counter)) >> 11) * 0x1.0p-53;
  }

  bool bernoulli(std::uint64_t counter, double prob) const {
    return uniform(counter) < prob;
  }
};

}  // namespace agecast
