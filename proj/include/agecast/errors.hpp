#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace agecast {

// Staleness counter: slots since the cached copy was last fetched.
using Tau = std::int64_t;

// Threshold sentinel meaning "never fetch in this request state".
inline constexpr Tau kNeverFetch = std::numeric_limits<Tau>::max();

enum class Action : std::uint8_t { Idle = 0, Fetch = 1 };

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input validation failure; the message names the offending field.
struct ConfigError : Error {
  using Error::Error;
};

// Value iteration hit the iteration cap before the span tolerance was met.
struct NotConverged : Error {
  double residual;
  long iterations;
  NotConverged(double residual_, long iterations_)
      : Error("value iteration did not converge: residual " +
              std::to_string(residual_) + " after " +
              std::to_string(iterations_) + " sweeps"),
        residual(residual_),
        iterations(iterations_) {}
};

// Oracle policy is not monotone in staleness for some request state.
struct NonThreshold : Error {
  using Error::Error;
};

// Requested state space exceeds the supported size.
struct RefuseTooLarge : Error {
  using Error::Error;
};

// Heterogeneous cost models are not scalar multiples of one shared shape,
// so request configurations have no staleness-independent ranking.
struct NonProportionalCosts : Error {
  using Error::Error;
};

// The expected age cost never reaches the requested level (flat cost model).
struct DegenerateCost : Error {
  using Error::Error;
};

// A renewal-cycle scan passed the hard cap; the threshold is effectively
// infinite for this price.
struct CapExceeded : Error {
  using Error::Error;
};

// The fixed-point residual has the same sign at both ends of the initial
// bracket, which only happens for degenerate inputs.
struct NoBracket : Error {
  using Error::Error;
};

}  // namespace agecast
