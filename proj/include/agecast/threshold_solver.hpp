#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "agecast/params.hpp"

namespace agecast {

// Optimal fetching rule: fetch exactly when the staleness tau reaches the
// threshold for the observed request state. Homogeneous populations have one
// threshold per request count m = 1..N. Heterogeneous populations have one
// per nonempty request configuration, ordered by ascending configuration
// weight (solve_heterogeneous defines that ordering).
struct ThresholdPolicy {
  double theta = 0.0;             // long-run average cost at the fixed point
  std::vector<Tau> thresholds;    // index m-1 (count) or rank-1 (configuration)
  std::map<Tau, double> g_table;  // saturating relative-value gap on 2..threshold(1)
  long iterations = 0;

  // Heterogeneous bookkeeping; empty for homogeneous solutions. Users whose
  // cost weight or request probability is zero are masked out of the
  // enumeration, so configuration bitmasks range over active_users only.
  bool heterogeneous = false;
  std::vector<int> active_users;
  std::vector<std::uint32_t> rank_to_config;  // rank r >= 1 -> bitmask
  std::vector<std::int32_t> config_to_rank;   // bitmask -> rank, 0 = empty

  Tau threshold_for_count(int m) const;
  Tau threshold_for_request_vector(const std::vector<std::uint8_t>& s) const;
};

// One damped fixed-point run, kept for convergence diagnostics and the
// iteration-trace exports.
struct FixedPointTrace {
  std::vector<std::pair<double, double>> steps;  // (theta_l, f(theta_l))
  std::vector<std::vector<Tau>> threshold_history;
  double alpha_final = 0.0;
  bool converged = false;
  bool used_bisection = false;
};

// One backward sweep at a fixed theta: the relative-value recursion from the
// saturation level down to staleness 2, the thresholds it implies, and the
// stationarity value f(theta). degenerate marks the threshold(1) = 1 case
// where the sweep is empty and f comes straight from the one-slot case split.
struct SweepResult {
  double f_value = 0.0;
  std::vector<Tau> thresholds;
  std::map<Tau, double> g_table;
  bool degenerate = false;
};

// Homogeneous sweep; requires theta > 0. f is continuous and nonincreasing in
// theta, which the solver exploits for its bisection fallback.
SweepResult f_of_theta(const SystemParams& params, double theta);

// Damped iteration theta <- alpha*f(theta) + (1-alpha)*theta with adaptive
// alpha halving on oscillation, a maintained root bracket on f(theta) - theta,
// and a bisection fallback after 500 damped steps. theta0 <= 0 selects
// fetch_cost / 2. Throws NoBracket when the residual does not change sign on
// (0, fetch_cost], which only degenerate inputs can produce.
std::pair<ThresholdPolicy, FixedPointTrace> solve_homogeneous(
    const SystemParams& params, double theta0 = 0.0, double eps = 1e-6,
    double alpha0 = 0.1);

// Enumerates request configurations (at most 12 active users), ranks them by
// total cost weight, and runs the same sweep with exact configuration
// probabilities in place of binomial weights. Requires every active cost
// model to be a positive scalar multiple of one shared shape; otherwise the
// ranking would depend on tau and NonProportionalCosts is thrown.
ThresholdPolicy solve_heterogeneous(const SystemParams& params);

}  // namespace agecast
