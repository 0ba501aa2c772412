#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "agecast/params.hpp"

namespace agecast {

// Reference solution computed by relative value iteration on a truncated
// state space. Homogeneous runs index columns by the request count m = 0..N;
// heterogeneous runs index them by the request bitmask s (bit i = user i).
// Staleness is clamped at tau_max, and truncation_suspect reports whether the
// extracted policy sits close enough to the clamp to distrust the run.
struct OracleSolution {
  double theta = 0.0;
  Eigen::MatrixXd h;  // (tau_max) x (N+1 or 2^N); h(reference state) = 0
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> policy;
  long iterations = 0;
  double residual = 0.0;
  bool truncation_suspect = false;
  bool heterogeneous = false;
  int num_users = 0;
  Tau tau_max = 0;

  double h_at(Tau tau, int state) const {
    return h(static_cast<Eigen::Index>(tau - 1), state);
  }
  Action action_at(Tau tau, int state) const {
    return policy(static_cast<Eigen::Index>(tau - 1), state) != 0
               ? Action::Fetch
               : Action::Idle;
  }
};

// Value iteration over states (tau, m) for a homogeneous population. The
// greedy policy fetches on ties. Throws NotConverged when the span residual
// still exceeds tol after max_iters sweeps.
OracleSolution rvi_homogeneous(const SystemParams& params, Tau tau_max,
                               double tol = 1e-9, long max_iters = 200000);

// Same contract over states (tau, s) with independent per-user requests.
// Throws RefuseTooLarge for populations beyond 12 users.
OracleSolution rvi_heterogeneous(const SystemParams& params, Tau tau_max,
                                 double tol = 1e-9, long max_iters = 200000);

// First fetching staleness per request count m = 1..num_users, taken from a
// homogeneous solution. kNeverFetch marks all-idle columns. Throws
// NonThreshold if fetching is not upward closed in tau for some m.
std::vector<Tau> extract_thresholds(const OracleSolution& sol, int num_users);

// Heterogeneous counterpart keyed by request bitmask (index 0 = empty set).
std::vector<Tau> extract_config_thresholds(const OracleSolution& sol);

}  // namespace agecast
