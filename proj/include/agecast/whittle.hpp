#pragma once

#include <cstdint>
#include <vector>

#include "agecast/params.hpp"

namespace agecast {

// One user's decoupled fetching problem: pay a price per fetch, accrue that
// user's expected age cost on requested slots, renew on every fetch.
struct SingleUserProblem {
  double q = 0.0;  // request probability, must be positive
  AgeCostModel cost_model = AgeCostModel::linear(0.0);
  double p = 0.0;  // update probability
};

// Cycle length minimizing the renewal ratio
//   (q * sum_{x<tau} avg_cost(x) + price) / (tau + (1-q)/q)
// for price > 0. The ratio is unimodal for convex increasing cost, so the
// scan stops after three consecutive strict increases; CapExceeded signals a
// scan past 10^6 (flat cost model, effectively infinite threshold).
Tau renewal_threshold(const SingleUserProblem& sup, double price);

// Smallest price at which the renewal threshold moves past tau, located by
// doubling from tol and bisecting to absolute tolerance tol. The returned
// value is the upper bisection endpoint, so it always satisfies
// renewal_threshold(value) > tau; at exact tie points it sits tol above the
// infimum, which keeps the strict index-sum rule aligned with fetch-on-tie
// reference policies.
double index_g(const SingleUserProblem& sup, Tau tau, double tol = 1e-8);

// Per-user price table g_i(tau): the fetch incentive of user i at staleness
// tau, independent of how the shared fetch price is split across users.
// Values are clamped nondecreasing across tau; the exact quantity is provably
// monotone and bisection noise is below tol, so the clamp stays within tol of
// the truth. Rows extend on demand; extension mutates the table and needs
// external synchronization if shared across threads.
class WhittleIndexTable {
 public:
  // tau_cap <= 0 precomputes each row to 4x that user's renewal threshold at
  // price fetch_cost. Users with q = 0 or a flat cost model get a pinned
  // all-zero row (they never justify fetching).
  static WhittleIndexTable build(const SystemParams& params, double tol = 1e-8,
                                 Tau tau_cap = 0);

  double g_value(int user, Tau tau) const;
  int num_users() const { return static_cast<int>(users_.size()); }
  bool homogeneous() const { return homogeneous_; }
  double tol() const { return tol_; }
  const SingleUserProblem& user(int i) const { return users_[static_cast<std::size_t>(i)]; }
  bool degenerate_user(int i) const { return degenerate_[static_cast<std::size_t>(i)] != 0; }

 private:
  std::vector<SingleUserProblem> users_;
  std::vector<std::uint8_t> degenerate_;
  mutable std::vector<std::vector<double>> g_;
  double tol_ = 1e-8;
  bool homogeneous_ = false;

  void extend_row(int user, Tau tau) const;
};

// Subsidy-form index W(tau, s) for one user under an explicit price split
// alpha_cf = alpha_i * fetch_cost: g_i(tau) - alpha_cf when requesting,
// -alpha_cf when idle. Decisions never depend on the split; this form exists
// for the independence tests.
double whittle_index(const WhittleIndexTable& table, int user, Tau tau, bool s,
                     double alpha_cf);

// Index-sum rule: fetch iff the summed indices of requesting users strictly
// exceed the fetch cost and someone is requesting. Homogeneous tables use
// m * g(tau) so adapters and direct calls agree bit for bit.
Action wi_decide(const WhittleIndexTable& table, double fetch_cost, Tau tau,
                 const std::vector<std::uint8_t>& s);

// Homogeneous thresholds of the index-sum rule: smallest tau with
// m * g(tau) > fetch_cost for m = 1..num_users; kNeverFetch where the scan
// caps out.
std::vector<Tau> wi_thresholds_homogeneous(const WhittleIndexTable& table,
                                           double fetch_cost, int num_users);

}  // namespace agecast
