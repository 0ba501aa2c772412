#include "agecast/oracle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <vector>

namespace agecast {

namespace {

// Aperiodicity damping: value iteration on the raw operator can cycle when
// the optimal policy induces a periodic chain (every-slot requests make the
// fetch cycle deterministic). Iterating (1-k)*T + k*I with costs scaled by
// (1-k) converges for any instance, leaves h and the greedy policy unchanged,
// and scales theta and the span residual by (1-k), which is undone on report.
constexpr double kAperiodicKappa = 0.5;

struct SweepOutcome {
  double theta = 0.0;
  double residual = 0.0;
  long iterations = 0;
};

// Shared RVI core. Columns are request states; state_prob[c] is the chance of
// landing in column c after any transition, idle_weight(tau, c) is the idle
// cost of column c at staleness tau. Fetch resets staleness to 1, idle
// advances it, clamped at tau_max.
template <typename IdleCost>
SweepOutcome rvi_core(Eigen::MatrixXd& h,
                      Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& policy,
                      const Eigen::VectorXd& state_prob, IdleCost&& idle_cost,
                      double fetch_cost, double tol, long max_iters) {
  const Eigen::Index tau_max = h.rows();
  const Eigen::Index cols = h.cols();
  Eigen::MatrixXd h_next(tau_max, cols);
  Eigen::VectorXd h_av(tau_max);

  SweepOutcome out;
  for (long iter = 1; iter <= max_iters; ++iter) {
    h_av.noalias() = h * state_prob;
    const double fetch_value = fetch_cost + h_av(0);
    double diff_min = std::numeric_limits<double>::infinity();
    double diff_max = -diff_min;
    for (Eigen::Index t = 0; t < tau_max; ++t) {
      const double idle_cont = h_av(std::min(t + 1, tau_max - 1));
      for (Eigen::Index c = 0; c < cols; ++c) {
        const double idle_value = idle_cost(t, c) + idle_cont;
        const double best = std::min(fetch_value, idle_value);
        const double damped = (1.0 - kAperiodicKappa) * best + kAperiodicKappa * h(t, c);
        const double diff = damped - h(t, c);
        diff_min = std::min(diff_min, diff);
        diff_max = std::max(diff_max, diff);
        h_next(t, c) = damped;
      }
    }
    h = h_next.array() - h_next(0, 0);
    out.theta = 0.5 * (diff_min + diff_max) / (1.0 - kAperiodicKappa);
    out.residual = (diff_max - diff_min) / (1.0 - kAperiodicKappa);
    out.iterations = iter;
    if (out.residual <= tol) break;
  }
  if (out.residual > tol) throw NotConverged(out.residual, out.iterations);

  // greedy policy off the converged values, fetching on ties
  h_av.noalias() = h * state_prob;
  const double fetch_value = fetch_cost + h_av(0);
  for (Eigen::Index t = 0; t < tau_max; ++t) {
    const double idle_cont = h_av(std::min(t + 1, tau_max - 1));
    for (Eigen::Index c = 0; c < cols; ++c) {
      policy(t, c) = fetch_value <= idle_cost(t, c) + idle_cont ? 1 : 0;
    }
  }
  return out;
}

// Threshold scan used for the truncation guard; never throws, kNeverFetch for
// all-idle columns.
Tau first_fetch(const OracleSolution& sol, int col) {
  for (Tau t = 1; t <= sol.tau_max; ++t) {
    if (sol.action_at(t, col) == Action::Fetch) return t;
  }
  return kNeverFetch;
}

// A finite threshold close to the clamp means the run needs a larger state
// space; so does a mix of finite and never-fetch thresholds across states
// with positive cost weight, which the threshold structure rules out for an
// untruncated chain.
bool truncation_suspect(const OracleSolution& sol,
                        const std::vector<int>& weighted_cols) {
  bool any_finite = false;
  bool any_never = false;
  for (int c : weighted_cols) {
    const Tau t = first_fetch(sol, c);
    if (t == kNeverFetch) {
      any_never = true;
    } else {
      any_finite = true;
      if (t >= sol.tau_max - 2) return true;
    }
  }
  return any_finite && any_never;
}

}  // namespace

OracleSolution rvi_homogeneous(const SystemParams& params, Tau tau_max,
                               double tol, long max_iters) {
  params.validate();
  if (!params.homogeneous()) {
    throw std::invalid_argument("rvi_homogeneous needs a homogeneous population");
  }
  if (tau_max < 10) throw std::invalid_argument("tau_max must be >= 10");
  if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");

  const int n = params.num_users;
  const double q = params.request_probs.front();
  const AgeCostModel& model = params.cost_models.front();

  Eigen::VectorXd request_count_prob(n + 1);
  for (int k = 0; k <= n; ++k) request_count_prob(k) = binom_pmf(n, q, k);

  std::vector<double> cav(static_cast<std::size_t>(tau_max));
  for (Tau t = 1; t <= tau_max; ++t) {
    cav[static_cast<std::size_t>(t - 1)] = avg_age_cost(model, params.update_prob, t);
  }

  OracleSolution sol;
  sol.heterogeneous = false;
  sol.num_users = n;
  sol.tau_max = tau_max;
  sol.h = Eigen::MatrixXd::Zero(tau_max, n + 1);
  sol.policy.resize(tau_max, n + 1);

  auto idle_cost = [&](Eigen::Index t, Eigen::Index m) {
    return static_cast<double>(m) * cav[static_cast<std::size_t>(t)];
  };
  const SweepOutcome out = rvi_core(sol.h, sol.policy, request_count_prob,
                                    idle_cost, params.fetch_cost, tol, max_iters);
  sol.theta = out.theta;
  sol.residual = out.residual;
  sol.iterations = out.iterations;

  std::vector<int> weighted_cols;
  if (!model.flat()) {
    for (int m = 1; m <= n; ++m) weighted_cols.push_back(m);
  }
  sol.truncation_suspect = truncation_suspect(sol, weighted_cols);
  return sol;
}

OracleSolution rvi_heterogeneous(const SystemParams& params, Tau tau_max,
                                 double tol, long max_iters) {
  params.validate();
  if (params.num_users > 12) {
    throw RefuseTooLarge("heterogeneous state space supports at most 12 users");
  }
  if (tau_max < 10) throw std::invalid_argument("tau_max must be >= 10");
  if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");

  const int n = params.num_users;
  const int configs = 1 << n;

  Eigen::VectorXd config_prob(configs);
  for (int s = 0; s < configs; ++s) {
    double pr = 1.0;
    for (int i = 0; i < n; ++i) {
      const double qi = params.request_probs[static_cast<std::size_t>(i)];
      pr *= (s >> i) & 1 ? qi : 1.0 - qi;
    }
    config_prob(s) = pr;
  }

  // idle cost per (tau, configuration), built by peeling the lowest bit
  Eigen::MatrixXd idle(tau_max, configs);
  idle.col(0).setZero();
  {
    Eigen::MatrixXd per_user(tau_max, n);
    for (int i = 0; i < n; ++i) {
      for (Tau t = 1; t <= tau_max; ++t) {
        per_user(t - 1, i) = avg_age_cost(params.cost_models[static_cast<std::size_t>(i)],
                                          params.update_prob, t);
      }
    }
    for (int s = 1; s < configs; ++s) {
      const int low = s & -s;
      const int bit = std::countr_zero(static_cast<unsigned>(s));
      idle.col(s) = idle.col(s ^ low) + per_user.col(bit);
    }
  }

  OracleSolution sol;
  sol.heterogeneous = true;
  sol.num_users = n;
  sol.tau_max = tau_max;
  sol.h = Eigen::MatrixXd::Zero(tau_max, configs);
  sol.policy.resize(tau_max, configs);

  auto idle_cost = [&](Eigen::Index t, Eigen::Index c) { return idle(t, c); };
  const SweepOutcome out = rvi_core(sol.h, sol.policy, config_prob, idle_cost,
                                    params.fetch_cost, tol, max_iters);
  sol.theta = out.theta;
  sol.residual = out.residual;
  sol.iterations = out.iterations;

  std::vector<int> weighted_cols;
  for (int s = 1; s < configs; ++s) {
    if (idle(0, s) > 0.0) weighted_cols.push_back(s);
  }
  sol.truncation_suspect = truncation_suspect(sol, weighted_cols);
  return sol;
}

std::vector<Tau> extract_thresholds(const OracleSolution& sol, int num_users) {
  if (sol.heterogeneous) {
    throw std::invalid_argument("extract_thresholds expects a homogeneous solution");
  }
  std::vector<Tau> thresholds;
  thresholds.reserve(static_cast<std::size_t>(num_users));
  for (int m = 1; m <= num_users; ++m) {
    const Tau first = first_fetch(sol, m);
    if (first != kNeverFetch) {
      for (Tau t = first; t <= sol.tau_max; ++t) {
        if (sol.action_at(t, m) != Action::Fetch) {
          throw NonThreshold("policy not monotone in staleness at request count " +
                             std::to_string(m));
        }
      }
    }
    thresholds.push_back(first);
  }
  return thresholds;
}

std::vector<Tau> extract_config_thresholds(const OracleSolution& sol) {
  std::vector<Tau> thresholds;
  const int cols = static_cast<int>(sol.policy.cols());
  thresholds.reserve(static_cast<std::size_t>(cols));
  for (int c = 0; c < cols; ++c) {
    const Tau first = first_fetch(sol, c);
    if (first != kNeverFetch) {
      for (Tau t = first; t <= sol.tau_max; ++t) {
        if (sol.action_at(t, c) != Action::Fetch) {
          throw NonThreshold("policy not monotone in staleness at configuration " +
                             std::to_string(c));
        }
      }
    }
    thresholds.push_back(first);
  }
  return thresholds;
}

}  // namespace agecast
