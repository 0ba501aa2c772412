#include "agecast/whittle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace agecast {

namespace {

constexpr Tau kScanCap = 1'000'000;

void check_user(const SingleUserProblem& sup) {
  if (!(sup.q > 0.0 && sup.q <= 1.0)) {
    throw std::invalid_argument("single-user problem needs q in (0, 1]");
  }
  if (!(sup.p >= 0.0 && sup.p <= 1.0)) {
    throw std::invalid_argument("single-user problem needs p in [0, 1]");
  }
}

}  // namespace

Tau renewal_threshold(const SingleUserProblem& sup, double price) {
  check_user(sup);
  if (!(price > 0.0)) throw std::invalid_argument("price must be positive");

  // cycle: idle through staleness 1..tau-1 (each slot costs q * avg cost),
  // then fetch at the first requested slot, a further 1/q slots on average
  const double tail = (1.0 - sup.q) / sup.q;
  double cost_sum = 0.0;  // q * sum of avg costs below the current tau
  double best_ratio = std::numeric_limits<double>::infinity();
  double prev_ratio = best_ratio;
  Tau best_tau = 1;
  int rises = 0;
  for (Tau tau = 1; tau <= kScanCap; ++tau) {
    const double ratio = (cost_sum + price) / (static_cast<double>(tau) + tail);
    if (ratio < best_ratio) {
      best_ratio = ratio;
      best_tau = tau;
    }
    if (ratio > prev_ratio) {
      // the ratio is unimodal, three strict rises mean the minimum is behind us
      if (++rises >= 3) return best_tau;
    } else {
      rises = 0;
    }
    prev_ratio = ratio;
    cost_sum += sup.q * avg_age_cost(sup.cost_model, sup.p, tau);
  }
  throw CapExceeded("renewal-cycle scan passed " + std::to_string(kScanCap) +
                    " slots at price " + std::to_string(price));
}

namespace {

// lo_hint shortcuts the doubling phase when a nearby lower bound is already
// known (the previous table row); 0 means no hint.
double index_g_impl(const SingleUserProblem& sup, Tau tau, double tol,
                    double lo_hint) {
  check_user(sup);
  if (tau < 1) throw std::invalid_argument("tau must be at least 1");
  if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");

  // invariant: renewal_threshold(price <= lo) <= tau (price -> 0 gives 1),
  // renewal_threshold(hi) > tau once the doubling stops
  double lo = 0.0;
  if (lo_hint > 2.0 * tol) {
    const double candidate = lo_hint - 2.0 * tol;
    if (renewal_threshold(sup, candidate) <= tau) lo = candidate;
  }
  double hi = std::max(2.0 * lo, tol);
  while (renewal_threshold(sup, hi) <= tau) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e18) {
      throw CapExceeded("no finite price moves the renewal threshold past " +
                        std::to_string(tau));
    }
  }
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (renewal_threshold(sup, mid) > tau) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

}  // namespace

double index_g(const SingleUserProblem& sup, Tau tau, double tol) {
  return index_g_impl(sup, tau, tol, 0.0);
}

WhittleIndexTable WhittleIndexTable::build(const SystemParams& params,
                                           double tol, Tau tau_cap) {
  params.validate();
  if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");

  WhittleIndexTable table;
  table.tol_ = tol;
  table.homogeneous_ = params.homogeneous();
  const auto n = static_cast<std::size_t>(params.num_users);
  table.users_.resize(n);
  table.degenerate_.resize(n, 0);
  table.g_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    table.users_[i] = SingleUserProblem{params.request_probs[i],
                                        params.cost_models[i],
                                        params.update_prob};
    table.degenerate_[i] =
        (params.request_probs[i] == 0.0 || params.cost_models[i].flat()) ? 1 : 0;
  }

  const std::size_t rows = table.homogeneous_ ? 1 : n;
  for (std::size_t i = 0; i < rows; ++i) {
    if (table.degenerate_[i]) continue;
    Tau depth = tau_cap;
    if (depth <= 0) {
      const double price = std::max(params.fetch_cost, tol);
      depth = 4 * renewal_threshold(table.users_[i], price);
    }
    table.extend_row(static_cast<int>(i), std::max<Tau>(depth, 4));
  }
  return table;
}

void WhittleIndexTable::extend_row(int user, Tau tau) const {
  auto& row = g_[static_cast<std::size_t>(user)];
  const auto& sup = users_[static_cast<std::size_t>(user)];
  while (static_cast<Tau>(row.size()) < tau) {
    const Tau next = static_cast<Tau>(row.size()) + 1;
    const double prev = row.empty() ? 0.0 : row.back();
    const double raw = index_g_impl(sup, next, tol_, prev);
    row.push_back(std::max(raw, prev));
  }
}

double WhittleIndexTable::g_value(int user, Tau tau) const {
  if (user < 0 || user >= num_users()) {
    throw std::out_of_range("user index out of range");
  }
  if (tau < 1) throw std::invalid_argument("tau must be at least 1");
  if (degenerate_[static_cast<std::size_t>(user)]) return 0.0;
  const int row = homogeneous_ ? 0 : user;
  if (static_cast<Tau>(g_[static_cast<std::size_t>(row)].size()) < tau) {
    extend_row(row, tau);
  }
  return g_[static_cast<std::size_t>(row)][static_cast<std::size_t>(tau - 1)];
}

double whittle_index(const WhittleIndexTable& table, int user, Tau tau, bool s,
                     double alpha_cf) {
  return s ? table.g_value(user, tau) - alpha_cf : -alpha_cf;
}

Action wi_decide(const WhittleIndexTable& table, double fetch_cost, Tau tau,
                 const std::vector<std::uint8_t>& s) {
  if (static_cast<int>(s.size()) != table.num_users()) {
    throw std::invalid_argument("request vector size mismatch");
  }
  int m = 0;
  for (const std::uint8_t bit : s) m += bit != 0;
  if (m == 0) return Action::Idle;
  double sum = 0.0;
  if (table.homogeneous()) {
    sum = static_cast<double>(m) * table.g_value(0, tau);
  } else {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i]) sum += table.g_value(static_cast<int>(i), tau);
    }
  }
  return sum > fetch_cost ? Action::Fetch : Action::Idle;
}

std::vector<Tau> wi_thresholds_homogeneous(const WhittleIndexTable& table,
                                           double fetch_cost, int num_users) {
  if (!table.homogeneous()) {
    throw std::invalid_argument("table was built for a heterogeneous population");
  }
  if (num_users < 1) throw std::invalid_argument("num_users must be positive");
  std::vector<Tau> thresholds(static_cast<std::size_t>(num_users), kNeverFetch);
  if (table.degenerate_user(0)) return thresholds;
  Tau limit = kScanCap;  // thresholds shrink with m, so later scans stop earlier
  for (int m = 1; m <= num_users; ++m) {
    Tau found = kNeverFetch;
    for (Tau tau = 1; tau <= limit; ++tau) {
      if (static_cast<double>(m) * table.g_value(0, tau) > fetch_cost) {
        found = tau;
        break;
      }
    }
    thresholds[static_cast<std::size_t>(m - 1)] = found;
    if (found != kNeverFetch) limit = found;
  }
  return thresholds;
}

}  // namespace agecast
