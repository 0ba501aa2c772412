#include "agecast/threshold_solver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>

namespace agecast {

namespace {

// Request classes sorted by ascending cost weight. Class 0 is the empty
// request state (weight 0); homogeneous populations use weight m with
// binomial probabilities, heterogeneous ones use configuration weights with
// product probabilities. Idle cost of class c at staleness tau is
// weights[c] * avg_age_cost(base, p, tau).
struct WeightClasses {
  std::vector<double> weights;
  std::vector<double> probs;
  AgeCostModel base = AgeCostModel::linear(0.0);
  double p = 0.0;
};

// One backward sweep at fixed theta over arbitrary weight classes.
//
// Derivation sketch, with g(tau) the gap between the averaged relative value
// at tau and at 1: beyond the largest threshold g saturates at
// C_f - theta / P(any weighted requester), and stepping backward one slot
// gives g(tau-1) = C_f - theta + S1*cav(tau-1) + S0*(g(tau) - C_f), where
// S0/S1 are the probability and weight mass of the classes that stay idle at
// tau-1. A class idles while g(tau) <= C_f - w*cav(tau-1); since g is
// nondecreasing, each class flips to fetching exactly once as the sweep
// descends, which is where its threshold is recorded. The stationarity value
// comes from the one-slot case split at tau = 1:
//   f(theta) = sum_c probs[c] * min(C_f, w_c*cav(1) + g(2)).
SweepResult weighted_sweep(const WeightClasses& wc, double fetch_cost,
                           double theta) {
  if (!(theta > 0.0)) throw std::invalid_argument("theta must be positive");
  const std::size_t num_classes = wc.weights.size();
  SweepResult res;
  res.thresholds.assign(num_classes - 1, kNeverFetch);

  const double prob_some = 1.0 - wc.probs[0];
  const double w1 = wc.weights[1];
  const double saturation = fetch_cost - theta / prob_some;
  auto cav = [&](Tau t) { return avg_age_cost(wc.base, wc.p, t); };

  const Tau tau1 = inverse_avg_age_cost(wc.base, wc.p, theta / (prob_some * w1));

  double g2 = saturation;
  if (tau1 == 1) {
    res.degenerate = true;
    std::fill(res.thresholds.begin(), res.thresholds.end(), Tau{1});
  } else {
    res.thresholds[0] = tau1;
    res.g_table[tau1] = saturation;
    std::size_t top = 1;  // classes 1..top have recorded thresholds
    double s0 = wc.probs[0] + wc.probs[1];
    double s1 = wc.weights[1] * wc.probs[1];
    double g = saturation;
    for (Tau tau = tau1; tau >= 2; --tau) {
      const double cav_prev = cav(tau - 1);
      while (top + 1 < num_classes &&
             g <= fetch_cost - wc.weights[top + 1] * cav_prev) {
        ++top;
        res.thresholds[top - 1] = tau;
        s0 += wc.probs[top];
        s1 += wc.weights[top] * wc.probs[top];
      }
      if (tau > 2) {
        g = fetch_cost - theta + s1 * cav_prev + s0 * (g - fetch_cost);
        res.g_table[tau - 1] = g;
      }
    }
    g2 = res.g_table.at(2);
    // classes that fetch even at staleness 1
    for (std::size_t c = top + 1; c < num_classes; ++c) {
      res.thresholds[c - 1] = 1;
    }
  }

  const double cav1 = cav(1);
  double f = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    f += wc.probs[c] * std::min(fetch_cost, wc.weights[c] * cav1 + g2);
  }
  res.f_value = f;
  return res;
}

WeightClasses homogeneous_classes(const SystemParams& params) {
  WeightClasses wc;
  const int n = params.num_users;
  const double q = params.request_probs.front();
  wc.base = params.cost_models.front();
  wc.p = params.update_prob;
  wc.weights.resize(static_cast<std::size_t>(n) + 1);
  wc.probs.resize(static_cast<std::size_t>(n) + 1);
  for (int k = 0; k <= n; ++k) {
    wc.weights[static_cast<std::size_t>(k)] = static_cast<double>(k);
    wc.probs[static_cast<std::size_t>(k)] = binom_pmf(n, q, k);
  }
  return wc;
}

// Closed-form answers for inputs the fixed-point machinery cannot price:
// nobody requests, flat cost models, or a free fetch.
std::optional<ThresholdPolicy> degenerate_solution(const SystemParams& params,
                                                   const WeightClasses& wc) {
  const std::size_t num_classes = wc.weights.size();
  const bool no_requests = wc.probs[0] >= 1.0;
  if (no_requests) {
    ThresholdPolicy policy;
    policy.thresholds.assign(num_classes - 1, kNeverFetch);
    return policy;
  }
  if (params.fetch_cost == 0.0) {
    // fetch whenever anyone asks; all cost vanishes
    ThresholdPolicy policy;
    policy.thresholds.assign(num_classes - 1, Tau{1});
    return policy;
  }
  if (wc.base.flat()) {
    // staleness never changes the stakes: fetch exactly when the one-slot
    // saving beats the fetch price
    const double c0 = avg_age_cost(wc.base, wc.p, 1);
    ThresholdPolicy policy;
    policy.thresholds.assign(num_classes - 1, kNeverFetch);
    double theta = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
      const double idle = wc.weights[c] * c0;
      theta += wc.probs[c] * std::min(params.fetch_cost, idle);
      if (c >= 1 && params.fetch_cost <= idle) policy.thresholds[c - 1] = 1;
    }
    policy.theta = theta;
    return policy;
  }
  return std::nullopt;
}

struct DriverResult {
  ThresholdPolicy policy;
  FixedPointTrace trace;
};

// Damped fixed-point iteration with a guaranteed bisection fallback. f is
// continuous and nonincreasing, so r(theta) = f(theta) - theta is strictly
// decreasing and the root bracket [lo, hi] only narrows.
DriverResult solve_driver(const WeightClasses& wc, double fetch_cost,
                          double theta0, double eps, double alpha0) {
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
  if (!(alpha0 > 0.0 && alpha0 < 1.0)) {
    throw std::invalid_argument("alpha0 must be in (0, 1)");
  }

  DriverResult out;
  FixedPointTrace& trace = out.trace;
  double alpha = alpha0;

  double lo = 1e-12 * std::max(1.0, fetch_cost);
  double hi = fetch_cost;
  SweepResult sweep;
  long evals = 0;
  auto eval = [&](double theta) {
    sweep = weighted_sweep(wc, fetch_cost, theta);
    ++evals;
    trace.steps.emplace_back(theta, sweep.f_value);
    trace.threshold_history.push_back(sweep.thresholds);
    return sweep.f_value - theta;
  };

  const double r_lo = eval(lo);
  double r_hi = eval(hi);
  double theta_star = hi;
  bool solved = false;
  if (r_hi == 0.0) {
    solved = true;  // fetch-every-request exactly prices the instance
  } else if (r_lo <= 0.0 || r_hi > 0.0) {
    throw NoBracket("residual does not change sign on the bracket: r(" +
                    std::to_string(lo) + ") = " + std::to_string(r_lo) +
                    ", r(" + std::to_string(hi) + ") = " + std::to_string(r_hi));
  }

  double theta = std::clamp(theta0, lo, hi);
  int prev_sign = 0;
  int flips_in_a_row = 0;
  const int max_damped = 500;
  for (int step = 0; !solved && step < max_damped; ++step) {
    const double r = eval(theta);
    if (r > 0.0) {
      lo = std::max(lo, theta);
    } else if (r < 0.0) {
      hi = std::min(hi, theta);
    }
    if (std::abs(r) <= 10.0 * eps && alpha * std::abs(r) <= eps) {
      theta_star = theta;
      solved = true;
      break;
    }
    const int sign = r > 0.0 ? 1 : (r < 0.0 ? -1 : 0);
    if (prev_sign != 0 && sign != 0 && sign != prev_sign) {
      if (++flips_in_a_row >= 2) {
        alpha *= 0.5;
        flips_in_a_row = 0;
      }
    } else {
      flips_in_a_row = 0;
    }
    prev_sign = sign;
    double next = theta + alpha * r;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    theta = next;
  }

  if (!solved) {
    trace.used_bisection = true;
    for (int step = 0; step < 200; ++step) {
      theta = 0.5 * (lo + hi);
      const double r = eval(theta);
      if (r > 0.0) {
        lo = theta;
      } else {
        hi = theta;
      }
      if (std::abs(r) <= 10.0 * eps && hi - lo <= eps) {
        theta_star = theta;
        solved = true;
        break;
      }
    }
    if (!solved) throw NotConverged(std::abs(sweep.f_value - theta), evals);
  }

  // final sweep at the solution so the reported thresholds, g table and
  // residual all belong to theta_star
  if (trace.steps.back().first != theta_star) eval(theta_star);
  trace.converged = true;
  trace.alpha_final = alpha;

  out.policy.theta = theta_star;
  out.policy.thresholds = sweep.thresholds;
  out.policy.g_table = sweep.g_table;
  out.policy.iterations = evals;
  return out;
}

}  // namespace

SweepResult f_of_theta(const SystemParams& params, double theta) {
  params.validate();
  if (!params.homogeneous()) {
    throw std::invalid_argument("f_of_theta needs a homogeneous population");
  }
  return weighted_sweep(homogeneous_classes(params), params.fetch_cost, theta);
}

std::pair<ThresholdPolicy, FixedPointTrace> solve_homogeneous(
    const SystemParams& params, double theta0, double eps, double alpha0) {
  params.validate();
  if (!params.homogeneous()) {
    throw std::invalid_argument("solve_homogeneous needs a homogeneous population");
  }
  const WeightClasses wc = homogeneous_classes(params);
  if (auto degenerate = degenerate_solution(params, wc)) {
    FixedPointTrace trace;
    trace.converged = true;
    return {std::move(*degenerate), trace};
  }
  if (theta0 <= 0.0) theta0 = 0.5 * params.fetch_cost;
  DriverResult res = solve_driver(wc, params.fetch_cost, theta0, eps, alpha0);
  return {std::move(res.policy), std::move(res.trace)};
}

namespace {

// Proportionality check: every active model must be scale * base. Models of
// different kinds never qualify (their shapes differ except in degenerate
// cases the mask already removed); custom tables are compared pointwise
// through the affine extrapolation region.
double proportional_scale(const AgeCostModel& base, const AgeCostModel& model) {
  if (model.kind() != base.kind()) {
    throw NonProportionalCosts("cost models mix kinds; no staleness-independent "
                               "configuration ranking exists");
  }
  if (base.kind() != CostKind::CustomConvex) {
    return model.coefficient() / base.coefficient();
  }
  const Tau span = static_cast<Tau>(
      std::max(base.table().size(), model.table().size()) + 2);
  double scale = 0.0;
  for (Tau v = 0; v <= span; ++v) {
    const double b = age_cost(base, v);
    const double m = age_cost(model, v);
    if (b == 0.0 && m == 0.0) continue;
    if (b == 0.0 || m == 0.0) {
      throw NonProportionalCosts("custom cost tables are not proportional");
    }
    const double ratio = m / b;
    if (scale == 0.0) {
      scale = ratio;
    } else if (std::abs(ratio - scale) > 1e-9 * scale) {
      throw NonProportionalCosts("custom cost tables are not proportional");
    }
  }
  return scale;
}

}  // namespace

ThresholdPolicy solve_heterogeneous(const SystemParams& params) {
  params.validate();
  if (params.num_users > 12) {
    throw RefuseTooLarge("configuration enumeration supports at most 12 users");
  }

  // users that can never contribute cost do not belong in the enumeration
  std::vector<int> active;
  for (int i = 0; i < params.num_users; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    if (params.request_probs[idx] > 0.0 && !params.cost_models[idx].flat()) {
      active.push_back(i);
    }
  }

  ThresholdPolicy policy;
  policy.heterogeneous = true;
  policy.active_users = active;
  if (active.empty()) {
    policy.config_to_rank.assign(1, 0);
    policy.rank_to_config.assign(1, 0);
    return policy;
  }

  const int n = static_cast<int>(active.size());
  const int configs = 1 << n;
  const AgeCostModel& base =
      params.cost_models[static_cast<std::size_t>(active.front())];
  std::vector<double> scale(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    scale[static_cast<std::size_t>(i)] = proportional_scale(
        base, params.cost_models[static_cast<std::size_t>(active[static_cast<std::size_t>(i)])]);
  }

  std::vector<std::uint32_t> order(static_cast<std::size_t>(configs));
  std::vector<double> weight(static_cast<std::size_t>(configs));
  std::vector<double> prob(static_cast<std::size_t>(configs), 1.0);
  for (int s = 0; s < configs; ++s) {
    double w = 0.0;
    double pr = 1.0;
    for (int i = 0; i < n; ++i) {
      const double qi =
          params.request_probs[static_cast<std::size_t>(active[static_cast<std::size_t>(i)])];
      if ((s >> i) & 1) {
        w += scale[static_cast<std::size_t>(i)];
        pr *= qi;
      } else {
        pr *= 1.0 - qi;
      }
    }
    order[static_cast<std::size_t>(s)] = static_cast<std::uint32_t>(s);
    weight[static_cast<std::size_t>(s)] = w;
    prob[static_cast<std::size_t>(s)] = pr;
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) {
                     return weight[a] != weight[b] ? weight[a] < weight[b] : a < b;
                   });

  WeightClasses wc;
  wc.base = base;
  wc.p = params.update_prob;
  wc.weights.resize(static_cast<std::size_t>(configs));
  wc.probs.resize(static_cast<std::size_t>(configs));
  policy.rank_to_config.resize(static_cast<std::size_t>(configs));
  policy.config_to_rank.assign(static_cast<std::size_t>(configs), 0);
  for (int r = 0; r < configs; ++r) {
    const std::uint32_t mask = order[static_cast<std::size_t>(r)];
    wc.weights[static_cast<std::size_t>(r)] = weight[mask];
    wc.probs[static_cast<std::size_t>(r)] = prob[mask];
    policy.rank_to_config[static_cast<std::size_t>(r)] = mask;
    policy.config_to_rank[mask] = static_cast<std::int32_t>(r);
  }

  if (auto degenerate = degenerate_solution(params, wc)) {
    degenerate->heterogeneous = true;
    degenerate->active_users = policy.active_users;
    degenerate->rank_to_config = policy.rank_to_config;
    degenerate->config_to_rank = policy.config_to_rank;
    return std::move(*degenerate);
  }

  DriverResult res = solve_driver(wc, params.fetch_cost, 0.5 * params.fetch_cost,
                                  1e-6, 0.1);
  res.policy.heterogeneous = true;
  res.policy.active_users = policy.active_users;
  res.policy.rank_to_config = policy.rank_to_config;
  res.policy.config_to_rank = policy.config_to_rank;
  return std::move(res.policy);
}

Tau ThresholdPolicy::threshold_for_count(int m) const {
  if (m <= 0) return kNeverFetch;
  const auto idx = static_cast<std::size_t>(m - 1);
  if (idx >= thresholds.size()) {
    throw std::out_of_range("request count exceeds the threshold list");
  }
  return thresholds[idx];
}

Tau ThresholdPolicy::threshold_for_request_vector(
    const std::vector<std::uint8_t>& s) const {
  if (!heterogeneous) {
    int m = 0;
    for (const std::uint8_t bit : s) m += bit != 0;
    return threshold_for_count(m);
  }
  std::uint32_t mask = 0;
  for (std::size_t i = 0; i < active_users.size(); ++i) {
    if (s[static_cast<std::size_t>(active_users[i])] != 0) {
      mask |= 1u << i;
    }
  }
  const std::int32_t rank = config_to_rank[mask];
  if (rank == 0) return kNeverFetch;
  return thresholds[static_cast<std::size_t>(rank - 1)];
}

}  // namespace agecast
