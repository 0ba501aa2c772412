#include "agecast/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "agecast/params.hpp"

namespace agecast {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }

}  // namespace

AgeCostModel AgeCostModel::linear(double c_a) {
  require(finite_nonneg(c_a), "age cost coefficient must be finite and >= 0");
  AgeCostModel m;
  m.kind_ = CostKind::Linear;
  m.c_a_ = c_a;
  return m;
}

AgeCostModel AgeCostModel::quadratic(double c_a) {
  require(finite_nonneg(c_a), "age cost coefficient must be finite and >= 0");
  AgeCostModel m;
  m.kind_ = CostKind::Quadratic;
  m.c_a_ = c_a;
  return m;
}

AgeCostModel AgeCostModel::custom_convex(std::vector<double> table) {
  require(!table.empty(), "custom cost table must not be empty");
  double scale = 1.0;
  for (double v : table) {
    require(finite_nonneg(v), "custom cost table entries must be finite and >= 0");
    scale = std::max(scale, v);
  }
  // Slack of a few ulp so tables generated from formulas are not rejected
  // over rounding in their last digit.
  const double slack = 1e-12 * scale;
  for (std::size_t v = 1; v < table.size(); ++v) {
    require(table[v] + slack >= table[v - 1],
            "custom cost table must be nondecreasing");
    if (v >= 2) {
      require(table[v] - table[v - 1] + slack >= table[v - 1] - table[v - 2],
              "custom cost table must be discretely convex");
    }
  }
  AgeCostModel m;
  m.kind_ = CostKind::CustomConvex;
  m.table_ = std::move(table);
  return m;
}

bool AgeCostModel::flat() const {
  switch (kind_) {
    case CostKind::Linear:
    case CostKind::Quadratic:
      return c_a_ == 0.0;
    case CostKind::CustomConvex:
      return table_.back() == table_.front();
  }
  return true;
}

double age_cost(const AgeCostModel& model, Tau v) {
  require(v >= 0, "version age must be >= 0");
  const double vd = static_cast<double>(v);
  switch (model.kind()) {
    case CostKind::Linear:
      return model.coefficient() * vd;
    case CostKind::Quadratic:
      return model.coefficient() * vd * vd;
    case CostKind::CustomConvex: {
      const auto& t = model.table();
      const auto n = static_cast<Tau>(t.size());
      if (v < n) return t[static_cast<std::size_t>(v)];
      // continue past the table with the final slope
      const double slope = n >= 2 ? t[n - 1] - t[n - 2] : 0.0;
      return t[n - 1] + slope * static_cast<double>(v - (n - 1));
    }
  }
  return 0.0;
}

double avg_age_cost(const AgeCostModel& model, double p, Tau tau) {
  require(tau >= 1, "staleness must be >= 1");
  require(p > 0.0 && p <= 1.0, "update probability must be in (0, 1]");
  const double td = static_cast<double>(tau);
  switch (model.kind()) {
    case CostKind::Linear:
      return model.coefficient() * p * td;
    case CostKind::Quadratic:
      // second moment of Binomial(tau, p)
      return model.coefficient() * (td * p * (1.0 - p) + (td * p) * (td * p));
    case CostKind::CustomConvex: {
      const auto& t = model.table();
      const auto n = static_cast<Tau>(t.size());
      if (tau < n - 1) {  // every reachable age is tabulated
        double sum = 0.0;
        for (Tau k = 0; k <= tau; ++k) {
          sum += t[static_cast<std::size_t>(k)] * binom_pmf(tau, p, k);
        }
        return sum;
      }
      // Beyond the table the cost is linear with the final slope, so the
      // tail of the expectation collapses to P(V >= n-1) and the mean of V
      // over that event. Keeps the call O(table) rather than O(tau), which
      // matters inside the million-slot renewal scans.
      const double slope = n >= 2 ? t[n - 1] - t[n - 2] : 0.0;
      double head_cost = 0.0;
      double head_prob = 0.0;
      double head_mean = 0.0;
      for (Tau k = 0; k + 1 < n; ++k) {
        const double pk = binom_pmf(tau, p, k);
        head_cost += pk * t[static_cast<std::size_t>(k)];
        head_prob += pk;
        head_mean += pk * static_cast<double>(k);
      }
      const double tail_prob = std::max(0.0, 1.0 - head_prob);
      const double tail_mean = td * p - head_mean;
      return head_cost +
             tail_prob * (t[n - 1] - slope * static_cast<double>(n - 1)) +
             slope * tail_mean;
    }
  }
  return 0.0;
}

Tau inverse_avg_age_cost(const AgeCostModel& model, double p, double y) {
  require(y >= 0.0 && std::isfinite(y), "target cost must be finite and >= 0");
  require(p > 0.0 && p <= 1.0, "update probability must be in (0, 1]");
  if (y <= avg_age_cost(model, p, 1)) return 1;
  if (model.flat()) {
    throw DegenerateCost("expected age cost is constant below the requested level");
  }
  auto cav = [&](Tau t) { return avg_age_cost(model, p, t); };
  Tau t;
  switch (model.kind()) {
    case CostKind::Linear:
      t = static_cast<Tau>(std::ceil(y / (model.coefficient() * p)));
      break;
    case CostKind::Quadratic: {
      // root of c_a*(p*(1-p)*t + p^2*t^2) = y
      const double a = model.coefficient() * p * p;
      const double b = model.coefficient() * p * (1.0 - p);
      t = static_cast<Tau>(std::ceil((-b + std::sqrt(b * b + 4.0 * a * y)) / (2.0 * a)));
      break;
    }
    case CostKind::CustomConvex: {
      // expectation is nondecreasing: bracket by doubling, then bisect
      Tau lo = 1, hi = 2;
      while (cav(hi) < y) {
        lo = hi;
        hi *= 2;
        if (hi > (Tau{1} << 40)) {
          throw DegenerateCost("expected age cost grows too slowly to reach the requested level");
        }
      }
      while (hi - lo > 1) {
        const Tau mid = lo + (hi - lo) / 2;
        (cav(mid) >= y ? hi : lo) = mid;
      }
      return hi;
    }
    default:
      t = 1;
  }
  // closed forms can land one off after rounding; settle it exactly
  t = std::max<Tau>(t, 1);
  while (cav(t) < y) ++t;
  while (t > 1 && cav(t - 1) >= y) --t;
  return t;
}

double binom_pmf(std::int64_t n, double q, std::int64_t k) {
  require(n >= 0, "binomial n must be >= 0");
  require(k >= 0 && k <= n, "binomial k must be in [0, n]");
  require(q >= 0.0 && q <= 1.0, "binomial success probability must be in [0, 1]");
  if (q == 0.0) return k == 0 ? 1.0 : 0.0;
  if (q == 1.0) return k == n ? 1.0 : 0.0;
  if (n <= 50) {
    // multiplicative binomial coefficient stays an exact integer in doubles
    double coeff = 1.0;
    const std::int64_t kk = std::min(k, n - k);
    for (std::int64_t i = 1; i <= kk; ++i) {
      coeff = coeff * static_cast<double>(n - kk + i) / static_cast<double>(i);
    }
    return coeff * std::pow(q, static_cast<double>(k)) *
           std::pow(1.0 - q, static_cast<double>(n - k));
  }
  const double log_pmf = std::lgamma(static_cast<double>(n + 1)) -
                         std::lgamma(static_cast<double>(k + 1)) -
                         std::lgamma(static_cast<double>(n - k + 1)) +
                         static_cast<double>(k) * std::log(q) +
                         static_cast<double>(n - k) * std::log1p(-q);
  return std::exp(log_pmf);
}

SystemParams SystemParams::uniform(int num_users, double update_prob,
                                   double request_prob, double fetch_cost,
                                   const AgeCostModel& model) {
  SystemParams s;
  s.num_users = num_users;
  s.update_prob = update_prob;
  s.request_probs.assign(static_cast<std::size_t>(std::max(num_users, 0)), request_prob);
  s.fetch_cost = fetch_cost;
  s.cost_models.assign(static_cast<std::size_t>(std::max(num_users, 0)), model);
  s.validate();
  return s;
}

bool SystemParams::homogeneous() const {
  for (const double q : request_probs) {
    if (q != request_probs.front()) return false;
  }
  for (const auto& m : cost_models) {
    if (!(m == cost_models.front())) return false;
  }
  return true;
}

void SystemParams::validate() const {
  if (num_users < 1) throw ConfigError("system.num_users: must be >= 1");
  if (!(update_prob > 0.0 && update_prob <= 1.0)) {
    throw ConfigError("system.update_prob: must be in (0, 1]");
  }
  if (request_probs.size() != static_cast<std::size_t>(num_users)) {
    throw ConfigError("system.request_probs: length must equal num_users");
  }
  for (std::size_t i = 0; i < request_probs.size(); ++i) {
    if (!(request_probs[i] >= 0.0 && request_probs[i] <= 1.0)) {
      throw ConfigError("system.request_probs[" + std::to_string(i) +
                        "]: must be in [0, 1]");
    }
  }
  if (!(fetch_cost >= 0.0) || !std::isfinite(fetch_cost)) {
    throw ConfigError("system.fetch_cost: must be finite and >= 0");
  }
  if (cost_models.size() != static_cast<std::size_t>(num_users)) {
    throw ConfigError("system.cost_models: length must equal num_users");
  }
}

}  // namespace agecast
