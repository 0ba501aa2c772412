#include "agecast/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "agecast/rng.hpp"

namespace agecast {

namespace {

// two-sided 97.5% quantile of Student's t with 29 degrees of freedom, for
// the 30-batch confidence interval
constexpr double kT975Df29 = 2.0452296421327034;
constexpr int kBatches = 30;

}  // namespace

std::int64_t SimConfig::effective_warmup() const {
  return warmup >= 0 ? warmup : horizon / 100;
}

void SimConfig::validate() const {
  params.validate();
  if (horizon < 1) {
    throw ConfigError("simulation.horizon must be at least 1");
  }
  if (effective_warmup() >= horizon) {
    throw ConfigError("simulation.warmup must leave at least one measured slot");
  }
}

ThresholdPolicyAdapter::ThresholdPolicyAdapter(ThresholdPolicy policy,
                                               std::string name)
    : policy_(std::move(policy)), name_(std::move(name)) {}

Action ThresholdPolicyAdapter::decide(Tau tau,
                                      const std::vector<std::uint8_t>& s) const {
  return tau >= policy_.threshold_for_request_vector(s) ? Action::Fetch
                                                        : Action::Idle;
}

WhittlePolicyAdapter::WhittlePolicyAdapter(std::shared_ptr<WhittleIndexTable> table,
                                           double fetch_cost)
    : table_(std::move(table)), fetch_cost_(fetch_cost) {
  if (!table_) throw std::invalid_argument("null index table");
}

Action WhittlePolicyAdapter::decide(Tau tau,
                                    const std::vector<std::uint8_t>& s) const {
  return wi_decide(*table_, fetch_cost_, tau, s);
}

PeriodicFetch::PeriodicFetch(Tau period) : period_(period) {
  if (period < 1) throw std::invalid_argument("period must be at least 1");
}

std::string PeriodicFetch::name() const {
  return "periodic_" + std::to_string(period_);
}

SimulationReport simulate(const SimConfig& config, const Policy& policy,
                          const SlotObserver* observer) {
  config.validate();
  const SystemParams& sys = config.params;
  const int n = sys.num_users;
  const double p = sys.update_prob;
  const bool homogeneous = sys.homogeneous();
  const std::int64_t horizon = config.horizon;
  const std::int64_t warmup = config.effective_warmup();
  const std::int64_t measured = horizon - warmup;

  const RandomStream update_stream =
      RandomStream::derive(config.seed, StreamPurpose::Update, 0);
  std::vector<RandomStream> request_streams(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    request_streams[static_cast<std::size_t>(i)] = RandomStream::derive(
        config.seed, StreamPurpose::Request, static_cast<std::uint64_t>(i));
  }

  // per-user expected idle cost by staleness, grown on demand; a single
  // shared row for homogeneous populations
  const std::size_t cache_rows = homogeneous ? 1 : static_cast<std::size_t>(n);
  std::vector<std::vector<double>> expected_cache(cache_rows);
  auto expected_cost = [&](std::size_t row, Tau tau) {
    auto& cache = expected_cache[row];
    while (static_cast<Tau>(cache.size()) < tau) {
      cache.push_back(avg_age_cost(sys.cost_models[row],
                                   p, static_cast<Tau>(cache.size()) + 1));
    }
    return cache[static_cast<std::size_t>(tau - 1)];
  };

  // staleness starts at 1, so the copy misses exactly the counter-0 update
  Tau version_age = update_stream.bernoulli(0, p) ? 1 : 0;
  Tau tau = 1;
  std::vector<std::uint8_t> s(static_cast<std::size_t>(n));

  double fetch_cost_total = 0.0;
  double age_cost_total = 0.0;
  std::int64_t fetches = 0;
  std::int64_t interval_count = 0;
  double interval_sum = 0.0;
  double interval_sq_sum = 0.0;
  std::vector<double> batch_cost(kBatches, 0.0);
  std::vector<std::int64_t> batch_len(kBatches, 0);

  for (std::int64_t t = 0; t < horizon; ++t) {
    int m = 0;
    for (int i = 0; i < n; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      s[idx] = request_streams[idx].bernoulli(static_cast<std::uint64_t>(t),
                                              sys.request_probs[idx])
                   ? 1
                   : 0;
      m += s[idx];
    }
    if (observer) {
      (*observer)(t, tau, version_age, s);
    }
    const Action action = policy.decide(tau, s);
    const bool in_measure = t >= warmup;

    double slot_cost = 0.0;
    if (action == Action::Fetch) {
      slot_cost = sys.fetch_cost;
      if (in_measure) {
        ++fetches;
        const double interval = static_cast<double>(tau);
        ++interval_count;
        interval_sum += interval;
        interval_sq_sum += interval * interval;
        fetch_cost_total += slot_cost;
      }
    } else if (m > 0) {
      if (config.cost_mode == CostMode::Expected) {
        if (homogeneous) {
          slot_cost = static_cast<double>(m) * expected_cost(0, tau);
        } else {
          for (int i = 0; i < n; ++i) {
            if (s[static_cast<std::size_t>(i)]) {
              slot_cost += expected_cost(static_cast<std::size_t>(i), tau);
            }
          }
        }
      } else {
        if (homogeneous) {
          slot_cost = static_cast<double>(m) *
                      age_cost(sys.cost_models.front(), version_age);
        } else {
          for (int i = 0; i < n; ++i) {
            if (s[static_cast<std::size_t>(i)]) {
              slot_cost +=
                  age_cost(sys.cost_models[static_cast<std::size_t>(i)],
                           version_age);
            }
          }
        }
      }
      if (in_measure) age_cost_total += slot_cost;
    }

    if (in_measure) {
      const auto b = static_cast<std::size_t>((t - warmup) * kBatches / measured);
      batch_cost[b] += slot_cost;
      ++batch_len[b];
    }

    const bool updated = update_stream.bernoulli(static_cast<std::uint64_t>(t) + 1, p);
    if (action == Action::Fetch) {
      version_age = updated ? 1 : 0;
      tau = 1;
    } else {
      version_age += updated ? 1 : 0;
      tau += 1;
    }
  }

  SimulationReport report;
  report.policy_name = policy.name();
  report.slots_measured = measured;
  report.fetches = fetches;
  report.fetch_cost_share = fetch_cost_total / static_cast<double>(measured);
  report.age_cost_share = age_cost_total / static_cast<double>(measured);
  report.avg_cost = report.fetch_cost_share + report.age_cost_share;
  report.fetch_rate = static_cast<double>(fetches) / static_cast<double>(measured);
  if (interval_count > 0) {
    report.fetch_interval_mean = interval_sum / static_cast<double>(interval_count);
  }
  if (interval_count > 1) {
    const double mean = report.fetch_interval_mean;
    report.fetch_interval_variance =
        std::max(0.0, (interval_sq_sum -
                       static_cast<double>(interval_count) * mean * mean) /
                          static_cast<double>(interval_count - 1));
  }
  if (measured >= kBatches) {
    double mean_of_means = 0.0;
    double means[kBatches];
    for (int b = 0; b < kBatches; ++b) {
      means[b] = batch_cost[static_cast<std::size_t>(b)] /
                 static_cast<double>(batch_len[static_cast<std::size_t>(b)]);
      mean_of_means += means[b];
    }
    mean_of_means /= kBatches;
    double var = 0.0;
    for (int b = 0; b < kBatches; ++b) {
      const double d = means[b] - mean_of_means;
      var += d * d;
    }
    var /= kBatches - 1;
    report.ci95_halfwidth = kT975Df29 * std::sqrt(var / kBatches);
  }
  return report;
}

std::vector<SimulationReport> compare_policies(
    const SimConfig& config, const std::vector<const Policy*>& policies) {
  std::vector<SimulationReport> reports;
  reports.reserve(policies.size());
  for (const Policy* policy : policies) {
    if (policy == nullptr) throw std::invalid_argument("null policy");
    reports.push_back(simulate(config, *policy));
  }
  return reports;
}

std::vector<VarianceSweepRow> fetch_interval_variance_sweep(
    const SimConfig& base, const std::vector<int>& n_values, CfRule rule) {
  base.validate();
  if (!base.params.homogeneous()) {
    throw std::invalid_argument("variance sweep needs a homogeneous base");
  }
  const double cf_per_user =
      base.params.fetch_cost / static_cast<double>(base.params.num_users);
  std::vector<VarianceSweepRow> rows;
  rows.reserve(n_values.size());
  for (const int n : n_values) {
    if (n < 1) throw std::invalid_argument("population sizes must be positive");
    SimConfig config = base;
    config.params = SystemParams::uniform(
        n, base.params.update_prob, base.params.request_probs.front(),
        rule == CfRule::ScaleWithN ? cf_per_user * n : base.params.fetch_cost,
        base.params.cost_models.front());
    auto [policy, trace] = solve_homogeneous(config.params);
    const ThresholdPolicyAdapter adapter(policy);
    const SimulationReport report = simulate(config, adapter);
    rows.push_back(VarianceSweepRow{n, policy.theta, report.avg_cost,
                                    report.fetch_interval_variance});
  }
  return rows;
}

}  // namespace agecast
