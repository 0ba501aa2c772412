#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "agecast/params.hpp"
#include "agecast/threshold_solver.hpp"
#include "agecast/whittle.hpp"

namespace agecast {

// Realized mode charges the sampled age cost C(V) per requester; Expected
// mode charges the conditional mean given the staleness. Both modes consume
// identical random draws, so they differ only in the charged amounts.
enum class CostMode : std::uint8_t { Realized, Expected };

struct SimConfig {
  SystemParams params;
  std::int64_t horizon = 1'000'000;
  std::uint64_t seed = 1;
  std::int64_t warmup = -1;  // negative selects 1% of the horizon
  CostMode cost_mode = CostMode::Expected;

  std::int64_t effective_warmup() const;
  void validate() const;
};

// Deterministic map from the observed state (staleness, request vector) to an
// action; the simulator owns all randomness.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual Action decide(Tau tau, const std::vector<std::uint8_t>& s) const = 0;
  virtual std::string name() const = 0;
};

class ThresholdPolicyAdapter : public Policy {
 public:
  explicit ThresholdPolicyAdapter(ThresholdPolicy policy, std::string name = "optimal");
  Action decide(Tau tau, const std::vector<std::uint8_t>& s) const override;
  std::string name() const override { return name_; }
  const ThresholdPolicy& policy() const { return policy_; }

 private:
  ThresholdPolicy policy_;
  std::string name_;
};

class WhittlePolicyAdapter : public Policy {
 public:
  WhittlePolicyAdapter(std::shared_ptr<WhittleIndexTable> table, double fetch_cost);
  Action decide(Tau tau, const std::vector<std::uint8_t>& s) const override;
  std::string name() const override { return "whittle"; }

 private:
  std::shared_ptr<WhittleIndexTable> table_;
  double fetch_cost_;
};

class AlwaysFetch : public Policy {
 public:
  Action decide(Tau, const std::vector<std::uint8_t>&) const override {
    return Action::Fetch;
  }
  std::string name() const override { return "always_fetch"; }
};

class NeverFetch : public Policy {
 public:
  Action decide(Tau, const std::vector<std::uint8_t>&) const override {
    return Action::Idle;
  }
  std::string name() const override { return "never_fetch"; }
};

class PeriodicFetch : public Policy {
 public:
  explicit PeriodicFetch(Tau period);
  Action decide(Tau tau, const std::vector<std::uint8_t>&) const override {
    return tau >= period_ ? Action::Fetch : Action::Idle;
  }
  std::string name() const override;

 private:
  Tau period_;
};

struct SimulationReport {
  std::string policy_name;
  double avg_cost = 0.0;         // always fetch_cost_share + age_cost_share
  double fetch_cost_share = 0.0;
  double age_cost_share = 0.0;
  double fetch_rate = 0.0;
  double fetch_interval_mean = 0.0;
  double fetch_interval_variance = 0.0;
  double ci95_halfwidth = 0.0;   // batch means, 30 batches
  std::int64_t slots_measured = 0;
  std::int64_t fetches = 0;
};

// Invoked once per slot before the action with the pre-decision state;
// used by the distribution tests. Keep it cheap, it sits in the hot loop.
using SlotObserver =
    std::function<void(std::int64_t slot, Tau tau, Tau version_age,
                       const std::vector<std::uint8_t>& requests)>;

// Slot loop: draw requests, ask the policy, charge the cost, draw the update,
// advance counters. A fetch charges the fetch cost, serves requesters fresh
// content (zero age cost that slot) and restarts staleness at 1 for the next
// slot; the update draw of the fetch slot already counts against the new copy,
// which is what keeps the version age Binomial(staleness, p).
SimulationReport simulate(const SimConfig& config, const Policy& policy,
                          const SlotObserver* observer = nullptr);

// All policies see identical draws (streams are keyed by seed and slot, not
// by policy), so cost gaps come out with common-random-number variance.
std::vector<SimulationReport> compare_policies(
    const SimConfig& config, const std::vector<const Policy*>& policies);

// How the fetch cost follows the population size in sweeps over N.
enum class CfRule : std::uint8_t { Fixed, ScaleWithN };

struct VarianceSweepRow {
  int num_users = 0;
  double theta = 0.0;
  double avg_cost = 0.0;
  double fetch_interval_variance = 0.0;
};

// For each population size, scale the fetch cost as N * (base C_f / base N),
// solve the optimal policy, simulate it, and report the fetch-interval
// variance. Requires a homogeneous base.
std::vector<VarianceSweepRow> fetch_interval_variance_sweep(
    const SimConfig& base, const std::vector<int>& n_values,
    CfRule rule = CfRule::ScaleWithN);

}  // namespace agecast
