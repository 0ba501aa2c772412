#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "agecast/errors.hpp"
#include "agecast/threshold_solver.hpp"
#include "doctest.h"
#include "support/golden.hpp"

using namespace agecast;

namespace {

SystemParams large_params() {
  return SystemParams::uniform(golden::large_num_users, golden::large_update_prob,
                               golden::large_request_prob, golden::large_fetch_cost,
                               AgeCostModel::linear(golden::large_c_a));
}

void check_against_golden(const golden::HomInstance& g, double theta_abs_tol) {
  const SystemParams params = golden::make_params(g);
  const auto [policy, trace] = solve_homogeneous(params, 0.0, 1e-9);
  CHECK(trace.converged);
  CHECK(std::abs(policy.theta - g.theta) <= theta_abs_tol);
  CHECK(policy.thresholds == g.thresholds);
  CHECK_FALSE(policy.heterogeneous);
  CHECK(policy.active_users.empty());
}

}  // namespace

TEST_CASE("fixed-point map pins, two users") {
  const SystemParams params = golden::make_params(golden::small_linear);
  const std::vector<std::vector<Tau>> expected_thresholds = {
      golden::small_linear_thr_at_half, golden::small_linear_thr_at_one,
      golden::small_linear_thr_at_two, golden::small_linear_thr_at_three};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& pin = golden::small_linear_curve[i];
    const SweepResult res = f_of_theta(params, pin.theta);
    CHECK(res.f_value == doctest::Approx(pin.f_value).epsilon(1e-9));
    CHECK(res.thresholds == expected_thresholds[i]);
  }
  CHECK(f_of_theta(params, 0.5).g_table.at(2) ==
        doctest::Approx(golden::small_linear_g2_at_half).epsilon(1e-12));
  CHECK(f_of_theta(params, 1.0).g_table.at(2) ==
        doctest::Approx(golden::small_linear_g2_at_one).epsilon(1e-12));
}

TEST_CASE("fixed-point map pins, hundred users") {
  const SystemParams params = large_params();
  for (const auto& pin : golden::large_curve) {
    const SweepResult res = f_of_theta(params, pin.theta);
    CHECK(res.f_value == doctest::Approx(pin.f_value).epsilon(1e-9));
    CHECK(res.thresholds.front() == pin.threshold_m1);
  }
}

TEST_CASE("fixed-point map is nonincreasing and capped by the fetch cost") {
  const SystemParams params = golden::make_params(golden::small_linear);
  double prev = 1e300;
  for (double theta = 0.05; theta <= 5.0; theta += 0.05) {
    const double f = f_of_theta(params, theta).f_value;
    CHECK(f <= prev + 1e-12);
    CHECK(f <= params.fetch_cost + 1e-12);
    prev = f;
  }
}

TEST_CASE("solutions match the reference instances") {
  check_against_golden(golden::small_linear, 1e-7);
  check_against_golden(golden::small_quadratic, 1e-7);
  check_against_golden(golden::trace_ten, 1e-7);
  check_against_golden(golden::q1_two, 1e-7);
  check_against_golden(golden::q1_five, 1e-7);
  check_against_golden(golden::single_user, 1e-7);
  check_against_golden(golden::single_deterministic, 1e-7);
}

TEST_CASE("hundred-user solution") {
  const auto [policy, trace] = solve_homogeneous(large_params(), 0.0, 1e-9);
  CHECK(trace.converged);
  CHECK(std::abs(policy.theta - golden::large_theta) <= 1e-6);
  REQUIRE(policy.thresholds.size() == 100);
  for (std::size_t m = 0; m < golden::large_head_thresholds.size(); ++m) {
    CHECK(policy.thresholds[m] == golden::large_head_thresholds[m]);
  }
  for (std::size_t m = 1; m < policy.thresholds.size(); ++m) {
    CHECK(policy.thresholds[m] <= policy.thresholds[m - 1]);
  }
}

TEST_CASE("fetch-on-every-request instance prices exactly") {
  const SystemParams params = golden::make_params(golden::fetch_always);
  // theta = P(any request) * fetch_cost, and f has an exact fixed point there
  CHECK(f_of_theta(params, 3.5).f_value == doctest::Approx(3.5).epsilon(1e-12));
  const auto [policy, trace] = solve_homogeneous(params, 0.0, 1e-9);
  CHECK(trace.converged);
  CHECK(std::abs(policy.theta - 3.5) <= 1e-8);
  CHECK(policy.thresholds == golden::fetch_always.thresholds);
}

TEST_CASE("iteration trace bookkeeping") {
  const SystemParams params = golden::make_params(golden::small_linear);
  const auto [policy, trace] = solve_homogeneous(params);
  CHECK(trace.converged);
  CHECK_FALSE(trace.used_bisection);
  CHECK(trace.steps.size() == trace.threshold_history.size());
  CHECK(trace.steps.size() >= 2);
  CHECK(policy.iterations == static_cast<long>(trace.steps.size()));
  CHECK(trace.alpha_final <= 0.1);
  CHECK(trace.alpha_final > 0.0);
  // the last recorded step belongs to the reported solution
  CHECK(trace.steps.back().first == policy.theta);
  CHECK(trace.threshold_history.back() == policy.thresholds);
  CHECK(std::abs(trace.steps.back().second - policy.theta) <= 1e-5);
}

TEST_CASE("relative-value gap table structure") {
  const SystemParams params = golden::make_params(golden::small_linear);
  const auto [policy, trace] = solve_homogeneous(params, 0.0, 1e-9);
  REQUIRE(policy.thresholds.front() == 6);
  REQUIRE(policy.g_table.size() == 5);  // staleness 2..6
  CHECK(policy.g_table.begin()->first == 2);
  CHECK(policy.g_table.rbegin()->first == 6);
  double prev = -1e300;
  for (const auto& [tau, g] : policy.g_table) {
    CHECK(g >= prev - 1e-12);
    prev = g;
  }
  const double prob_some = 1.0 - binom_pmf(2, 0.3, 0);
  const double saturation = params.fetch_cost - policy.theta / prob_some;
  CHECK(policy.g_table.at(6) == doctest::Approx(saturation).epsilon(1e-12));
}

TEST_CASE("solution is independent of the starting point") {
  const SystemParams params = golden::make_params(golden::small_linear);
  const auto [a, trace_a] = solve_homogeneous(params, 0.3, 1e-9);
  const auto [b, trace_b] = solve_homogeneous(params, 4.9, 1e-9);
  CHECK(trace_a.converged);
  CHECK(trace_b.converged);
  CHECK(std::abs(a.theta - b.theta) <= 5e-8);
  CHECK(a.thresholds == b.thresholds);
}

TEST_CASE("no requests means no fetching and zero cost") {
  const SystemParams params =
      SystemParams::uniform(3, 0.5, 0.0, 5.0, AgeCostModel::linear(1.0));
  const auto [policy, trace] = solve_homogeneous(params);
  CHECK(trace.converged);
  CHECK(policy.theta == 0.0);
  CHECK(policy.thresholds == std::vector<Tau>(3, kNeverFetch));
  CHECK(policy.g_table.empty());
}

TEST_CASE("free fetches are taken on every request") {
  const SystemParams params =
      SystemParams::uniform(2, 0.5, 0.3, 0.0, AgeCostModel::linear(1.0));
  const auto [policy, trace] = solve_homogeneous(params);
  CHECK(trace.converged);
  CHECK(policy.theta == 0.0);
  CHECK(policy.thresholds == std::vector<Tau>(2, Tau{1}));
}

TEST_CASE("flat cost tables reduce to a one-slot tradeoff") {
  const SystemParams params = SystemParams::uniform(
      3, 0.5, 0.5, 4.0, AgeCostModel::custom_convex({2.0, 2.0}));
  const auto [policy, trace] = solve_homogeneous(params);
  CHECK(trace.converged);
  // fetch iff fetch_cost <= m * 2; theta = sum_m P(m) * min(fetch_cost, 2m)
  CHECK(policy.theta == doctest::Approx(2.75).epsilon(1e-12));
  CHECK(policy.thresholds == std::vector<Tau>{kNeverFetch, 1, 1});
}

TEST_CASE("threshold lookups by request count") {
  const SystemParams params = golden::make_params(golden::small_linear);
  const auto [policy, trace] = solve_homogeneous(params, 0.0, 1e-9);
  CHECK(policy.threshold_for_count(0) == kNeverFetch);
  CHECK(policy.threshold_for_count(-1) == kNeverFetch);
  CHECK(policy.threshold_for_count(1) == 6);
  CHECK(policy.threshold_for_count(2) == 3);
  CHECK_THROWS_AS((void)policy.threshold_for_count(3), std::out_of_range);
  CHECK(policy.threshold_for_request_vector({1, 0}) == 6);
  CHECK(policy.threshold_for_request_vector({0, 1}) == 6);
  CHECK(policy.threshold_for_request_vector({1, 1}) == 3);
  CHECK(policy.threshold_for_request_vector({0, 0}) == kNeverFetch);
}

TEST_CASE("two heterogeneous users match the reference") {
  const SystemParams params =
      golden::make_het_params(golden::het_two_update_prob, golden::het_two_fetch_cost,
                              golden::het_two_request_probs, golden::het_two_c_a);
  const ThresholdPolicy policy = solve_heterogeneous(params);
  CHECK(policy.heterogeneous);
  CHECK(policy.active_users == std::vector<int>{0, 1});
  CHECK(std::abs(policy.theta - golden::het_two_theta) <= 1e-5);
  // weights 0, 1, 3, 4 already sort in mask order
  CHECK(policy.rank_to_config == std::vector<std::uint32_t>{0, 1, 2, 3});
  CHECK(policy.config_to_rank == std::vector<std::int32_t>{0, 1, 2, 3});
  REQUIRE(policy.thresholds.size() == 3);
  for (std::uint32_t mask = 0; mask < 4; ++mask) {
    const std::vector<std::uint8_t> s{static_cast<std::uint8_t>(mask & 1u),
                                      static_cast<std::uint8_t>((mask >> 1) & 1u)};
    CHECK(policy.threshold_for_request_vector(s) ==
          golden::het_two_mask_thresholds[mask]);
  }

  // saturation level of the gap table, from the final sweep
  const double prob_some = 1.0 - (1.0 - 0.2) * (1.0 - 0.6);
  const double saturation = params.fetch_cost - policy.theta / prob_some;
  const Tau tau1 = policy.thresholds.front();
  CHECK(policy.g_table.rbegin()->first == tau1);
  CHECK(policy.g_table.at(tau1) == doctest::Approx(saturation).epsilon(1e-9));
}

TEST_CASE("three heterogeneous users match the reference") {
  const SystemParams params = golden::make_het_params(
      golden::het_three_update_prob, golden::het_three_fetch_cost,
      golden::het_three_request_probs, golden::het_three_c_a);
  const ThresholdPolicy policy = solve_heterogeneous(params);
  CHECK(std::abs(policy.theta - golden::het_three_theta) <= 1e-5);
  // scales 1, 0.5, 0.25 rank the configurations by total weight
  CHECK(policy.rank_to_config ==
        std::vector<std::uint32_t>{0, 4, 2, 6, 1, 5, 3, 7});
  // a superset of requesters never waits longer
  for (std::uint32_t mask = 1; mask < 8; ++mask) {
    for (int i = 0; i < 3; ++i) {
      const std::uint32_t sub = mask & ~(1u << i);
      if (sub == mask || sub == 0) continue;
      const Tau t_mask = policy.thresholds[static_cast<std::size_t>(
          policy.config_to_rank[mask] - 1)];
      const Tau t_sub = policy.thresholds[static_cast<std::size_t>(
          policy.config_to_rank[sub] - 1)];
      CHECK(t_mask <= t_sub);
    }
  }
}

TEST_CASE("identical users agree with the homogeneous solver") {
  const SystemParams params = golden::make_params(golden::small_quadratic);
  const ThresholdPolicy het = solve_heterogeneous(params);
  const auto [hom, trace] = solve_homogeneous(params);
  CHECK(std::abs(het.theta - hom.theta) <= 2e-5);
  for (std::size_t r = 1; r < het.rank_to_config.size(); ++r) {
    const int m = std::popcount(het.rank_to_config[r]);
    CHECK(het.thresholds[r - 1] == hom.thresholds[static_cast<std::size_t>(m - 1)]);
  }
}

TEST_CASE("masked-out users do not change the enumeration") {
  SystemParams params;
  params.num_users = 3;
  params.update_prob = golden::het_two_update_prob;
  params.fetch_cost = golden::het_two_fetch_cost;
  params.request_probs = {0.2, 0.6, 0.0};  // third user never requests
  params.cost_models = {AgeCostModel::linear(1.0), AgeCostModel::linear(3.0),
                        AgeCostModel::linear(7.0)};
  params.validate();
  const ThresholdPolicy masked = solve_heterogeneous(params);
  CHECK(masked.active_users == std::vector<int>{0, 1});
  const ThresholdPolicy plain = solve_heterogeneous(
      golden::make_het_params(golden::het_two_update_prob, golden::het_two_fetch_cost,
                              golden::het_two_request_probs, golden::het_two_c_a));
  CHECK(masked.theta == plain.theta);
  CHECK(masked.thresholds == plain.thresholds);
  CHECK(masked.threshold_for_request_vector({1, 0, 1}) ==
        golden::het_two_mask_thresholds[1]);
  CHECK(masked.threshold_for_request_vector({0, 1, 1}) ==
        golden::het_two_mask_thresholds[2]);

  // a flat cost model masks a user out just like a zero request rate
  SystemParams flat_third = params;
  flat_third.request_probs[2] = 0.9;
  flat_third.cost_models[2] = AgeCostModel::linear(0.0);
  flat_third.validate();
  const ThresholdPolicy masked2 = solve_heterogeneous(flat_third);
  CHECK(masked2.active_users == std::vector<int>{0, 1});
  CHECK(masked2.theta == plain.theta);
  CHECK(masked2.thresholds == plain.thresholds);
}

TEST_CASE("all users masked out") {
  SystemParams params;
  params.num_users = 2;
  params.update_prob = 0.5;
  params.fetch_cost = 4.0;
  params.request_probs = {0.0, 0.5};
  params.cost_models = {AgeCostModel::linear(1.0), AgeCostModel::linear(0.0)};
  params.validate();
  const ThresholdPolicy policy = solve_heterogeneous(params);
  CHECK(policy.active_users.empty());
  CHECK(policy.theta == 0.0);
  CHECK(policy.thresholds.empty());
  CHECK(policy.threshold_for_request_vector({1, 1}) == kNeverFetch);
}

TEST_CASE("proportional custom tables are accepted") {
  SystemParams params;
  params.num_users = 2;
  params.update_prob = 0.5;
  params.fetch_cost = 6.0;
  params.request_probs = {0.3, 0.5};
  params.cost_models = {AgeCostModel::custom_convex({0.0, 1.0, 3.0}),
                        AgeCostModel::custom_convex({0.0, 2.0, 6.0})};
  params.validate();
  const ThresholdPolicy policy = solve_heterogeneous(params);
  CHECK(policy.theta > 0.0);
  REQUIRE(policy.thresholds.size() == 3);
  // weight of user 1 is twice user 0, so ranks follow mask order
  CHECK(policy.rank_to_config == std::vector<std::uint32_t>{0, 1, 2, 3});
  CHECK(policy.thresholds[2] <= policy.thresholds[1]);
  CHECK(policy.thresholds[1] <= policy.thresholds[0]);
}

TEST_CASE("non-proportional cost models are rejected") {
  SystemParams mixed;
  mixed.num_users = 2;
  mixed.update_prob = 0.5;
  mixed.fetch_cost = 6.0;
  mixed.request_probs = {0.3, 0.5};
  mixed.cost_models = {AgeCostModel::linear(1.0), AgeCostModel::quadratic(1.0)};
  mixed.validate();
  CHECK_THROWS_AS((void)solve_heterogeneous(mixed), NonProportionalCosts);

  SystemParams tables = mixed;
  tables.cost_models = {AgeCostModel::custom_convex({0.0, 1.0, 3.0}),
                        AgeCostModel::custom_convex({0.0, 1.0, 4.0})};
  CHECK_THROWS_AS((void)solve_heterogeneous(tables), NonProportionalCosts);

  SystemParams zeros = mixed;
  zeros.cost_models = {AgeCostModel::custom_convex({0.0, 1.0, 2.0}),
                       AgeCostModel::custom_convex({1.0, 2.0, 3.0})};
  CHECK_THROWS_AS((void)solve_heterogeneous(zeros), NonProportionalCosts);
}

TEST_CASE("configuration enumeration refuses oversized populations") {
  const std::vector<double> qs(13, 0.5);
  const std::vector<double> cas(13, 1.0);
  const SystemParams params = golden::make_het_params(0.5, 10.0, qs, cas);
  CHECK_THROWS_AS((void)solve_heterogeneous(params), RefuseTooLarge);
}

TEST_CASE("argument validation") {
  const SystemParams params = golden::make_params(golden::small_linear);
  CHECK_THROWS_AS((void)f_of_theta(params, 0.0), std::invalid_argument);
  CHECK_THROWS_AS((void)f_of_theta(params, -1.0), std::invalid_argument);
  CHECK_THROWS_AS((void)solve_homogeneous(params, 0.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS((void)solve_homogeneous(params, 0.0, 1e-6, 1.0),
                  std::invalid_argument);
  const SystemParams het = golden::make_het_params(0.5, 6.0, {0.2, 0.6}, {1.0, 3.0});
  CHECK_THROWS_AS((void)f_of_theta(het, 1.0), std::invalid_argument);
  CHECK_THROWS_AS((void)solve_homogeneous(het), std::invalid_argument);
}
