#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "agecast/simulator.hpp"

namespace agecast {

enum class ExperimentKind : std::uint8_t {
  Solve,
  Oracle,
  Whittle,
  Simulate,
  Compare,
  CurveFTheta,
  ThresholdSweep,
  CostSweep,
  VarianceSweep,
  GapVsN,
};

const char* to_string(ExperimentKind kind);

// Population template for experiments that sweep the population size: each
// class holds a fraction of the users and shares one request probability and
// cost model. Fractions are materialized with rounding that preserves the total.
struct ClassSpec {
  double fraction = 1.0;
  double request_prob = 0.0;
  AgeCostModel model = AgeCostModel::linear(0.0);
};

struct SolverKnobs {
  double theta0 = 0.0;  // <= 0 selects fetch_cost / 2
  double eps = 1e-6;
  double alpha0 = 0.1;
  Tau tau_max = 200;    // oracle starting truncation, doubled as needed
  double tol = 1e-9;
  long max_iters = 200000;
};

struct CurveSpec {
  double min = 0.0;
  double max = 0.0;
  int points = 101;
};

struct SweepAxis {
  std::string parameter;  // c_a | fetch_cost | request_prob | update_prob
  std::vector<double> values;
};

// One parsed experiment file. YAML is the primary encoding and JSON the
// alternate; both land in the same validation path.
struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::Solve;
  SystemParams system;
  std::vector<ClassSpec> classes;  // only for class-templated populations
  SolverKnobs solver;
  std::int64_t horizon = 1'000'000;
  std::uint64_t seed = 1;
  std::int64_t warmup = -1;
  CostMode cost_mode = CostMode::Expected;
  std::vector<std::string> policies;  // optimal | whittle | always_fetch | never_fetch | periodic:<k>
  SweepAxis sweep;
  CurveSpec curve;
  std::vector<int> population_sizes;  // VarianceSweep / GapVsN axis
  CfRule fetch_cost_rule = CfRule::Fixed;  // population sweeps only
  std::string output_path;
  int jobs = 1;

  // expected_kind pins the experiment when the file omits it; a conflicting
  // file is a ConfigError.
  static ExperimentConfig load(const std::string& path,
                               std::optional<ExperimentKind> expected_kind = {});
  static ExperimentConfig from_json_text(const std::string& text,
                                         std::optional<ExperimentKind> expected_kind = {});

  SystemParams materialize_population(int n) const;
  SimConfig sim_config() const;
};

// Runs the named experiment, writes its artifacts, prints one summary line
// per result row. Returns a process exit status (0 on success).
int run(const std::string& config_file);
int run_experiment(const ExperimentConfig& config);

struct SelftestItem {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SelftestReport {
  std::vector<SelftestItem> items;
  bool all_pass = true;
  std::string summary() const;
};

// Randomized solver-vs-oracle agreement suite plus the degenerate-case
// batteries; deterministic for a fixed seed.
SelftestReport selftest(std::uint64_t seed = 20260825ULL);

}  // namespace agecast
