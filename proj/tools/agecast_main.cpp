#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "agecast/experiment.hpp"

namespace {

struct CommonOptions {
  std::string config;
  std::string output;
  std::int64_t seed = -1;
  std::int64_t horizon = -1;
  int jobs = -1;
};

void attach_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("-c,--config", opts.config, "experiment config file (YAML or JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", opts.output, "output file, overrides the config");
  cmd->add_option("--seed", opts.seed, "random seed, overrides the config");
  cmd->add_option("--horizon", opts.horizon, "simulation slots, overrides the config");
  cmd->add_option("-j,--jobs", opts.jobs,
                  "worker threads for sweeps (0 = hardware width)");
}

int run_command(const CommonOptions& opts,
                std::optional<agecast::ExperimentKind> expected,
                bool sweep_family) {
  agecast::ExperimentConfig cfg = agecast::ExperimentConfig::load(opts.config, expected);
  if (sweep_family) {
    using agecast::ExperimentKind;
    if (cfg.experiment != ExperimentKind::ThresholdSweep &&
        cfg.experiment != ExperimentKind::CostSweep &&
        cfg.experiment != ExperimentKind::VarianceSweep &&
        cfg.experiment != ExperimentKind::GapVsN) {
      throw agecast::ConfigError(
          std::string("experiment: '") + agecast::to_string(cfg.experiment) +
          "' is not a sweep; use the matching subcommand");
    }
  }
  if (!opts.output.empty()) cfg.output_path = opts.output;
  if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
  if (opts.horizon >= 0) cfg.horizon = opts.horizon;
  if (opts.jobs >= 0) cfg.jobs = opts.jobs;
  return agecast::run_experiment(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"agecast: threshold policies for broadcast content fetching"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    std::optional<agecast::ExperimentKind> kind;
    bool sweep_family = false;
    CommonOptions opts;
  };
  Sub subs[] = {
      {"solve", "solve the average-cost fixed point and report thresholds",
       agecast::ExperimentKind::Solve, false, {}},
      {"oracle", "value-iteration reference solution on a truncated state space",
       agecast::ExperimentKind::Oracle, false, {}},
      {"whittle", "per-user index thresholds next to the optimal ones",
       agecast::ExperimentKind::Whittle, false, {}},
      {"simulate", "simulate one policy and report its average cost",
       agecast::ExperimentKind::Simulate, false, {}},
      {"compare", "simulate several policies on common random numbers",
       agecast::ExperimentKind::Compare, false, {}},
      {"curve-ftheta", "tabulate the fixed-point map over a grid",
       agecast::ExperimentKind::CurveFTheta, false, {}},
      {"sweep", "run a parameter, variance or population sweep", std::nullopt,
       true, {}},
  };
  for (Sub& sub : subs) {
    CLI::App* cmd = app.add_subcommand(sub.name, sub.help);
    attach_common(cmd, sub.opts);
    cmd->callback([&sub] {
      const int status = run_command(sub.opts, sub.kind, sub.sweep_family);
      if (status != 0) throw CLI::RuntimeError(status);
    });
  }

  std::uint64_t selftest_seed = 20260825ULL;
  CLI::App* selftest_cmd =
      app.add_subcommand("selftest", "run the built-in consistency checks");
  selftest_cmd->add_option("--seed", selftest_seed, "seed for the randomized checks");
  selftest_cmd->callback([&selftest_seed] {
    const agecast::SelftestReport report = agecast::selftest(selftest_seed);
    std::fputs(report.summary().c_str(), stdout);
    if (!report.all_pass) throw CLI::RuntimeError(1);
  });

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
