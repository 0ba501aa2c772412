#include "agecast/experiment.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>

#include "agecast/oracle.hpp"
#include "json.hpp"

namespace agecast {

namespace {

using nlohmann::json;

constexpr std::pair<ExperimentKind, const char*> kKindNames[] = {
    {ExperimentKind::Solve, "solve"},
    {ExperimentKind::Oracle, "oracle"},
    {ExperimentKind::Whittle, "whittle"},
    {ExperimentKind::Simulate, "simulate"},
    {ExperimentKind::Compare, "compare"},
    {ExperimentKind::CurveFTheta, "curve_f_theta"},
    {ExperimentKind::ThresholdSweep, "threshold_sweep"},
    {ExperimentKind::CostSweep, "cost_sweep"},
    {ExperimentKind::VarianceSweep, "variance_sweep"},
    {ExperimentKind::GapVsN, "gap_vs_n"},
};

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError(path + ": " + what);
}

std::string join_path(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

ExperimentKind parse_kind(const std::string& name, const std::string& path) {
  for (const auto& [kind, kind_name] : kKindNames) {
    if (name == kind_name) return kind;
  }
  fail(path, "unknown experiment '" + name + "'");
}

json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Scalar: {
      if (node.Tag() == "!") return node.as<std::string>();  // quoted scalar
      bool b = false;
      if (YAML::convert<bool>::decode(node, b)) return b;
      long long i = 0;
      if (YAML::convert<long long>::decode(node, i)) return i;
      double d = 0.0;
      if (YAML::convert<double>::decode(node, d)) return d;
      return node.as<std::string>();
    }
    case YAML::NodeType::Sequence: {
      json arr = json::array();
      for (const auto& child : node) arr.push_back(yaml_to_json(child));
      return arr;
    }
    case YAML::NodeType::Map: {
      json obj = json::object();
      for (const auto& kv : node) {
        obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      }
      return obj;
    }
  }
  return nullptr;
}

const json* find(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return nullptr;
  return &*it;
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (std::none_of(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; })) {
      fail(join_path(path, key), "unknown field");
    }
  }
}

double number_at(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "must be a number");
  return v.get<double>();
}

std::int64_t integer_at(const json& v, const std::string& path) {
  if (!v.is_number_integer()) fail(path, "must be an integer");
  return v.get<std::int64_t>();
}

std::string string_at(const json& v, const std::string& path) {
  if (!v.is_string()) fail(path, "must be a string");
  return v.get<std::string>();
}

const json& require_field(const json& obj, const char* key,
                          const std::string& parent) {
  const json* v = find(obj, key);
  if (v == nullptr) fail(join_path(parent, key), "required field is missing");
  return *v;
}

double req_number(const json& obj, const char* key, const std::string& parent) {
  return number_at(require_field(obj, key, parent), join_path(parent, key));
}

double opt_number(const json& obj, const char* key, const std::string& parent,
                  double def) {
  const json* v = find(obj, key);
  return v ? number_at(*v, join_path(parent, key)) : def;
}

std::int64_t opt_integer(const json& obj, const char* key,
                         const std::string& parent, std::int64_t def) {
  const json* v = find(obj, key);
  return v ? integer_at(*v, join_path(parent, key)) : def;
}

std::vector<double> number_list(const json& v, const std::string& path) {
  if (!v.is_array()) fail(path, "must be a list of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(number_at(v[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

AgeCostModel parse_cost(const json& node, const std::string& path) {
  if (!node.is_object()) fail(path, "must be a map");
  check_keys(node, path, {"kind", "c_a", "table"});
  const std::string kind =
      string_at(require_field(node, "kind", path), join_path(path, "kind"));
  try {
    if (kind == "linear") {
      return AgeCostModel::linear(req_number(node, "c_a", path));
    }
    if (kind == "quadratic") {
      return AgeCostModel::quadratic(req_number(node, "c_a", path));
    }
    if (kind == "custom") {
      return AgeCostModel::custom_convex(
          number_list(require_field(node, "table", path), join_path(path, "table")));
    }
  } catch (const std::invalid_argument& e) {
    fail(path, e.what());
  }
  fail(join_path(path, "kind"), "must be linear, quadratic or custom");
}

SystemParams parse_system(const json& node, bool class_based) {
  const std::string path = "system";
  if (!node.is_object()) fail(path, "must be a map");
  check_keys(node, path,
             {"num_users", "update_prob", "fetch_cost", "request_prob",
              "request_probs", "cost", "costs"});
  SystemParams sys;
  sys.num_users = static_cast<int>(
      integer_at(require_field(node, "num_users", path), "system.num_users"));
  sys.update_prob = req_number(node, "update_prob", path);
  sys.fetch_cost = req_number(node, "fetch_cost", path);

  const json* request_prob = find(node, "request_prob");
  const json* request_probs = find(node, "request_probs");
  const json* cost = find(node, "cost");
  const json* costs = find(node, "costs");
  if (class_based) {
    if (request_prob || request_probs || cost || costs) {
      fail(path, "per-user fields conflict with classes; put them in the class specs");
    }
    if (sys.num_users < 1) fail("system.num_users", "must be >= 1");
    return sys;  // request_probs / cost_models come from the classes
  }

  if ((request_prob != nullptr) == (request_probs != nullptr)) {
    fail(path, "give exactly one of request_prob and request_probs");
  }
  if (request_prob) {
    sys.request_probs.assign(
        static_cast<std::size_t>(std::max(sys.num_users, 0)),
        number_at(*request_prob, "system.request_prob"));
  } else {
    sys.request_probs = number_list(*request_probs, "system.request_probs");
  }

  if ((cost != nullptr) == (costs != nullptr)) {
    fail(path, "give exactly one of cost and costs");
  }
  if (cost) {
    sys.cost_models.assign(static_cast<std::size_t>(std::max(sys.num_users, 0)),
                           parse_cost(*cost, "system.cost"));
  } else {
    if (!costs->is_array()) fail("system.costs", "must be a list of cost maps");
    for (std::size_t i = 0; i < costs->size(); ++i) {
      sys.cost_models.push_back(
          parse_cost((*costs)[i], "system.costs[" + std::to_string(i) + "]"));
    }
  }
  sys.validate();
  return sys;
}

ClassSpec parse_class(const json& node, const std::string& path) {
  if (!node.is_object()) fail(path, "must be a map");
  check_keys(node, path, {"fraction", "request_prob", "cost"});
  ClassSpec spec;
  spec.fraction = req_number(node, "fraction", path);
  if (!(spec.fraction > 0.0 && spec.fraction <= 1.0)) {
    fail(join_path(path, "fraction"), "must be in (0, 1]");
  }
  spec.request_prob = req_number(node, "request_prob", path);
  if (!(spec.request_prob >= 0.0 && spec.request_prob <= 1.0)) {
    fail(join_path(path, "request_prob"), "must be in [0, 1]");
  }
  spec.model = parse_cost(require_field(node, "cost", path), join_path(path, "cost"));
  return spec;
}

SolverKnobs parse_solver(const json& node) {
  const std::string path = "solver";
  if (!node.is_object()) fail(path, "must be a map");
  check_keys(node, path, {"theta0", "eps", "alpha0", "tau_max", "tol", "max_iters"});
  SolverKnobs knobs;
  knobs.theta0 = opt_number(node, "theta0", path, knobs.theta0);
  knobs.eps = opt_number(node, "eps", path, knobs.eps);
  knobs.alpha0 = opt_number(node, "alpha0", path, knobs.alpha0);
  knobs.tau_max = opt_integer(node, "tau_max", path, knobs.tau_max);
  knobs.tol = opt_number(node, "tol", path, knobs.tol);
  knobs.max_iters = static_cast<long>(
      opt_integer(node, "max_iters", path, knobs.max_iters));
  if (!(knobs.eps > 0.0)) fail("solver.eps", "must be positive");
  if (!(knobs.alpha0 > 0.0 && knobs.alpha0 < 1.0)) {
    fail("solver.alpha0", "must be in (0, 1)");
  }
  if (knobs.tau_max < 4) fail("solver.tau_max", "must be at least 4");
  if (!(knobs.tol > 0.0)) fail("solver.tol", "must be positive");
  if (knobs.max_iters < 1) fail("solver.max_iters", "must be at least 1");
  return knobs;
}

void validate_policy_name(const std::string& name, const std::string& path) {
  if (name == "optimal" || name == "whittle" || name == "always_fetch" ||
      name == "never_fetch") {
    return;
  }
  if (name.rfind("periodic:", 0) == 0) {
    const std::string arg = name.substr(9);
    char* end = nullptr;
    const long long k = std::strtoll(arg.c_str(), &end, 10);
    if (arg.empty() || *end != '\0' || k < 1) {
      fail(path, "periodic policy needs a positive integer period");
    }
    return;
  }
  fail(path, "unknown policy '" + name + "'");
}

ExperimentConfig parse_root(const json& root,
                            std::optional<ExperimentKind> expected_kind) {
  if (!root.is_object()) fail("config", "root must be a map");
  check_keys(root, "",
             {"experiment", "system", "classes", "solver", "horizon", "seed",
              "warmup", "cost_mode", "policies", "sweep", "curve",
              "population_sizes", "fetch_cost_rule", "output", "jobs"});

  ExperimentConfig cfg;
  if (const json* kind = find(root, "experiment")) {
    cfg.experiment = parse_kind(string_at(*kind, "experiment"), "experiment");
    if (expected_kind && *expected_kind != cfg.experiment) {
      fail("experiment", std::string("file says '") + to_string(cfg.experiment) +
                             "' but the command expects '" +
                             to_string(*expected_kind) + "'");
    }
  } else if (expected_kind) {
    cfg.experiment = *expected_kind;
  } else {
    fail("experiment", "required field is missing");
  }

  if (const json* classes = find(root, "classes")) {
    if (!classes->is_array() || classes->empty()) {
      fail("classes", "must be a non-empty list");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < classes->size(); ++i) {
      cfg.classes.push_back(
          parse_class((*classes)[i], "classes[" + std::to_string(i) + "]"));
      total += cfg.classes.back().fraction;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      fail("classes", "fractions must sum to 1");
    }
  }

  cfg.system = parse_system(require_field(root, "system", ""), !cfg.classes.empty());
  if (const json* solver = find(root, "solver")) cfg.solver = parse_solver(*solver);

  cfg.horizon = opt_integer(root, "horizon", "", cfg.horizon);
  if (cfg.horizon < 1) fail("horizon", "must be at least 1");
  const std::int64_t seed = opt_integer(root, "seed", "", 1);
  if (seed < 0) fail("seed", "must be >= 0");
  cfg.seed = static_cast<std::uint64_t>(seed);
  cfg.warmup = opt_integer(root, "warmup", "", cfg.warmup);

  if (const json* mode = find(root, "cost_mode")) {
    const std::string name = string_at(*mode, "cost_mode");
    if (name == "expected") {
      cfg.cost_mode = CostMode::Expected;
    } else if (name == "realized") {
      cfg.cost_mode = CostMode::Realized;
    } else {
      fail("cost_mode", "must be expected or realized");
    }
  }

  if (const json* policies = find(root, "policies")) {
    if (!policies->is_array()) fail("policies", "must be a list of policy names");
    for (std::size_t i = 0; i < policies->size(); ++i) {
      const std::string path = "policies[" + std::to_string(i) + "]";
      const std::string name = string_at((*policies)[i], path);
      validate_policy_name(name, path);
      cfg.policies.push_back(name);
    }
  }

  if (const json* sweep = find(root, "sweep")) {
    if (!sweep->is_object()) fail("sweep", "must be a map");
    check_keys(*sweep, "sweep", {"parameter", "values"});
    cfg.sweep.parameter = string_at(require_field(*sweep, "parameter", "sweep"),
                                    "sweep.parameter");
    if (cfg.sweep.parameter != "c_a" && cfg.sweep.parameter != "fetch_cost" &&
        cfg.sweep.parameter != "request_prob" &&
        cfg.sweep.parameter != "update_prob") {
      fail("sweep.parameter",
           "must be one of c_a, fetch_cost, request_prob, update_prob");
    }
    cfg.sweep.values =
        number_list(require_field(*sweep, "values", "sweep"), "sweep.values");
    if (cfg.sweep.values.empty()) fail("sweep.values", "must not be empty");
  }

  if (const json* curve = find(root, "curve")) {
    if (!curve->is_object()) fail("curve", "must be a map");
    check_keys(*curve, "curve", {"min", "max", "points"});
    cfg.curve.min = req_number(*curve, "min", "curve");
    cfg.curve.max = req_number(*curve, "max", "curve");
    cfg.curve.points = static_cast<int>(opt_integer(*curve, "points", "curve",
                                                    cfg.curve.points));
    if (!(cfg.curve.min > 0.0)) fail("curve.min", "must be positive");
    if (!(cfg.curve.max > cfg.curve.min)) fail("curve.max", "must exceed curve.min");
    if (cfg.curve.points < 2) fail("curve.points", "must be at least 2");
  }

  if (const json* sizes = find(root, "population_sizes")) {
    if (!sizes->is_array() || sizes->empty()) {
      fail("population_sizes", "must be a non-empty list of integers");
    }
    for (std::size_t i = 0; i < sizes->size(); ++i) {
      const std::string path = "population_sizes[" + std::to_string(i) + "]";
      const std::int64_t n = integer_at((*sizes)[i], path);
      if (n < 1) fail(path, "must be >= 1");
      cfg.population_sizes.push_back(static_cast<int>(n));
    }
  }

  if (const json* rule = find(root, "fetch_cost_rule")) {
    const std::string name = string_at(*rule, "fetch_cost_rule");
    if (name == "fixed") {
      cfg.fetch_cost_rule = CfRule::Fixed;
    } else if (name == "scale_with_n") {
      cfg.fetch_cost_rule = CfRule::ScaleWithN;
    } else {
      fail("fetch_cost_rule", "must be fixed or scale_with_n");
    }
  }

  if (const json* output = find(root, "output")) {
    cfg.output_path = string_at(*output, "output");
  }
  cfg.jobs = static_cast<int>(opt_integer(root, "jobs", "", cfg.jobs));
  if (cfg.jobs < 0) fail("jobs", "must be >= 0 (0 selects the hardware width)");
  return cfg;
}

}  // namespace

const char* to_string(ExperimentKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

ExperimentConfig ExperimentConfig::from_json_text(
    const std::string& text, std::optional<ExperimentKind> expected_kind) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_root(root, expected_kind);
}

ExperimentConfig ExperimentConfig::load(
    const std::string& path, std::optional<ExperimentKind> expected_kind) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  if (std::filesystem::path(path).extension() == ".json") {
    return from_json_text(text, expected_kind);
  }
  YAML::Node node;
  try {
    node = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  return parse_root(yaml_to_json(node), expected_kind);
}

SystemParams ExperimentConfig::materialize_population(int n) const {
  if (n < 1) throw ConfigError("population size must be >= 1");
  if (classes.empty()) {
    if (n == system.num_users) return system;
    if (!system.homogeneous()) {
      throw ConfigError(
          "population_sizes: resizing a heterogeneous system needs classes");
    }
    return SystemParams::uniform(n, system.update_prob,
                                 system.request_probs.front(), system.fetch_cost,
                                 system.cost_models.front());
  }

  // floor the per-class counts, then hand the shortfall to the classes with
  // the largest dropped fractional parts so the total is exact
  const std::size_t k = classes.size();
  std::vector<int> counts(k);
  std::vector<std::pair<double, std::size_t>> remainders(k);
  int assigned = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double exact = classes[c].fraction * n;
    counts[c] = static_cast<int>(std::floor(exact + 1e-9));
    assigned += counts[c];
    remainders[c] = {exact - counts[c], c};
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int extra = n - assigned; extra > 0; --extra) {
    ++counts[remainders[static_cast<std::size_t>(n - assigned - extra)].second];
  }

  SystemParams out;
  out.num_users = n;
  out.update_prob = system.update_prob;
  out.fetch_cost = system.fetch_cost;
  for (std::size_t c = 0; c < k; ++c) {
    for (int j = 0; j < counts[c]; ++j) {
      out.request_probs.push_back(classes[c].request_prob);
      out.cost_models.push_back(classes[c].model);
    }
  }
  out.validate();
  return out;
}

SimConfig ExperimentConfig::sim_config() const {
  SimConfig sc;
  sc.params = materialize_population(system.num_users);
  sc.horizon = horizon;
  sc.seed = seed;
  sc.warmup = warmup;
  sc.cost_mode = cost_mode;
  return sc;
}

// ---------------------------------------------------------------------------
// experiment execution

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_tau(Tau t) {
  return t == kNeverFetch ? "never" : std::to_string(t);
}

json tau_json(Tau t) {
  if (t == kNeverFetch) return "never";
  return t;
}

std::filesystem::path resolve_output(const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_relative()) {
    if (const char* dir = std::getenv("AGECAST_OUT_DIR")) {
      p = std::filesystem::path(dir) / p;
    }
  }
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  return p;
}

void write_csv(const std::string& output_path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  const std::filesystem::path path = resolve_output(output_path);
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < header.size(); ++i) {
    out << (i ? "," : "") << header[i];
  }
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out << (i ? "," : "") << row[i];
    }
    out << '\n';
  }
  if (!out) throw Error("failed while writing " + path.string());
  std::printf("wrote %s (%zu rows)\n", path.string().c_str(), rows.size());
}

void write_json_doc(const std::string& output_path, const json& doc) {
  const std::filesystem::path path = resolve_output(output_path);
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  std::printf("wrote %s\n", path.string().c_str());
}

int effective_jobs(int jobs, std::size_t count) {
  int j = jobs == 0 ? static_cast<int>(std::thread::hardware_concurrency()) : jobs;
  j = std::max(j, 1);
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(j),
                                                std::max<std::size_t>(count, 1)));
}

// Ordered parallel map: results land at their input index, so output files
// do not depend on scheduling.
template <typename Fn>
auto parallel_map(int jobs, std::size_t count, Fn&& fn)
    -> std::vector<decltype(fn(std::size_t{}))> {
  using T = decltype(fn(std::size_t{}));
  std::vector<T> out(count);
  const int workers = effective_jobs(jobs, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          out[i] = fn(i);
        } catch (...) {
          const std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

ThresholdPolicy solve_any(const SystemParams& params, const SolverKnobs& knobs) {
  if (params.homogeneous()) {
    return solve_homogeneous(params, knobs.theta0, knobs.eps, knobs.alpha0).first;
  }
  return solve_heterogeneous(params);
}

std::vector<std::unique_ptr<Policy>> build_policies(
    const std::vector<std::string>& names, const SystemParams& params,
    const SolverKnobs& knobs) {
  std::vector<std::unique_ptr<Policy>> out;
  for (const std::string& name : names) {
    if (name == "optimal") {
      out.push_back(
          std::make_unique<ThresholdPolicyAdapter>(solve_any(params, knobs)));
    } else if (name == "whittle") {
      auto table = std::make_shared<WhittleIndexTable>(
          WhittleIndexTable::build(params));
      out.push_back(
          std::make_unique<WhittlePolicyAdapter>(std::move(table), params.fetch_cost));
    } else if (name == "always_fetch") {
      out.push_back(std::make_unique<AlwaysFetch>());
    } else if (name == "never_fetch") {
      out.push_back(std::make_unique<NeverFetch>());
    } else {
      out.push_back(std::make_unique<PeriodicFetch>(
          static_cast<Tau>(std::stoll(name.substr(9)))));
    }
  }
  return out;
}

json thresholds_json(const std::vector<Tau>& thresholds) {
  json arr = json::array();
  for (const Tau t : thresholds) arr.push_back(tau_json(t));
  return arr;
}

json policy_json(const ThresholdPolicy& policy) {
  json doc;
  doc["theta"] = policy.theta;
  doc["iterations"] = policy.iterations;
  doc["thresholds"] = thresholds_json(policy.thresholds);
  if (policy.heterogeneous) {
    doc["active_users"] = policy.active_users;
    json configs = json::array();
    for (std::size_t r = 1; r < policy.rank_to_config.size(); ++r) {
      json entry;
      entry["rank"] = r;
      entry["mask"] = policy.rank_to_config[r];
      entry["threshold"] = tau_json(policy.thresholds[r - 1]);
      configs.push_back(std::move(entry));
    }
    doc["configs"] = std::move(configs);
  }
  return doc;
}

std::vector<std::string> report_row(const SimulationReport& r, double theta) {
  return {r.policy_name,
          fmt(r.avg_cost),
          fmt(r.ci95_halfwidth),
          fmt(r.fetch_cost_share),
          fmt(r.age_cost_share),
          fmt(r.fetch_rate),
          fmt(r.fetch_interval_mean),
          fmt(r.fetch_interval_variance),
          std::to_string(r.slots_measured),
          std::to_string(r.fetches),
          std::isnan(theta) ? "" : fmt(theta)};
}

const std::vector<std::string> kReportHeader = {
    "policy",          "avg_cost",          "ci95_halfwidth",
    "fetch_cost_share", "age_cost_share",   "fetch_rate",
    "fetch_interval_mean", "fetch_interval_variance", "slots_measured",
    "fetches",         "theta"};

void print_report(const SimulationReport& r, double theta) {
  std::printf("%-14s avg_cost %.6f +- %.6f (fetch %.6f, age %.6f)",
              r.policy_name.c_str(), r.avg_cost, r.ci95_halfwidth,
              r.fetch_cost_share, r.age_cost_share);
  if (!std::isnan(theta) && theta > 0.0) {
    std::printf("  vs theta %.6f (ratio %.4f)", theta, r.avg_cost / theta);
  }
  std::printf("\n");
}

int run_solve(const ExperimentConfig& cfg) {
  const SystemParams params = cfg.materialize_population(cfg.system.num_users);
  json doc;
  if (params.homogeneous()) {
    const auto [policy, trace] = solve_homogeneous(
        params, cfg.solver.theta0, cfg.solver.eps, cfg.solver.alpha0);
    doc = policy_json(policy);
    doc["fixed_point_steps"] = trace.steps.size();
    doc["used_bisection"] = trace.used_bisection;
  } else {
    doc = policy_json(solve_heterogeneous(params));
  }
  std::printf("%s\n", doc.dump(2).c_str());
  if (!cfg.output_path.empty()) write_json_doc(cfg.output_path, doc);
  return 0;
}

int run_oracle(const ExperimentConfig& cfg) {
  const SystemParams params = cfg.materialize_population(cfg.system.num_users);
  const bool homogeneous = params.homogeneous();
  Tau tau_max = cfg.solver.tau_max;
  constexpr Tau kTauMaxCap = Tau{1} << 20;

  OracleSolution sol;
  std::vector<Tau> thresholds;
  for (;;) {
    sol = homogeneous
              ? rvi_homogeneous(params, tau_max, cfg.solver.tol, cfg.solver.max_iters)
              : rvi_heterogeneous(params, tau_max, cfg.solver.tol,
                                  cfg.solver.max_iters);
    thresholds = homogeneous ? extract_thresholds(sol, params.num_users)
                             : extract_config_thresholds(sol);
    Tau largest = 0;
    for (const Tau t : thresholds) {
      if (t != kNeverFetch) largest = std::max(largest, t);
    }
    if ((!sol.truncation_suspect && tau_max >= 4 * largest) ||
        tau_max >= kTauMaxCap) {
      break;
    }
    tau_max *= 2;
  }

  json doc;
  doc["theta"] = sol.theta;
  doc["tau_max"] = sol.tau_max;
  doc["iterations"] = sol.iterations;
  doc["residual"] = sol.residual;
  doc["truncation_suspect"] = sol.truncation_suspect;
  if (homogeneous) {
    doc["thresholds"] = thresholds_json(thresholds);
  } else {
    json configs = json::array();
    for (std::size_t mask = 1; mask < thresholds.size(); ++mask) {
      json entry;
      entry["mask"] = mask;
      entry["threshold"] = tau_json(thresholds[mask]);
      configs.push_back(std::move(entry));
    }
    doc["configs"] = std::move(configs);
  }
  std::printf("%s\n", doc.dump(2).c_str());
  if (!cfg.output_path.empty()) write_json_doc(cfg.output_path, doc);
  return 0;
}

int run_whittle(const ExperimentConfig& cfg) {
  const SystemParams params = cfg.materialize_population(cfg.system.num_users);
  if (!params.homogeneous()) {
    throw ConfigError(
        "whittle threshold tables need a homogeneous system; use compare for "
        "heterogeneous index policies");
  }
  const WhittleIndexTable table = WhittleIndexTable::build(params);
  const std::vector<Tau> wi_thresholds =
      wi_thresholds_homogeneous(table, params.fetch_cost, params.num_users);
  const ThresholdPolicy optimal =
      solve_homogeneous(params, cfg.solver.theta0, cfg.solver.eps,
                        cfg.solver.alpha0)
          .first;

  json doc;
  doc["theta"] = optimal.theta;
  doc["whittle_thresholds"] = thresholds_json(wi_thresholds);
  doc["optimal_thresholds"] = thresholds_json(optimal.thresholds);
  std::printf("%s\n", doc.dump(2).c_str());

  if (!cfg.output_path.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (int m = 1; m <= params.num_users; ++m) {
      rows.push_back({std::to_string(m),
                      fmt_tau(wi_thresholds[static_cast<std::size_t>(m - 1)]),
                      fmt_tau(optimal.thresholds[static_cast<std::size_t>(m - 1)])});
    }
    write_csv(cfg.output_path,
              {"request_count", "whittle_threshold", "optimal_threshold"}, rows);
  }
  return 0;
}

double reference_theta(const SystemParams& params, const SolverKnobs& knobs) {
  try {
    return solve_any(params, knobs).theta;
  } catch (const Error&) {
    return std::nan("");  // e.g. non-proportional heterogeneous costs
  }
}

int run_simulate(const ExperimentConfig& cfg) {
  const SimConfig sc = cfg.sim_config();
  const std::vector<std::string> names =
      cfg.policies.empty() ? std::vector<std::string>{"optimal"} : cfg.policies;
  const auto policies = build_policies(names, sc.params, cfg.solver);
  const double theta = reference_theta(sc.params, cfg.solver);

  std::vector<std::vector<std::string>> rows;
  for (const auto& policy : policies) {
    const SimulationReport report = simulate(sc, *policy);
    print_report(report, theta);
    rows.push_back(report_row(report, theta));
  }
  if (!cfg.output_path.empty()) write_csv(cfg.output_path, kReportHeader, rows);
  return 0;
}

int run_compare(const ExperimentConfig& cfg) {
  if (cfg.policies.size() < 2) {
    throw ConfigError("policies: compare needs at least two policies");
  }
  const SimConfig sc = cfg.sim_config();
  const auto policies = build_policies(cfg.policies, sc.params, cfg.solver);
  std::vector<const Policy*> raw;
  raw.reserve(policies.size());
  for (const auto& p : policies) raw.push_back(p.get());
  const double theta = reference_theta(sc.params, cfg.solver);

  const std::vector<SimulationReport> reports = compare_policies(sc, raw);
  std::vector<std::vector<std::string>> rows;
  for (const SimulationReport& report : reports) {
    print_report(report, theta);
    rows.push_back(report_row(report, theta));
  }
  if (!cfg.output_path.empty()) write_csv(cfg.output_path, kReportHeader, rows);
  return 0;
}

int run_curve(const ExperimentConfig& cfg) {
  const SystemParams params = cfg.materialize_population(cfg.system.num_users);
  if (!params.homogeneous()) {
    throw ConfigError("curve_f_theta needs a homogeneous system");
  }
  if (!(cfg.curve.max > cfg.curve.min)) {
    throw ConfigError("curve: min and max are required");
  }
  const int points = cfg.curve.points;
  const double step = (cfg.curve.max - cfg.curve.min) / (points - 1);

  struct Row {
    double theta = 0.0, f = 0.0;
    Tau t1 = 0;
  };
  const auto rows = parallel_map(cfg.jobs, static_cast<std::size_t>(points),
                                 [&](std::size_t i) {
                                   const double theta =
                                       cfg.curve.min + step * static_cast<double>(i);
                                   const SweepResult r = f_of_theta(params, theta);
                                   return Row{theta, r.f_value, r.thresholds.front()};
                                 });

  std::vector<std::vector<std::string>> csv;
  csv.reserve(rows.size());
  for (const Row& r : rows) {
    csv.push_back({fmt(r.theta), fmt(r.f), fmt(r.f - r.theta),
                   std::to_string(r.t1)});
  }
  const auto [policy, trace] = solve_homogeneous(
      params, cfg.solver.theta0, cfg.solver.eps, cfg.solver.alpha0);
  std::printf("fixed point theta = %.9f after %zu evaluations\n", policy.theta,
              trace.steps.size());
  if (!cfg.output_path.empty()) {
    write_csv(cfg.output_path, {"theta", "f_value", "residual", "threshold_m1"},
              csv);
  }
  return 0;
}

int run_threshold_sweep(const ExperimentConfig& cfg) {
  const SystemParams params = cfg.materialize_population(cfg.system.num_users);
  if (!params.homogeneous()) {
    throw ConfigError("threshold_sweep needs a homogeneous system");
  }
  const auto [policy, trace] = solve_homogeneous(
      params, cfg.solver.theta0, cfg.solver.eps, cfg.solver.alpha0);

  std::vector<std::string> header = {"step", "theta", "f_value"};
  for (int m = 1; m <= params.num_users; ++m) {
    header.push_back("threshold_m" + std::to_string(m));
  }
  std::vector<std::vector<std::string>> rows;
  for (std::size_t l = 0; l < trace.steps.size(); ++l) {
    std::vector<std::string> row = {std::to_string(l), fmt(trace.steps[l].first),
                                    fmt(trace.steps[l].second)};
    for (const Tau t : trace.threshold_history[l]) row.push_back(fmt_tau(t));
    rows.push_back(std::move(row));
  }
  std::printf("theta = %.9f in %zu evaluations (final alpha %.4g%s)\n",
              policy.theta, trace.steps.size(), trace.alpha_final,
              trace.used_bisection ? ", bisection fallback" : "");
  if (!cfg.output_path.empty()) write_csv(cfg.output_path, header, rows);
  return 0;
}

SystemParams swept_params(const ExperimentConfig& cfg, double value) {
  const std::string& parameter = cfg.sweep.parameter;
  if (parameter == "fetch_cost" || parameter == "update_prob") {
    SystemParams params = cfg.materialize_population(cfg.system.num_users);
    (parameter == "fetch_cost" ? params.fetch_cost : params.update_prob) = value;
    params.validate();
    return params;
  }
  if (!cfg.classes.empty() || !cfg.system.homogeneous()) {
    throw ConfigError("sweep.parameter: " + parameter +
                      " sweeps need a homogeneous system");
  }
  const SystemParams& base = cfg.system;
  if (parameter == "request_prob") {
    return SystemParams::uniform(base.num_users, base.update_prob, value,
                                 base.fetch_cost, base.cost_models.front());
  }
  // c_a: rebuild the shared model around the swept coefficient
  const CostKind kind = base.cost_models.front().kind();
  if (kind == CostKind::CustomConvex) {
    throw ConfigError("sweep.parameter: c_a sweeps need a linear or quadratic cost");
  }
  const AgeCostModel model = kind == CostKind::Linear
                                 ? AgeCostModel::linear(value)
                                 : AgeCostModel::quadratic(value);
  return SystemParams::uniform(base.num_users, base.update_prob,
                               base.request_probs.front(), base.fetch_cost, model);
}

int run_cost_sweep(const ExperimentConfig& cfg) {
  if (cfg.sweep.values.empty()) {
    throw ConfigError("sweep: required for cost_sweep");
  }
  const bool with_sims = !cfg.policies.empty();
  const bool with_thresholds =
      !with_sims && cfg.classes.empty() && cfg.system.homogeneous() &&
      cfg.system.num_users <= 32;

  std::vector<std::string> header = {cfg.sweep.parameter, "theta"};
  if (with_thresholds) {
    for (int m = 1; m <= cfg.system.num_users; ++m) {
      header.push_back("threshold_m" + std::to_string(m));
    }
  }
  if (with_sims) {
    for (const std::string& name : cfg.policies) {
      const std::string label =
          name.rfind("periodic:", 0) == 0 ? "periodic_" + name.substr(9) : name;
      header.push_back("avg_cost_" + label);
      header.push_back("ci95_" + label);
    }
  }

  const auto rows = parallel_map(
      cfg.jobs, cfg.sweep.values.size(), [&](std::size_t i) {
        const double value = cfg.sweep.values[i];
        const SystemParams params = swept_params(cfg, value);
        const ThresholdPolicy policy = solve_any(params, cfg.solver);
        std::vector<std::string> row = {fmt(value), fmt(policy.theta)};
        if (with_thresholds) {
          for (const Tau t : policy.thresholds) row.push_back(fmt_tau(t));
        }
        if (with_sims) {
          SimConfig sc;
          sc.params = params;
          sc.horizon = cfg.horizon;
          sc.seed = cfg.seed;
          sc.warmup = cfg.warmup;
          sc.cost_mode = cfg.cost_mode;
          const auto policies = build_policies(cfg.policies, params, cfg.solver);
          for (const auto& p : policies) {
            const SimulationReport report = simulate(sc, *p);
            row.push_back(fmt(report.avg_cost));
            row.push_back(fmt(report.ci95_halfwidth));
          }
        }
        return row;
      });

  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::printf("%s = %s: theta = %s\n", cfg.sweep.parameter.c_str(),
                fmt(cfg.sweep.values[i]).c_str(), rows[i][1].c_str());
  }
  if (!cfg.output_path.empty()) write_csv(cfg.output_path, header, rows);
  return 0;
}

int run_variance_sweep(const ExperimentConfig& cfg) {
  if (cfg.population_sizes.empty()) {
    throw ConfigError("population_sizes: required for variance_sweep");
  }
  const SimConfig base = cfg.sim_config();
  const std::vector<VarianceSweepRow> rows = fetch_interval_variance_sweep(
      base, cfg.population_sizes, cfg.fetch_cost_rule);

  const double cf_per_user =
      base.params.fetch_cost / static_cast<double>(base.params.num_users);
  std::vector<std::vector<std::string>> csv;
  for (const VarianceSweepRow& row : rows) {
    const double cf = cfg.fetch_cost_rule == CfRule::ScaleWithN
                          ? cf_per_user * row.num_users
                          : base.params.fetch_cost;
    std::printf("N = %d: theta = %.6f, avg_cost = %.6f, interval variance = %.4f\n",
                row.num_users, row.theta, row.avg_cost,
                row.fetch_interval_variance);
    csv.push_back({std::to_string(row.num_users), fmt(cf), fmt(row.theta),
                   fmt(row.avg_cost), fmt(row.fetch_interval_variance)});
  }
  if (!cfg.output_path.empty()) {
    write_csv(cfg.output_path,
              {"num_users", "fetch_cost", "theta", "avg_cost",
               "fetch_interval_variance"},
              csv);
  }
  return 0;
}

int run_gap_vs_n(const ExperimentConfig& cfg) {
  if (cfg.population_sizes.empty()) {
    throw ConfigError("population_sizes: required for gap_vs_n");
  }
  const bool with_optimal =
      std::find(cfg.policies.begin(), cfg.policies.end(), "optimal") !=
      cfg.policies.end();
  const double cf_per_user =
      cfg.system.fetch_cost / static_cast<double>(cfg.system.num_users);

  struct Row {
    int n = 0;
    double cf = 0.0, theta = 0.0;
    SimulationReport wi;
    SimulationReport optimal;
  };
  const auto rows = parallel_map(
      cfg.jobs, cfg.population_sizes.size(), [&](std::size_t i) {
        Row row;
        row.n = cfg.population_sizes[i];
        SystemParams params = cfg.materialize_population(row.n);
        if (cfg.fetch_cost_rule == CfRule::ScaleWithN) {
          params.fetch_cost = cf_per_user * row.n;
        }
        row.cf = params.fetch_cost;
        row.theta = solve_any(params, cfg.solver).theta;

        SimConfig sc;
        sc.params = params;
        sc.horizon = cfg.horizon;
        sc.seed = cfg.seed;
        sc.warmup = cfg.warmup;
        sc.cost_mode = cfg.cost_mode;
        auto table =
            std::make_shared<WhittleIndexTable>(WhittleIndexTable::build(params));
        const WhittlePolicyAdapter wi(std::move(table), params.fetch_cost);
        row.wi = simulate(sc, wi);
        if (with_optimal) {
          const ThresholdPolicyAdapter opt(solve_any(params, cfg.solver));
          row.optimal = simulate(sc, opt);
        }
        return row;
      });

  std::vector<std::string> header = {"num_users", "fetch_cost",   "theta",
                                     "wi_avg_cost", "wi_ci95", "wi_over_theta"};
  if (with_optimal) {
    header.insert(header.end(),
                  {"optimal_avg_cost", "optimal_ci95", "optimal_over_theta"});
  }
  std::vector<std::vector<std::string>> csv;
  for (const Row& row : rows) {
    std::printf("N = %d: theta = %.6f, whittle = %.6f (ratio %.4f)\n", row.n,
                row.theta, row.wi.avg_cost, row.wi.avg_cost / row.theta);
    std::vector<std::string> line = {std::to_string(row.n),    fmt(row.cf),
                                     fmt(row.theta),           fmt(row.wi.avg_cost),
                                     fmt(row.wi.ci95_halfwidth),
                                     fmt(row.wi.avg_cost / row.theta)};
    if (with_optimal) {
      line.push_back(fmt(row.optimal.avg_cost));
      line.push_back(fmt(row.optimal.ci95_halfwidth));
      line.push_back(fmt(row.optimal.avg_cost / row.theta));
    }
    csv.push_back(std::move(line));
  }
  if (!cfg.output_path.empty()) write_csv(cfg.output_path, header, csv);
  return 0;
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.experiment) {
    case ExperimentKind::Solve:
      return run_solve(cfg);
    case ExperimentKind::Oracle:
      return run_oracle(cfg);
    case ExperimentKind::Whittle:
      return run_whittle(cfg);
    case ExperimentKind::Simulate:
      return run_simulate(cfg);
    case ExperimentKind::Compare:
      return run_compare(cfg);
    case ExperimentKind::CurveFTheta:
      return run_curve(cfg);
    case ExperimentKind::ThresholdSweep:
      return run_threshold_sweep(cfg);
    case ExperimentKind::CostSweep:
      return run_cost_sweep(cfg);
    case ExperimentKind::VarianceSweep:
      return run_variance_sweep(cfg);
    case ExperimentKind::GapVsN:
      return run_gap_vs_n(cfg);
  }
  throw Error("unhandled experiment kind");
}

int run(const std::string& config_file) {
  try {
    return run_experiment(ExperimentConfig::load(config_file));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace agecast
