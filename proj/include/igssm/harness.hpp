#pragma once

// Experiment configuration and orchestration behind the `igssm` tool.
//
// A run reads one JSON config (schema in configs/schema.json), builds the
// model at every noise level of the grid and writes fixed-column CSV tables,
// each with a `<name>.json` sidecar carrying the config hash and seed.
// Exit statuses: 0 success, 2 config error, 3 infeasible configuration,
// 4 failed check (only with --check). Outputs of a run that ends in 2 or 3
// are removed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "igssm/concentration.hpp"
#include "igssm/hierarchical.hpp"
#include "igssm/io.hpp"
#include "igssm/model.hpp"
#include "igssm/posterior.hpp"
#include "igssm/random.hpp"
#include "igssm/selection.hpp"

namespace igssm {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitInfeasible = 3, kExitCheck = 4 };

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Configuration

struct OperatorConfig {
  OperatorFamily family = OperatorFamily::polynomial;
  double a = 1.0;
  std::vector<double> values;  // lambda_j, explicit family only
};

enum class TruthFamily { polynomial, exponential, explicit_list, prior_mean };

struct TruthConfig {
  TruthFamily family = TruthFamily::polynomial;
  double scale = 1.0;
  double shape = 1.0;  // exponent q or rate gamma
  std::vector<double> values;
};

enum class VarianceKind { improper, constant, scaled, explicit_list };

struct PriorConfig {
  std::vector<double> mean;  // explicit means, zero beyond; empty: use mean_constant
  double mean_constant = 0.0;
  VarianceKind variance = VarianceKind::improper;
  double value = 0.0;  // constant variance or scale d
  std::vector<double> variances;
};

struct ClassConfig {
  WeightFamily family = WeightFamily::polynomial;
  double p = 1.0;
  double r = 1.0;
};

struct McConfig {
  std::size_t reps = 200;
  std::size_t draws = 500;
  std::uint64_t seed = 1;
};

struct ConcentrationConfig {
  std::vector<PosteriorKind> posteriors;
  std::optional<double> K;  // empty: composite constants
};

struct TailSuiteConfig {
  std::size_t configs = 50;
  std::size_t reps = 100000;
  std::size_t max_m = 30;
  std::uint64_t seed = 1;
};

struct DeviationSuiteConfig {
  double c = 0.1;
  std::vector<std::size_t> dimensions{5, 10, 20};
  std::size_t reps = 200;
  std::size_t draws = 500;
};

struct AuditConfig {
  std::optional<TailSuiteConfig> tail;
  std::optional<DeviationSuiteConfig> deviation;
};

struct CheckConfig {
  double slope_tolerance = 0.08;
  std::vector<EstimatorKind> estimators;  // empty: every configured estimator except fixed
};

struct ExperimentConfig {
  std::string name = "experiment";
  bool has_model = false;
  std::optional<std::size_t> N;  // empty: ceil(1/eps), or the explicit list length
  OperatorConfig op;
  TruthConfig truth;
  PriorConfig prior;
  std::optional<ClassConfig> cls;
  std::vector<double> eps_grid;
  McConfig mc;
  std::vector<EstimatorKind> estimators;
  std::optional<std::size_t> fixed_dimension;
  std::optional<double> C_lambda;
  std::optional<ConcentrationConfig> concentration;
  std::optional<AuditConfig> audit;
  CheckConfig check;
  std::string output_dir = "igssm_out";
  json document;  // effective config, overrides applied

  std::string hash() const { return fnv1a_hex(document.dump()); }
};

namespace detail {

/// JSON object reader that rejects keys it was not asked about.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& get(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(where_ + ": missing key '" + key + "'");
    return j_.at(key);
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline double number(const json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(where + ": must be finite");
  return v;
}

inline double number_in(const json& j, const std::string& where, double lo, double hi, const char* range) {
  const double v = number(j, where);
  if (!(v >= lo && v <= hi)) throw ConfigError(where + ": must lie in " + range);
  return v;
}

inline std::size_t count(const json& j, const std::string& where, std::size_t lo, std::size_t hi) {
  if (!j.is_number_integer() && !j.is_number_unsigned()) throw ConfigError(where + ": expected an integer");
  const auto v = j.get<long long>();
  if (v < static_cast<long long>(lo) || v > static_cast<long long>(hi)) {
    throw ConfigError(where + ": must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return static_cast<std::size_t>(v);
}

inline std::uint64_t seed_value(const json& j, const std::string& where) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0)) {
    throw ConfigError(where + ": seed must be a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

inline std::string text(const json& j, const std::string& where) {
  if (!j.is_string()) throw ConfigError(where + ": expected a string");
  return j.get<std::string>();
}

inline std::vector<double> numbers(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a non-empty array of numbers");
  std::vector<double> v;
  for (std::size_t i = 0; i < j.size(); ++i) v.push_back(number(j[i], where + "[" + std::to_string(i) + "]"));
  return v;
}

/// Inline "values" array or a "file" holding a single-column sequence CSV.
inline std::vector<double> sequence(Fields& f, const fs::path& base) {
  const bool inline_values = f.has("values");
  const bool from_file = f.has("file");
  if (inline_values == from_file) throw ConfigError(f.path("values") + ": give exactly one of 'values' or 'file'");
  if (inline_values) return numbers(f.get("values"), f.path("values"));
  fs::path p = text(f.get("file"), f.path("file"));
  if (p.is_relative()) p = base / p;
  try {
    return read_sequence_csv(p);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

inline void require_noise(double eps, const std::string& where) {
  if (!(eps > 0.0 && eps < 1.0)) throw ConfigError(where + ": noise level eps must lie in (0,1)");
}

inline EstimatorKind estimator_kind(const json& j, const std::string& where) {
  const auto s = text(j, where);
  if (s == "fixed") return EstimatorKind::fixed;
  if (s == "oracle") return EstimatorKind::oracle;
  if (s == "minimax") return EstimatorKind::minimax;
  if (s == "adaptive") return EstimatorKind::adaptive;
  throw ConfigError(where + ": unknown estimator '" + s + "' (fixed, oracle, minimax, adaptive)");
}

inline void parse_model(const json& j, ExperimentConfig& cfg, const fs::path& base) {
  Fields f(j, "model");
  if (f.has("N")) {
    const auto& n = f.get("N");
    if (n.is_string()) {
      if (n.get<std::string>() != "auto") throw ConfigError("model.N: expected a positive integer or \"auto\"");
    } else {
      cfg.N = count(n, "model.N", 1, 50'000'000);
    }
  }
  Fields o(f.get("operator"), "model.operator");
  const auto fam = text(o.get("family"), "model.operator.family");
  if (fam == "polynomial" || fam == "exponential") {
    cfg.op.family = fam == "polynomial" ? OperatorFamily::polynomial : OperatorFamily::exponential;
    cfg.op.a = number_in(o.get("a"), "model.operator.a", fam == "polynomial" ? 0.0 : 1e-12, 50.0,
                         fam == "polynomial" ? "[0, 50]" : "(0, 50]");
  } else if (fam == "constant") {
    cfg.op.family = OperatorFamily::constant;
    cfg.op.a = 0.0;
  } else if (fam == "explicit") {
    cfg.op.family = OperatorFamily::explicit_list;
    cfg.op.values = sequence(o, base);
    for (double v : cfg.op.values) {
      if (!(v > 0.0)) throw ConfigError("model.operator.values: operator values must be strictly positive");
    }
    if (cfg.N && *cfg.N > cfg.op.values.size()) {
      throw ConfigError("model.N: exceeds the length of the explicit operator");
    }
  } else {
    throw ConfigError("model.operator.family: unknown family '" + fam + "' (polynomial, exponential, constant, explicit)");
  }
  o.finish();
  f.finish();
}

inline void parse_truth(const json& j, ExperimentConfig& cfg, const fs::path& base) {
  Fields f(j, "truth");
  const auto fam = text(f.get("family"), "truth.family");
  auto& t = cfg.truth;
  if (fam == "polynomial") {
    t.family = TruthFamily::polynomial;
    t.scale = number(f.get("scale"), "truth.scale");
    t.shape = number(f.get("exponent"), "truth.exponent");
    if (!(t.shape > 0.5)) throw ConfigError("truth.exponent: must exceed 1/2 for a square-summable sequence");
  } else if (fam == "exponential") {
    t.family = TruthFamily::exponential;
    t.scale = number(f.get("scale"), "truth.scale");
    t.shape = number(f.get("rate"), "truth.rate");
    if (!(t.shape > 0.0)) throw ConfigError("truth.rate: must be > 0");
  } else if (fam == "explicit") {
    t.family = TruthFamily::explicit_list;
    t.values = sequence(f, base);
  } else if (fam == "prior_mean") {
    t.family = TruthFamily::prior_mean;
  } else {
    throw ConfigError("truth.family: unknown family '" + fam + "' (polynomial, exponential, explicit, prior_mean)");
  }
  f.finish();
}

inline void parse_prior(const json& j, ExperimentConfig& cfg) {
  Fields f(j, "prior");
  auto& p = cfg.prior;
  if (f.has("mean")) {
    const auto& m = f.get("mean");
    if (m.is_array()) {
      p.mean = numbers(m, "prior.mean");
    } else {
      p.mean_constant = number(m, "prior.mean");
    }
  }
  const auto& v = f.get("variance");
  if (v.is_string()) {
    if (v.get<std::string>() != "improper") throw ConfigError("prior.variance: the only keyword is \"improper\"");
    p.variance = VarianceKind::improper;
  } else if (v.is_number()) {
    p.variance = VarianceKind::constant;
    p.value = number(v, "prior.variance");
    if (!(p.value > 0.0)) throw ConfigError("prior.variance: must be > 0");
  } else if (v.is_array()) {
    p.variance = VarianceKind::explicit_list;
    p.variances = numbers(v, "prior.variance");
    for (double x : p.variances) {
      if (!(x > 0.0)) throw ConfigError("prior.variance: every variance must be > 0");
    }
  } else {
    Fields s(v, "prior.variance");
    if (text(s.get("family"), "prior.variance.family") != "scaled") {
      throw ConfigError("prior.variance.family: only \"scaled\" is supported");
    }
    p.variance = VarianceKind::scaled;
    p.value = number(s.get("d"), "prior.variance.d");
    if (!(p.value > 0.0)) throw ConfigError("prior.variance.d: must be > 0");
    s.finish();
  }
  f.finish();
}

inline void parse_class(const json& j, ExperimentConfig& cfg) {
  Fields f(j, "class");
  ClassConfig c;
  const auto fam = text(f.get("family"), "class.family");
  if (fam == "polynomial") {
    c.family = WeightFamily::polynomial;
  } else if (fam == "exponential") {
    c.family = WeightFamily::exponential;
  } else {
    throw ConfigError("class.family: unknown family '" + fam + "' (polynomial, exponential)");
  }
  c.p = number(f.get("p"), "class.p");
  if (!(c.p > 0.0)) throw ConfigError("class.p: must be > 0");
  c.r = number(f.get("r"), "class.r");
  if (!(c.r > 0.0)) throw ConfigError("class.r: must be > 0");
  f.finish();
  cfg.cls = c;
}

inline void parse_audit(const json& j, ExperimentConfig& cfg) {
  Fields f(j, "audit");
  AuditConfig a;
  if (f.has("tail")) {
    Fields t(f.get("tail"), "audit.tail");
    TailSuiteConfig s;
    if (t.has("configs")) s.configs = count(t.get("configs"), "audit.tail.configs", 1, 100000);
    if (t.has("reps")) s.reps = count(t.get("reps"), "audit.tail.reps", 10000, 100'000'000);
    if (t.has("max_m")) s.max_m = count(t.get("max_m"), "audit.tail.max_m", 1, 100000);
    if (t.has("seed")) s.seed = seed_value(t.get("seed"), "audit.tail.seed");
    t.finish();
    a.tail = s;
  }
  if (f.has("deviation")) {
    Fields d(f.get("deviation"), "audit.deviation");
    DeviationSuiteConfig s;
    if (d.has("c")) {
      s.c = number(d.get("c"), "audit.deviation.c");
      if (!(s.c > 0.0 && s.c < 0.2)) throw ConfigError("audit.deviation.c: must lie in (0, 0.2)");
    }
    if (d.has("dimensions")) {
      const auto& dims = d.get("dimensions");
      if (!dims.is_array() || dims.empty()) throw ConfigError("audit.deviation.dimensions: expected a non-empty array");
      s.dimensions.clear();
      for (const auto& x : dims) s.dimensions.push_back(count(x, "audit.deviation.dimensions", 1, 10'000'000));
    }
    if (d.has("reps")) s.reps = count(d.get("reps"), "audit.deviation.reps", 1, 10'000'000);
    if (d.has("draws")) s.draws = count(d.get("draws"), "audit.deviation.draws", 1, 10'000'000);
    d.finish();
    a.deviation = s;
  }
  f.finish();
  cfg.audit = a;
}

}  // namespace detail

/// Overrides applied on top of the config file.
struct RunOptions {
  std::optional<fs::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> reps;
  bool check = false;
  bool quiet = false;
};

inline ExperimentConfig parse_config(const json& doc, const fs::path& base, const RunOptions& opt = {}) {
  using namespace detail;
  ExperimentConfig cfg;
  Fields f(doc, "config");
  if (f.has("name")) cfg.name = text(f.get("name"), "config.name");

  if (f.has("mc")) {
    Fields m(f.get("mc"), "mc");
    if (m.has("reps")) cfg.mc.reps = count(m.get("reps"), "mc.reps", 50, 100'000'000);
    if (m.has("draws")) cfg.mc.draws = count(m.get("draws"), "mc.draws", 1, 100'000'000);
    if (m.has("seed")) cfg.mc.seed = seed_value(m.get("seed"), "mc.seed");
    m.finish();
  }
  if (opt.seed) cfg.mc.seed = *opt.seed;
  if (opt.reps) {
    if (*opt.reps < 50) throw ConfigError("--reps: must be >= 50");
    cfg.mc.reps = *opt.reps;
  }

  if (f.has("model")) {
    cfg.has_model = true;
    parse_model(f.get("model"), cfg, base);
    parse_truth(f.get("truth"), cfg, base);
    parse_prior(f.get("prior"), cfg);
    if (f.has("class")) parse_class(f.get("class"), cfg);
    const auto& grid = f.get("eps_grid");
    cfg.eps_grid = numbers(grid, "eps_grid");
    for (double e : cfg.eps_grid) require_noise(e, "eps_grid");
    for (std::size_t i = 1; i < cfg.eps_grid.size(); ++i) {
      if (!(cfg.eps_grid[i] < cfg.eps_grid[i - 1])) throw ConfigError("eps_grid: must be strictly decreasing");
    }
  } else {
    for (const char* k : {"truth", "prior", "class", "eps_grid"}) {
      if (f.has(k)) throw ConfigError(std::string("config: '") + k + "' requires a 'model' block");
    }
  }

  if (f.has("estimators")) {
    const auto& e = f.get("estimators");
    if (!e.is_array()) throw ConfigError("estimators: expected an array");
    for (const auto& x : e) {
      const auto k = estimator_kind(x, "estimators");
      if (std::find(cfg.estimators.begin(), cfg.estimators.end(), k) != cfg.estimators.end()) {
        throw ConfigError("estimators: duplicate entry");
      }
      cfg.estimators.push_back(k);
    }
  }
  if (f.has("fixed_dimension")) cfg.fixed_dimension = count(f.get("fixed_dimension"), "fixed_dimension", 1, 50'000'000);
  if (f.has("C_lambda")) {
    cfg.C_lambda = number(f.get("C_lambda"), "C_lambda");
    if (!(*cfg.C_lambda >= 1.0)) throw ConfigError("C_lambda: must be >= 1");
  }
  if (f.has("concentration")) {
    Fields c(f.get("concentration"), "concentration");
    ConcentrationConfig cc;
    const auto& ps = c.get("posteriors");
    if (!ps.is_array() || ps.empty()) throw ConfigError("concentration.posteriors: expected a non-empty array");
    for (const auto& x : ps) {
      const auto s = text(x, "concentration.posteriors");
      if (s == "fixed") {
        cc.posteriors.push_back(PosteriorKind::fixed);
      } else if (s == "hierarchical") {
        cc.posteriors.push_back(PosteriorKind::hierarchical);
      } else {
        throw ConfigError("concentration.posteriors: unknown posterior '" + s + "' (fixed, hierarchical)");
      }
    }
    if (c.has("K")) {
      const auto& k = c.get("K");
      if (k.is_string()) {
        if (k.get<std::string>() != "composite") throw ConfigError("concentration.K: expected a number or \"composite\"");
      } else {
        cc.K = number(k, "concentration.K");
        if (!(*cc.K >= 1.0)) throw ConfigError("concentration.K: must be >= 1");
      }
    }
    c.finish();
    cfg.concentration = cc;
  }
  if (f.has("audit")) parse_audit(f.get("audit"), cfg);
  if (f.has("check")) {
    Fields c(f.get("check"), "check");
    if (c.has("slope_tolerance")) {
      cfg.check.slope_tolerance = number_in(c.get("slope_tolerance"), "check.slope_tolerance", 0.0, 10.0, "[0, 10]");
    }
    if (c.has("estimators")) {
      const auto& e = c.get("estimators");
      if (!e.is_array()) throw ConfigError("check.estimators: expected an array");
      for (const auto& x : e) cfg.check.estimators.push_back(estimator_kind(x, "check.estimators"));
    }
    c.finish();
  }
  if (f.has("output")) {
    Fields o(f.get("output"), "output");
    if (o.has("dir")) cfg.output_dir = text(o.get("dir"), "output.dir");
    o.finish();
  }
  f.finish();

  const bool needs_model = !cfg.estimators.empty() || cfg.concentration || (cfg.audit && cfg.audit->deviation);
  if (needs_model && !cfg.has_model) throw ConfigError("config: estimators, concentration and deviation audits need a 'model' block");
  const auto uses = [&](EstimatorKind k) {
    return std::find(cfg.estimators.begin(), cfg.estimators.end(), k) != cfg.estimators.end();
  };
  if (uses(EstimatorKind::fixed) && !cfg.fixed_dimension) throw ConfigError("fixed_dimension: required by the fixed estimator");
  if (uses(EstimatorKind::minimax) && !cfg.cls) throw ConfigError("class: required by the minimax estimator");
  for (auto k : cfg.check.estimators) {
    if (!uses(k)) throw ConfigError("check.estimators: lists an estimator that is not run");
  }
  if (cfg.has_model && cfg.prior.variance == VarianceKind::improper && !cfg.prior.mean.empty()) {
    throw ConfigError("prior.mean: an improper prior has no mean");
  }

  cfg.document = doc;
  cfg.document["mc"] = {{"reps", cfg.mc.reps}, {"draws", cfg.mc.draws}, {"seed", cfg.mc.seed}};
  return cfg;
}

inline ExperimentConfig load_config(const fs::path& path, const RunOptions& opt = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_config(doc, path.parent_path(), opt);
}

// ---------------------------------------------------------------------------
// Model construction at one noise level

struct Problem {
  double eps = 0.0;
  OperatorSequence op;
  ParameterSequence theta;
  PriorSpec prior;
  std::optional<WeightedClass> cls;
};

inline std::size_t truncation(const ExperimentConfig& cfg, double eps) {
  if (cfg.N) return *cfg.N;
  if (cfg.op.family == OperatorFamily::explicit_list) return cfg.op.values.size();
  return default_truncation(eps);
}

inline Problem build_problem(const ExperimentConfig& cfg, double eps) {
  require(cfg.has_model, "config has no model block");
  detail::require_noise(eps, "eps");
  const std::size_t n = truncation(cfg, eps);
  OperatorSequence op = cfg.op.family == OperatorFamily::explicit_list
                            ? make_explicit_operator(std::span<const double>(cfg.op.values).first(n))
                            : make_operator(cfg.op.family, cfg.op.a, n);

  std::vector<double> means(n, cfg.prior.mean.empty() ? cfg.prior.mean_constant : 0.0);
  for (std::size_t i = 0; i < cfg.prior.mean.size() && i < n; ++i) means[i] = cfg.prior.mean[i];

  ParameterSequence theta;
  switch (cfg.truth.family) {
    case TruthFamily::polynomial:
      theta = make_parameter(ParameterFamily::polynomial, cfg.truth.scale, cfg.truth.shape, n);
      break;
    case TruthFamily::exponential:
      theta = make_parameter(ParameterFamily::exponential, cfg.truth.scale, cfg.truth.shape, n);
      break;
    case TruthFamily::explicit_list: theta = make_explicit_parameter(cfg.truth.values, n); break;
    case TruthFamily::prior_mean: theta = make_explicit_parameter(means, n); break;
  }

  std::optional<PriorSpec> prior;
  switch (cfg.prior.variance) {
    case VarianceKind::improper: prior = PriorSpec::improper(n); break;
    case VarianceKind::constant: prior = PriorSpec::proper(means, std::vector<double>(n, cfg.prior.value)); break;
    case VarianceKind::scaled: prior = PriorSpec::scaled(op, eps, cfg.prior.value, means); break;
    case VarianceKind::explicit_list:
      if (cfg.prior.variances.size() < n) throw ConfigError("prior.variance: list is shorter than the truncation N");
      prior = PriorSpec::proper(means, std::span<const double>(cfg.prior.variances).first(n));
      break;
  }
  std::optional<WeightedClass> cls;
  if (cfg.cls) cls = make_class(cfg.cls->family, cfg.cls->p, cfg.cls->r, n);
  return {eps, std::move(op), std::move(theta), std::move(*prior), std::move(cls)};
}

// ---------------------------------------------------------------------------
// Output bookkeeping

/// Tracks every file a run writes so that a failed run can remove them.
class OutputSet {
 public:
  OutputSet(fs::path dir, const ExperimentConfig& cfg) : dir_(std::move(dir)), cfg_(cfg) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir_.string() + ": " + ec.message());
  }

  fs::path path(const std::string& name) {
    written_.push_back(dir_ / name);
    return dir_ / name;
  }

  /// Sidecar `<name>.json` for a CSV: provenance plus any extra fields.
  void sidecar(const std::string& csv_name, const std::vector<std::string>& columns, json extra = json::object()) {
    json j = std::move(extra);
    j["file"] = csv_name;
    j["columns"] = columns;
    j["config_hash"] = cfg_.hash();
    j["config_name"] = cfg_.name;
    j["seed"] = cfg_.mc.seed;
    j["version"] = kVersion;
    write_json(path(csv_name + ".json"), j);
  }

  void remove_all() {
    for (const auto& p : written_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
    written_.clear();
  }

  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  const ExperimentConfig& cfg_;
  std::vector<fs::path> written_;
};

/// Seed for noise level k; every estimator at that level shares it.
inline std::uint64_t level_seed(std::uint64_t seed, std::size_t k) {
  return detail::splitmix64(seed ^ (0x9E3779B97F4A7C15ULL * (k + 1)));
}

// ---------------------------------------------------------------------------
// Tail-bound suites

struct TailCase {
  std::string label;
  TailBoundConfig cfg;
};

/// The central case (m = 10, alpha = 0, beta = 1, c = 1) followed by
/// randomised configurations drawn from `suite.seed`.
inline std::vector<TailCase> tail_suite(const TailSuiteConfig& suite) {
  std::vector<TailCase> cases;
  cases.push_back({"central", make_tail_config(std::vector<double>(10, 0.0), std::vector<double>(10, 1.0), 1.0)});
  NormalSource src(make_stream(suite.seed, 0xA0D17));
  static constexpr double kScales[] = {0.25, 0.5, 1.0, 1.5, 2.0, 3.0};
  for (std::size_t i = 1; i < suite.configs; ++i) {
    const auto m = 1 + static_cast<std::size_t>(src.uniform() * double(suite.max_m));
    const bool centred = src.uniform() < 0.3;
    std::vector<double> alpha(std::min(m, suite.max_m)), beta(alpha.size());
    for (std::size_t j = 0; j < alpha.size(); ++j) {
      alpha[j] = centred ? 0.0 : src();
      beta[j] = 0.1 + 1.9 * src.uniform();
    }
    const double c = kScales[std::min<std::size_t>(5, static_cast<std::size_t>(src.uniform() * 6.0))];
    cases.push_back({"random-" + std::to_string(i), make_tail_config(std::move(alpha), std::move(beta), c)});
  }
  return cases;
}

inline const std::vector<std::string>& audit_columns() {
  static const std::vector<std::string> cols{"suite", "case", "m",  "c",    "eps",  "check",
                                             "empirical", "se", "bound", "reps", "seed", "pass"};
  return cols;
}

struct AuditOutcome {
  std::size_t rows = 0;
  std::size_t failures = 0;
};

inline AuditOutcome run_audits(const ExperimentConfig& cfg, CsvWriter& w, bool quiet) {
  AuditOutcome out;
  auto row = [&](const std::string& suite, const std::string& label, std::size_t m, double c, double eps,
                 const std::string& check, const BoundCheck& b) {
    w.row({suite, label, format_number(m), format_number(c), eps > 0 ? format_number(eps) : "",
           check, format_number(b.empirical.value), format_number(b.empirical.se), format_number(b.bound),
           format_number(b.empirical.reps), std::to_string(b.empirical.seed), b.pass ? "true" : "false"});
    ++out.rows;
    out.failures += b.pass ? 0 : 1;
  };
  if (!cfg.audit) return out;
  if (cfg.audit->tail) {
    const auto& suite = *cfg.audit->tail;
    const auto cases = tail_suite(suite);
    for (std::size_t i = 0; i < cases.size(); ++i) {
      const auto& tc = cases[i];
      const auto a = audit_tail_bounds(tc.cfg, suite.reps, level_seed(suite.seed, i));
      row("tail", tc.label, tc.cfg.m(), tc.cfg.c, 0.0, "lower_probability", a.lower);
      row("tail", tc.label, tc.cfg.m(), tc.cfg.c, 0.0, "upper_probability", a.upper);
      if (a.excess) row("tail", tc.label, tc.cfg.m(), tc.cfg.c, 0.0, "upper_excess", *a.excess);
    }
    if (!quiet) std::cerr << "audit: " << cases.size() << " tail configurations\n";
  }
  if (cfg.audit->deviation) {
    const auto& dev = *cfg.audit->deviation;
    for (std::size_t k = 0; k < cfg.eps_grid.size(); ++k) {
      const auto pb = build_problem(cfg, cfg.eps_grid[k]);
      for (std::size_t m : dev.dimensions) {
        if (m > pb.op.size()) throw Infeasible("deviation audit dimension exceeds the truncation N");
        const auto a = audit_deviation_bounds(pb.theta, pb.prior, pb.op, pb.eps, m, dev.c, dev.reps, dev.draws,
                                              level_seed(cfg.mc.seed, k));
        const std::string label = "m=" + std::to_string(m);
        row("deviation", label, m, dev.c, pb.eps, "upper", a.upper);
        row("deviation", label, m, dev.c, pb.eps, "lower", a.lower);
      }
    }
    if (!quiet) std::cerr << "audit: deviation bounds on " << cfg.eps_grid.size() << " noise levels\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full experiment

namespace detail {

inline bool grid_supports_fit(const std::vector<double>& eps) {
  if (eps.size() < 4) return false;
  return std::log10(eps.front()) - std::log10(eps.back()) >= 3.0 - 1e-9;
}

inline int run_guarded(OutputSet* outputs, bool quiet, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    if (outputs) outputs->remove_all();
    if (!quiet) std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Infeasible& e) {
    if (outputs) outputs->remove_all();
    if (!quiet) std::cerr << "infeasible: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const std::invalid_argument& e) {
    if (outputs) outputs->remove_all();
    if (!quiet) std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::domain_error& e) {
    if (outputs) outputs->remove_all();
    if (!quiet) std::cerr << "infeasible: " << e.what() << '\n';
    return kExitInfeasible;
  }
}

}  // namespace detail

/// Writes rates.csv, mise.csv, slopes.csv, concentration.csv, audit.csv and
/// report.json into the output directory.
inline int run_experiment(const ExperimentConfig& cfg, const RunOptions& opt) {
  if (!cfg.has_model) {
    if (!opt.quiet) std::cerr << "config error: run needs a 'model' block\n";
    return kExitConfig;
  }
  std::optional<OutputSet> outputs;
  return detail::run_guarded(nullptr, opt.quiet, [&]() -> int {
    outputs.emplace(opt.out.value_or(fs::path(cfg.output_dir)), cfg);
    return detail::run_guarded(&*outputs, opt.quiet, [&]() -> int {
      auto& out = *outputs;
      const auto& grid = cfg.eps_grid;

      // Assumption report over the grid; operator constants at the finest level.
      std::vector<NoiseLevelReport> levels;
      for (double eps : grid) {
        const auto pb = build_problem(cfg, eps);
        levels.push_back(assess_noise_level(pb.theta, pb.prior, pb.op, pb.cls ? &*pb.cls : nullptr, eps));
      }
      const auto finest = build_problem(cfg, grid.back());
      const auto report = combine_reports(levels, operator_constants(finest.op));
      const double C_lambda = cfg.C_lambda.value_or(report.op.C_lambda);
      const double distance_sq = squared_distance_to_prior_mean(finest.theta, finest.prior);
      std::optional<CompositeConstants> composite;
      std::string composite_note;
      try {
        composite = composite_constants(report, finest.op, distance_sq, cfg.cls ? cfg.cls->r : 1.0);
      } catch (const Infeasible& e) {
        composite_note = e.what();
      }

      // rates.csv
      const std::vector<std::string> rate_cols{"eps",     "N",        "M_eps",      "m_star", "phi_star",
                                               "m_circ",  "phi_circ", "d",          "C_lambda", "L_lambda",
                                               "kappa",   "kappa_star", "oracle_feasible"};
      {
        CsvWriter w(out.path("rates.csv"), rate_cols);
        for (const auto& l : levels) {
          w.row({format_number(l.eps), format_number(truncation(cfg, l.eps)), format_number(l.max_dimension),
                 format_number(l.oracle.dimension), format_number(l.oracle.rate),
                 l.minimax ? format_number(l.minimax->dimension) : "", l.minimax ? format_number(l.minimax->rate) : "",
                 format_number(l.d), format_number(C_lambda), format_number(report.op.L_lambda),
                 l.minimax ? format_number(l.kappa_minimax) : "", format_number(l.kappa_oracle),
                 l.oracle_feasible ? "true" : "false"});
        }
        w.close();
        out.sidecar("rates.csv", rate_cols, {{"C_lambda", C_lambda}});
      }

      // mise.csv
      const std::vector<std::string> mise_cols{"eps", "estimator", "dimension", "mise", "se", "reps", "seed", "feasible"};
      std::map<EstimatorKind, std::vector<double>> mise_by_kind;
      {
        CsvWriter w(out.path("mise.csv"), mise_cols);
        for (std::size_t k = 0; k < grid.size(); ++k) {
          const auto pb = build_problem(cfg, grid[k]);
          const auto seed = level_seed(cfg.mc.seed, k);
          for (auto kind : cfg.estimators) {
            EstimatorSetup setup{kind, cfg.fixed_dimension.value_or(0), pb.cls ? &*pb.cls : nullptr, C_lambda};
            const auto r = mc_mise(setup, pb.theta, pb.prior, pb.op, pb.eps, cfg.mc.reps, seed);
            if (!r.feasible) {
              throw Infeasible("adaptive estimator at eps = " + format_number(pb.eps) +
                               ": oracle dimension exceeds M_eps");
            }
            mise_by_kind[kind].push_back(r.mise.value);
            w.row({format_number(pb.eps), to_string(kind), format_number(r.dimension), format_number(r.mise.value),
                   format_number(r.mise.se), format_number(r.mise.reps), std::to_string(seed), "true"});
          }
          if (!opt.quiet && !cfg.estimators.empty()) std::cerr << "mise: eps = " << format_number(pb.eps) << " done\n";
        }
        w.close();
        out.sidecar("mise.csv", mise_cols, {{"reps", cfg.mc.reps}});
      }

      // slopes.csv
      const std::vector<std::string> slope_cols{"estimator", "slope", "intercept", "r_squared", "max_abs_residual",
                                                "expected", "tolerance", "pass"};
      const auto reference = cfg.cls ? theoretical_rate(cfg.cls->family, cfg.cls->p, cfg.op.family, cfg.op.a)
                                     : TheoreticalRate{std::nullopt, "other", "no class configured"};
      json fits = json::object();
      std::vector<std::string> failed_checks;
      {
        CsvWriter w(out.path("slopes.csv"), slope_cols);
        const bool fit_ok = detail::grid_supports_fit(grid);
        for (auto kind : cfg.estimators) {
          if (!fit_ok) continue;
          const auto fit = rate_regression(grid, mise_by_kind[kind]);
          const bool listed = cfg.check.estimators.empty()
                                  ? kind != EstimatorKind::fixed
                                  : std::find(cfg.check.estimators.begin(), cfg.check.estimators.end(), kind) !=
                                        cfg.check.estimators.end();
          const bool checked = reference.exponent.has_value() && listed;
          const bool pass = !checked || std::abs(fit.slope - *reference.exponent) <= cfg.check.slope_tolerance;
          if (!pass) failed_checks.push_back(std::string("slope of ") + to_string(kind));
          w.row({to_string(kind), format_number(fit.slope), format_number(fit.intercept),
                 format_number(fit.r_squared), format_number(fit.max_abs_residual),
                 reference.exponent ? format_number(*reference.exponent) : "",
                 format_number(cfg.check.slope_tolerance), checked ? (pass ? "true" : "false") : ""});
          auto jf = to_json(fit);
          jf["checked"] = checked;
          jf["pass"] = pass;
          fits[to_string(kind)] = jf;
        }
        w.close();
        out.sidecar("slopes.csv", slope_cols,
                    {{"regime", reference.regime}, {"note", reference.note}, {"fit_performed", fit_ok}});
      }

      // concentration.csv
      const std::vector<std::string> conc_cols{"eps", "posterior", "dimension", "K", "rate", "probability", "se",
                                               "reps", "draws", "seed"};
      {
        CsvWriter w(out.path("concentration.csv"), conc_cols);
        if (cfg.concentration) {
          for (std::size_t k = 0; k < grid.size(); ++k) {
            const auto pb = build_problem(cfg, grid[k]);
            const auto seed = level_seed(cfg.mc.seed, k);
            const auto& lvl = levels[k];
            for (auto kind : cfg.concentration->posteriors) {
              double K = 0.0;
              if (cfg.concentration->K) {
                K = *cfg.concentration->K;
              } else {
                if (!composite) throw Infeasible("composite constants unavailable: " + composite_note);
                K = kind == PosteriorKind::fixed ? composite->K_oracle : composite->K_hierarchical_oracle;
              }
              ConcentrationSetup setup{kind, lvl.oracle.dimension, C_lambda, cfg.mc.draws};
              const auto r = mc_concentration(setup, pb.theta, pb.prior, pb.op, pb.eps, std::max(K, 1.0),
                                              lvl.oracle.rate, cfg.mc.reps, seed);
              w.row({format_number(pb.eps), to_string(kind),
                     kind == PosteriorKind::fixed ? format_number(lvl.oracle.dimension) : "",
                     format_number(std::max(K, 1.0)), format_number(lvl.oracle.rate), format_number(r.value),
                     format_number(r.se), format_number(r.reps), format_number(cfg.mc.draws), std::to_string(seed)});
            }
            if (!opt.quiet) std::cerr << "concentration: eps = " << format_number(pb.eps) << " done\n";
          }
        }
        w.close();
        out.sidecar("concentration.csv", conc_cols, {{"draws", cfg.mc.draws}});
      }

      // audit.csv
      AuditOutcome audit;
      {
        CsvWriter w(out.path("audit.csv"), audit_columns());
        audit = run_audits(cfg, w, opt.quiet);
        w.close();
        out.sidecar("audit.csv", audit_columns());
      }
      if (audit.failures) failed_checks.push_back(std::to_string(audit.failures) + " audit rows");

      json rep;
      rep["config_name"] = cfg.name;
      rep["config_hash"] = cfg.hash();
      rep["seed"] = cfg.mc.seed;
      rep["version"] = kVersion;
      rep["assumptions"] = to_json(report);
      rep["C_lambda_used"] = C_lambda;
      rep["distance_to_prior_mean_sq"] = distance_sq;
      rep["composite_constants"] = composite ? to_json(*composite) : json(composite_note);
      rep["reference_rate"] = {{"regime", reference.regime},
                               {"exponent", reference.exponent ? json(*reference.exponent) : json(nullptr)},
                               {"note", reference.note}};
      rep["fits"] = fits;
      rep["audit"] = {{"rows", audit.rows}, {"failures", audit.failures}};
      rep["check"] = {{"requested", opt.check}, {"failed", failed_checks}, {"pass", failed_checks.empty()}};
      write_json(out.path("report.json"), rep);

      if (opt.check && !failed_checks.empty()) {
        if (!opt.quiet) {
          for (const auto& f : failed_checks) std::cerr << "check failed: " << f << '\n';
        }
        return kExitCheck;
      }
      if (!opt.quiet) std::cerr << "wrote outputs to " << out.dir().string() << '\n';
      return kExitOk;
    });
  });
}

// ---------------------------------------------------------------------------
// Single-stage subcommands

namespace detail {

inline double stage_eps(const ExperimentConfig& cfg, std::optional<double> eps) {
  if (eps) {
    require_noise(*eps, "--eps");
    return *eps;
  }
  if (cfg.eps_grid.empty()) throw ConfigError("eps_grid: needed to pick a noise level");
  return cfg.eps_grid.front();
}

inline double sidecar_eps(const fs::path& csv) {
  const fs::path side = csv.string() + ".json";
  std::ifstream in(side, std::ios::binary);
  if (!in) throw ConfigError("missing sidecar " + side.string());
  const auto j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("eps") || !j["eps"].is_number()) {
    throw ConfigError(side.string() + ": no noise level recorded");
  }
  return j["eps"].get<double>();
}

inline int needs_model(const ExperimentConfig& cfg, bool quiet) {
  if (cfg.has_model) return kExitOk;
  if (!quiet) std::cerr << "config error: this subcommand needs a 'model' block\n";
  return kExitConfig;
}

}  // namespace detail

/// observation.csv: one full draw of Y at the requested noise level.
inline int run_simulate(const ExperimentConfig& cfg, const RunOptions& opt, std::optional<double> eps_opt) {
  if (int rc = detail::needs_model(cfg, opt.quiet)) return rc;
  std::optional<OutputSet> outputs;
  return detail::run_guarded(nullptr, opt.quiet, [&]() -> int {
    outputs.emplace(opt.out.value_or(fs::path(cfg.output_dir)), cfg);
    return detail::run_guarded(&*outputs, opt.quiet, [&]() -> int {
      const double eps = detail::stage_eps(cfg, eps_opt);
      const auto pb = build_problem(cfg, eps);
      const auto obs = simulate_observation(pb.theta, pb.op, eps, cfg.mc.seed);
      write_observation_csv(outputs->path("observation.csv"), obs);
      outputs->sidecar("observation.csv", {"j", "y"}, {{"eps", eps}, {"N", pb.op.size()}});
      return kExitOk;
    });
  });
}

/// posterior.csv from an observation.csv produced by `simulate`.
inline int run_posterior(const ExperimentConfig& cfg, const RunOptions& opt, const fs::path& observation) {
  if (int rc = detail::needs_model(cfg, opt.quiet)) return rc;
  std::optional<OutputSet> outputs;
  return detail::run_guarded(nullptr, opt.quiet, [&]() -> int {
    outputs.emplace(opt.out.value_or(fs::path(cfg.output_dir)), cfg);
    return detail::run_guarded(&*outputs, opt.quiet, [&]() -> int {
      const double eps = detail::sidecar_eps(observation);
      const auto pb = build_problem(cfg, eps);
      Observation obs;
      obs.y = read_observation_csv(observation);
      obs.eps = eps;
      obs.seed = cfg.mc.seed;
      if (obs.size() > pb.op.size()) throw ConfigError("observation is longer than the model truncation N");
      const auto summary = coordinate_posterior(pb.prior, pb.op, obs);
      write_posterior_csv(outputs->path("posterior.csv"), summary);
      outputs->sidecar("posterior.csv", {"j", "sigma", "post_mean"}, {{"eps", eps}, {"N", summary.size()}});
      return kExitOk;
    });
  });
}

/// dimension_posterior.csv and adaptive.csv from a posterior.csv.
inline int run_adapt(const ExperimentConfig& cfg, const RunOptions& opt, const fs::path& posterior) {
  if (int rc = detail::needs_model(cfg, opt.quiet)) return rc;
  std::optional<OutputSet> outputs;
  return detail::run_guarded(nullptr, opt.quiet, [&]() -> int {
    outputs.emplace(opt.out.value_or(fs::path(cfg.output_dir)), cfg);
    return detail::run_guarded(&*outputs, opt.quiet, [&]() -> int {
      const double eps = detail::sidecar_eps(posterior);
      const auto pb = build_problem(cfg, eps);
      const auto summary = read_posterior_csv(posterior, eps);
      const double C = cfg.C_lambda.value_or(operator_constants(pb.op).C_lambda);
      const auto est = adaptive_estimate(summary, pb.prior, pb.op, eps, C);
      write_dimension_csv(outputs->path("dimension_posterior.csv"), est.posterior);
      outputs->sidecar("dimension_posterior.csv", {"m", "log_weight", "prob"}, {{"eps", eps}, {"C_lambda", C}});
      write_adaptive_csv(outputs->path("adaptive.csv"), est);
      outputs->sidecar("adaptive.csv", {"j", "omega", "theta_hat"}, {{"eps", eps}, {"C_lambda", C}});
      return kExitOk;
    });
  });
}

/// selection.json: oracle and minimax dimensions per noise level plus the
/// assumption report.
inline int run_select(const ExperimentConfig& cfg, const RunOptions& opt) {
  if (int rc = detail::needs_model(cfg, opt.quiet)) return rc;
  std::optional<OutputSet> outputs;
  return detail::run_guarded(nullptr, opt.quiet, [&]() -> int {
    outputs.emplace(opt.out.value_or(fs::path(cfg.output_dir)), cfg);
    return detail::run_guarded(&*outputs, opt.quiet, [&]() -> int {
      if (cfg.eps_grid.empty()) throw ConfigError("eps_grid: must not be empty");
      std::vector<NoiseLevelReport> levels;
      json sel = json::array();
      for (double eps : cfg.eps_grid) {
        const auto pb = build_problem(cfg, eps);
        levels.push_back(assess_noise_level(pb.theta, pb.prior, pb.op, pb.cls ? &*pb.cls : nullptr, eps));
        json e{{"eps", eps}, {"oracle", to_json(oracle_dimension(pb.theta, pb.prior, pb.op, eps))}};
        if (pb.cls) e["minimax"] = to_json(minimax_dimension(*pb.cls, pb.op, eps));
        sel.push_back(e);
      }
      const auto finest = build_problem(cfg, cfg.eps_grid.back());
      const auto report = combine_reports(levels, operator_constants(finest.op));
      write_json(outputs->path("selection.json"), {{"config_hash", cfg.hash()},
                                                   {"seed", cfg.mc.seed},
                                                   {"version", kVersion},
                                                   {"selection", sel},
                                                   {"assumptions", to_json(report)}});
      return kExitOk;
    });
  });
}

/// audit.csv for the configured tail and deviation suites; with --check any
/// failing row gives exit 4.
inline int run_audit(const ExperimentConfig& cfg, const RunOptions& opt) {
  std::optional<OutputSet> outputs;
  return detail::run_guarded(nullptr, opt.quiet, [&]() -> int {
    if (!cfg.audit) throw ConfigError("audit: config has no 'audit' block");
    outputs.emplace(opt.out.value_or(fs::path(cfg.output_dir)), cfg);
    return detail::run_guarded(&*outputs, opt.quiet, [&]() -> int {
      CsvWriter w(outputs->path("audit.csv"), audit_columns());
      const auto a = run_audits(cfg, w, opt.quiet);
      w.close();
      outputs->sidecar("audit.csv", audit_columns(), {{"rows", a.rows}, {"failures", a.failures}});
      if (!opt.quiet) std::cerr << "audit: " << a.rows << " rows, " << a.failures << " failing\n";
      return opt.check && a.failures ? kExitCheck : kExitOk;
    });
  });
}

}  // namespace igssm
