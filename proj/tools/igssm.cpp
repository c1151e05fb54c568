// igssm: command-line front end for the experiment harness.
//
//   igssm <simulate|posterior|select|adapt|audit|sweep|run> --config PATH
//         [--out DIR] [--seed INT] [--reps INT] [--check] [--quiet]
//
// `sweep` and `run` both execute the full experiment.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "igssm/harness.hpp"

int main(int argc, char** argv) {
  namespace fs = std::filesystem;
  CLI::App app{"Bayes estimation in the indirect Gaussian sequence space model"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", igssm::kVersion);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::size_t reps = 0;
  bool check = false;
  bool quiet = false;
  app.add_option("--config", config_path, "experiment config (JSON)")->required();
  auto* out_opt = app.add_option("--out", out_dir, "output directory (overrides output.dir)");
  auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides mc.seed)");
  auto* reps_opt = app.add_option("--reps", reps, "Monte Carlo replications (overrides mc.reps)");
  app.add_flag("--check", check, "exit 4 when an acceptance check fails");
  app.add_flag("--quiet", quiet, "suppress progress and diagnostics");

  auto* simulate = app.add_subcommand("simulate", "draw one observation, write observation.csv");
  std::optional<double> eps;
  simulate->add_option("--eps", eps, "noise level (default: first grid point)");
  auto* posterior = app.add_subcommand("posterior", "coordinate posterior of an observation, write posterior.csv");
  std::string observation;
  posterior->add_option("--observation", observation, "observation CSV (default: <out>/observation.csv)");
  auto* select = app.add_subcommand("select", "oracle and minimax dimensions with assumption report");
  auto* adapt = app.add_subcommand("adapt", "dimension posterior and adaptive estimate from posterior.csv");
  std::string summary;
  adapt->add_option("--posterior", summary, "posterior CSV (default: <out>/posterior.csv)");
  auto* audit = app.add_subcommand("audit", "tail-bound and deviation audits, write audit.csv");
  auto* sweep = app.add_subcommand("sweep", "full experiment over the noise grid");
  auto* run = app.add_subcommand("run", "alias of sweep");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : igssm::kExitConfig;
  }

  igssm::RunOptions opt;
  if (*out_opt) opt.out = fs::path(out_dir);
  if (*seed_opt) opt.seed = seed;
  if (*reps_opt) opt.reps = reps;
  opt.check = check;
  opt.quiet = quiet;

  try {
    igssm::ExperimentConfig cfg;
    try {
      cfg = igssm::load_config(config_path, opt);
    } catch (const std::invalid_argument& e) {
      if (!quiet) std::cerr << "config error: " << e.what() << '\n';
      return igssm::kExitConfig;
    }
    const fs::path out = opt.out.value_or(fs::path(cfg.output_dir));
    if (*simulate) return igssm::run_simulate(cfg, opt, eps);
    if (*posterior) {
      return igssm::run_posterior(cfg, opt, observation.empty() ? out / "observation.csv" : fs::path(observation));
    }
    if (*select) return igssm::run_select(cfg, opt);
    if (*adapt) return igssm::run_adapt(cfg, opt, summary.empty() ? out / "posterior.csv" : fs::path(summary));
    if (*audit) return igssm::run_audit(cfg, opt);
    if (*sweep || *run) return igssm::run_experiment(cfg, opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
