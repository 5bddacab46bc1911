// contreg: gains | simulate | verify | sweep

#include "contreg/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

int main(int argc, char** argv) {
  CLI::App app{"Forwarding-based output regulation for semilinear contraction systems"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  app.add_option("--config", config_path, "INI configuration file")->required();
  app.add_option("--out", out_dir, "output directory (overrides [output] dir)");
  app.add_option("--seed", seed, "random seed (overrides the config)");
  app.add_option("--workers", workers, "parallel workers for sweep")->check(CLI::PositiveNumber);

  auto* gains = app.add_subcommand("gains", "print lambda, rho, kappa and feasibility");
  auto* simulate = app.add_subcommand("simulate", "run the closed loop for each scenario");
  auto* verify = app.add_subcommand("verify", "run the verification battery");
  auto* sweep = app.add_subcommand("sweep", "grid over |d| and |y_ref|");
  // global options may follow the subcommand too
  for (auto* s : {gains, simulate, verify, sweep}) s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : contreg::kInfeasible;
  }

  try {
    contreg::CliContext ctx;
    ctx.cfg = contreg::load_config(config_path);
    if (seed) ctx.cfg.seed = *seed;
    if (workers) ctx.cfg.workers = *workers;
    ctx.out = out_dir ? *out_dir : ctx.cfg.out_dir;
    if (*gains) return contreg::cmd_gains(ctx);
    if (*simulate) return contreg::cmd_simulate(ctx);
    if (*verify) return contreg::cmd_verify(ctx);
    if (*sweep) return contreg::cmd_sweep(ctx);
  } catch (const contreg::InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return contreg::kInfeasible;
  } catch (const contreg::ConfigurationError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return contreg::kInfeasible;
  } catch (const contreg::UsageError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return contreg::kInfeasible;
  } catch (const contreg::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return contreg::kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return contreg::kInfeasible;
  }
  return contreg::kInfeasible;
}
