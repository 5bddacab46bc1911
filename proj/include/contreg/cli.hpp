#pragma once

// Subcommand implementations behind tools/contreg.cpp. Each returns the
// process exit code: 0 pass, 1 verification failure, 2 infeasible or bad
// configuration, 3 divergence.

#include "contreg/config.hpp"
#include "contreg/forwarding.hpp"
#include "contreg/regulator.hpp"
#include "contreg/verify.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace contreg {

enum ExitCode : int { kPass = 0, kVerifyFail = 1, kInfeasible = 2, kDiverged = 3 };

struct CliContext {
  RunConfig cfg;
  std::filesystem::path out;
  std::ostream* log = &std::cout;
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline nlohmann::json jnum(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw ConfigurationError("cannot write '" + path.string() + "'");
  f << j.dump(2) << "\n";
}

inline std::string csv_preamble(const RunConfig& cfg) {
  return std::string("# config_hash=") + cfg.hash() + " version=" + kVersion + "\n";
}

inline std::mt19937_64 scenario_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

inline nlohmann::json gains_json(const ForwardingMap& fmap) {
  nlohmann::json j;
  const auto alpha = fmap.alpha();
  j["alpha"] = alpha ? jnum(*alpha) : nlohmann::json(nullptr);
  j["b_norm"] = jnum(fmap.b_norm());
  j["lambda"] = jnum(fmap.lambda());
  j["feasible"] = fmap.feasible();
  if (fmap.feasible()) {
    const Gains g = fmap.gains();
    j["lambda_tilde"] = jnum(g.lambda_tilde);
    j["rho"] = jnum(g.rho);
    j["kappa"] = jnum(g.kappa);
  } else {
    j["lambda_tilde"] = jnum(fmap.lambda() / 3.0);
    j["rho"] = nullptr;
    j["kappa"] = nullptr;
  }
  j["formulas"] = {{"lambda", "sigma_min(B* dM(0)*)^2"},
                   {"lambda_tilde", "lambda/3"},
                   {"rho", "b_norm^2 * max(1, 2/alpha)"},
                   {"kappa", "min(alpha/4, lambda_tilde/4)"}};
  return j;
}

inline nlohmann::json plant_json(const Plant& p) {
  nlohmann::json j;
  j["name"] = p.name();
  j["dim_H"] = p.H().dim();
  j["dim_U"] = p.U().dim();
  j["dim_Z"] = p.Z().dim();
  j["notes"] = p.notes();
  return j;
}

}  // namespace detail

inline int cmd_gains(const CliContext& ctx) {
  const Plant plant = build_plant(ctx.cfg.plant);
  const ForwardingMap fmap(plant, ctx.cfg.forwarding);
  nlohmann::json j = detail::gains_json(fmap);
  j["plant"] = detail::plant_json(plant);
  j["config_hash"] = ctx.cfg.hash();
  j["version"] = kVersion;
  detail::write_json(ctx.out / "gains.json", j);
  auto& os = *ctx.log;
  os << std::setprecision(17);
  os << "plant        " << plant.name() << "\n";
  os << "alpha        " << (fmap.alpha() ? detail::fmt(*fmap.alpha()) : "uncertified") << "\n";
  os << "b_norm       " << fmap.b_norm() << "\n";
  os << "lambda       " << fmap.lambda() << "\n";
  if (fmap.feasible()) {
    const Gains g = fmap.gains();
    os << "lambda_tilde " << g.lambda_tilde << "\n";
    os << "rho          " << g.rho << "\n";
    os << "kappa        " << g.kappa << "\n";
  }
  os << "feasible     " << (fmap.feasible() ? "true" : "false") << "\n";
  for (const auto& n : plant.notes()) os << "note: " << n << "\n";
  return fmap.feasible() ? kPass : kInfeasible;
}

struct ScenarioOutcome {
  nlohmann::json report;
  bool aborted = false;
};

inline ScenarioOutcome run_scenario(const CliContext& ctx, const Plant& plant,
                                    const ForwardingMap& fmap, const ScenarioSpec& entry,
                                    std::size_t index) {
  const RunConfig& cfg = ctx.cfg;
  auto rng = detail::scenario_rng(cfg.seed, index);
  const Gains g = fmap.gains();
  Scenario sc;
  sc.d = make_vector(entry.d, cfg.plant, plant, plant.H(), true, rng, entry.name + ".d");
  sc.y_ref = make_vector(entry.y_ref, cfg.plant, plant, plant.Z(), false, rng, entry.name + ".y_ref");
  sc.w0 = make_vector(entry.w0, cfg.plant, plant, plant.H(), true, rng, entry.name + ".w0");
  sc.z0 = make_vector(entry.z0, cfg.plant, plant, plant.Z(), false, rng, entry.name + ".z0");
  sc.dt = entry.dt;
  double horizon = entry.horizon ? *entry.horizon : *entry.horizon_kappa / g.kappa;
  horizon = std::max(1.0, std::round(horizon / sc.dt)) * sc.dt;
  sc.horizon = horizon;

  const SimulationResult traj = simulate(plant, fmap, sc);

  std::optional<Equilibrium> eq;
  if (entry.equilibrium) eq = find_equilibrium(plant, fmap, sc.d, sc.y_ref, entry.eq);

  const double window = entry.window ? *entry.window : entry.window_kappa / g.kappa;
  nlohmann::json rep;
  rep["scenario"] = entry.name;
  rep["T"] = detail::jnum(horizon);
  rep["dt"] = detail::jnum(sc.dt);
  rep["steps"] = traj.size() - 1;
  rep["aborted"] = traj.aborted;
  if (traj.aborted) rep["abort_reason"] = traj.abort_reason;
  rep["kappa"] = detail::jnum(g.kappa);
  rep["rho"] = detail::jnum(g.rho);
  rep["d_norm"] = detail::jnum(plant.H().norm(sc.d));
  rep["y_ref_norm"] = detail::jnum(plant.Z().norm(sc.y_ref));
  rep["w0_norm"] = detail::jnum(plant.H().norm(sc.w0));
  const Vec e_end = traj.y.back() - sc.y_ref;
  rep["final_output_error"] = detail::jnum(plant.Z().norm(e_end));

  std::vector<double> deviation;
  if (eq) {
    nlohmann::json je;
    je["found"] = eq->found;
    je["time"] = detail::jnum(eq->time);
    je["dynamics_residual"] = detail::jnum(eq->dynamics_residual);
    je["output_residual"] = detail::jnum(eq->output_residual);
    je["w_star_norm"] = detail::jnum(plant.H().norm(eq->w_star));
    if (!eq->message.empty()) je["message"] = eq->message;
    rep["equilibrium"] = je;
    if (!traj.aborted) {
      const auto cr = convergence_report(traj, fmap, sc.y_ref, eq->w_star, eq->z_star, window);
      rep["averaged_output_error"] = detail::jnum(cr.averaged_output_error);
      rep["window"] = detail::jnum(window);
      rep["fitted_rate"] = cr.fitted_rate ? detail::jnum(*cr.fitted_rate) : nlohmann::json(nullptr);
      rep["lyapunov_monotone"] = cr.lyapunov_monotone;
      rep["max_lyapunov_jump"] = detail::jnum(cr.max_lyapunov_jump);
      deviation = cr.deviation;
    }
  }

  // trajectory CSV
  std::filesystem::create_directories(ctx.out);
  std::ofstream f(ctx.out / (entry.name + ".csv"));
  if (!f) throw ConfigurationError("cannot write trajectory CSV");
  f << detail::csv_preamble(cfg);
  f << "t,w_norm";
  for (Eigen::Index i = 0; i < plant.Z().dim(); ++i) f << ",z_" << i;
  for (Eigen::Index i = 0; i < plant.Z().dim(); ++i) f << ",y_" << i;
  for (Eigen::Index i = 0; i < plant.U().dim(); ++i) f << ",u_" << i;
  f << ",V,eta_norm";
  if (!deviation.empty()) f << ",deviation";
  f << "\n";
  for (std::size_t k = 0; k < traj.size(); ++k) {
    f << detail::fmt(traj.times[k]) << "," << detail::fmt(traj.w_norm[k]);
    for (Eigen::Index i = 0; i < traj.z[k].size(); ++i) f << "," << detail::fmt(traj.z[k][i]);
    for (Eigen::Index i = 0; i < traj.y[k].size(); ++i) f << "," << detail::fmt(traj.y[k][i]);
    for (Eigen::Index i = 0; i < traj.u[k].size(); ++i) f << "," << detail::fmt(traj.u[k][i]);
    f << "," << detail::fmt(traj.V[k]) << "," << detail::fmt(plant.Z().norm(traj.eta[k]));
    if (!deviation.empty()) f << "," << detail::fmt(deviation[k]);
    f << "\n";
  }
  detail::write_json(ctx.out / (entry.name + "_report.json"), rep);
  return {rep, traj.aborted};
}

inline int cmd_simulate(const CliContext& ctx) {
  const Plant plant = build_plant(ctx.cfg.plant);
  const ForwardingMap fmap(plant, ctx.cfg.forwarding);
  if (!fmap.feasible()) {
    *ctx.log << "infeasible: " << (fmap.alpha() ? "lambda = 0" : "alpha uncertified") << "\n";
    return kInfeasible;
  }
  nlohmann::json summary;
  summary["config_hash"] = ctx.cfg.hash();
  summary["version"] = kVersion;
  summary["gains"] = detail::gains_json(fmap);
  summary["scenarios"] = nlohmann::json::array();
  bool aborted = false;
  for (std::size_t i = 0; i < ctx.cfg.scenarios.size(); ++i) {
    const auto out = run_scenario(ctx, plant, fmap, ctx.cfg.scenarios[i], i);
    summary["scenarios"].push_back(out.report);
    aborted = aborted || out.aborted;
    *ctx.log << ctx.cfg.scenarios[i].name << ": final |y - y_ref| = "
             << out.report["final_output_error"].dump()
             << (out.aborted ? " (aborted)" : "") << "\n";
  }
  detail::write_json(ctx.out / "simulate.json", summary);
  return aborted ? kDiverged : kPass;
}

inline int cmd_verify(const CliContext& ctx) {
  const Plant plant = build_plant(ctx.cfg.plant);
  const ForwardingMap fmap(plant, ctx.cfg.forwarding);
  const VerificationReport rep = run_battery(plant, fmap, battery_config(ctx.cfg));
  nlohmann::json j = to_json(rep);
  j["plant"] = detail::plant_json(plant);
  j["config_hash"] = ctx.cfg.hash();
  j["version"] = kVersion;
  detail::write_json(ctx.out / "verify.json", j);
  auto& os = *ctx.log;
  for (const auto& [name, c] : rep.checks) {
    os << (c.pass ? "PASS " : "FAIL ") << name << " value="
       << (c.value ? detail::fmt(*c.value) : std::string("n/a")) << " bound=" << detail::fmt(c.bound)
       << (c.mandatory ? "" : " (optional)") << (c.note.empty() ? "" : " [" + c.note + "]") << "\n";
  }
  os << "overall " << (rep.overall() ? "PASS" : "FAIL") << "\n";
  return rep.overall() ? kPass : kVerifyFail;
}

struct SweepCell {
  std::size_t i = 0, j = 0;
  double d_norm = 0.0, y_ref_norm = 0.0;
  bool success = false;
  bool found = false;
  bool aborted = false;
  double dynamics_residual = NAN, output_residual = NAN, final_output_error = NAN;
  std::optional<double> fitted_rate;
  std::string error;
};

inline SweepCell run_sweep_cell(const CliContext& ctx, const Plant& plant,
                                const ForwardingMap& fmap, std::size_t i, std::size_t j) {
  const RunConfig& cfg = ctx.cfg;
  const SweepSpec& sw = cfg.sweep;
  SweepCell cell;
  cell.i = i;
  cell.j = j;
  cell.d_norm = sw.d_norms[i];
  cell.y_ref_norm = sw.y_ref_norms[j];
  try {
    auto rng = detail::scenario_rng(cfg.seed, 1000003ULL * (i + 1) + j);
    VectorSpec dv{std::nullopt, cell.d_norm, sw.d_shape};
    VectorSpec yv{std::nullopt, cell.y_ref_norm, sw.y_ref_shape};
    Scenario sc = Scenario::zero(plant, 1.0, sw.dt);
    sc.d = make_vector(dv, cfg.plant, plant, plant.H(), true, rng, "sweep.d");
    sc.y_ref = make_vector(yv, cfg.plant, plant, plant.Z(), false, rng, "sweep.y_ref");
    sc.horizon = std::max(1.0, std::round(sw.horizon / sw.dt)) * sw.dt;
    const auto eq = find_equilibrium(plant, fmap, sc.d, sc.y_ref, sw.eq);
    cell.found = eq.found;
    cell.dynamics_residual = eq.dynamics_residual;
    cell.output_residual = eq.output_residual;
    const auto traj = simulate(plant, fmap, sc);
    cell.aborted = traj.aborted;
    cell.final_output_error = plant.Z().norm(Vec(traj.y.back() - sc.y_ref));
    if (!traj.aborted && eq.found) {
      const auto cr = convergence_report(traj, fmap, sc.y_ref, eq.w_star, eq.z_star,
                                         0.25 * sc.horizon);
      cell.fitted_rate = cr.fitted_rate;
    }
    cell.success = eq.found && !traj.aborted && std::isfinite(eq.output_residual) &&
                   eq.output_residual <= sw.success_tol;
  } catch (const std::exception& e) {
    cell.error = e.what();
  }
  nlohmann::json j_cell;
  j_cell["d_norm"] = detail::jnum(cell.d_norm);
  j_cell["y_ref_norm"] = detail::jnum(cell.y_ref_norm);
  j_cell["success"] = cell.success;
  j_cell["equilibrium_found"] = cell.found;
  j_cell["aborted"] = cell.aborted;
  j_cell["dynamics_residual"] = detail::jnum(cell.dynamics_residual);
  j_cell["output_residual"] = detail::jnum(cell.output_residual);
  j_cell["final_output_error"] = detail::jnum(cell.final_output_error);
  j_cell["fitted_rate"] = cell.fitted_rate ? detail::jnum(*cell.fitted_rate) : nlohmann::json(nullptr);
  if (!cell.error.empty()) j_cell["error"] = cell.error;
  detail::write_json(ctx.out / "cells" / ("cell_" + std::to_string(i) + "_" + std::to_string(j) + ".json"),
                     j_cell);
  return cell;
}

inline int cmd_sweep(const CliContext& ctx) {
  const Plant plant = build_plant(ctx.cfg.plant);
  const ForwardingMap fmap(plant, ctx.cfg.forwarding);
  if (!fmap.feasible()) {
    *ctx.log << "infeasible: " << (fmap.alpha() ? "lambda = 0" : "alpha uncertified") << "\n";
    return kInfeasible;
  }
  const auto& sw = ctx.cfg.sweep;
  const std::size_t ni = sw.d_norms.size(), nj = sw.y_ref_norms.size();
  std::vector<SweepCell> cells(ni * nj);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < cells.size(); k = next++) {
      cells[k] = run_sweep_cell(ctx, plant, fmap, k / nj, k % nj);
    }
  };
  const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(ctx.cfg.workers), cells.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < nw; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::filesystem::create_directories(ctx.out);
  std::ofstream f(ctx.out / "sweep.csv");
  if (!f) throw ConfigurationError("cannot write sweep.csv");
  f << detail::csv_preamble(ctx.cfg);
  f << "d_norm,y_ref_norm,success,equilibrium_found,aborted,dynamics_residual,output_residual,"
       "final_output_error,fitted_rate,error\n";
  std::size_t ok = 0;
  for (const auto& c : cells) {
    ok += c.success ? 1 : 0;
    std::string err = c.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    f << detail::fmt(c.d_norm) << "," << detail::fmt(c.y_ref_norm) << "," << (c.success ? 1 : 0) << ","
      << (c.found ? 1 : 0) << "," << (c.aborted ? 1 : 0) << "," << detail::fmt(c.dynamics_residual) << ","
      << detail::fmt(c.output_residual) << "," << detail::fmt(c.final_output_error) << ","
      << (c.fitted_rate ? detail::fmt(*c.fitted_rate) : std::string("nan")) << ",\"" << err << "\"\n";
  }
  *ctx.log << "sweep: " << ok << "/" << cells.size() << " cells converged\n";
  return kPass;
}

}  // namespace contreg
