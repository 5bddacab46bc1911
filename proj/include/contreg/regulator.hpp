#pragma once

// Closed loop with integral action
//
//   dw/dt + 𝒜(w) = B u + d,   dz/dt = C w - y_ref,
//   u = B* dM(w)* [z - M(w)],
//
// simulated with the IMEX step in w and explicit Euler in z.

#include "contreg/evolution.hpp"
#include "contreg/forwarding.hpp"
#include "contreg/space.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace contreg {

struct ClosedLoopState {
  Vec w;
  Vec z;
};

struct Scenario {
  Vec d;
  Vec y_ref;
  Vec w0;
  Vec z0;
  double horizon = 1.0;
  double dt = 0.01;

  static Scenario zero(const Plant& plant, double horizon, double dt) {
    return {Vec::Zero(plant.H().dim()), Vec::Zero(plant.Z().dim()),
            Vec::Zero(plant.H().dim()), Vec::Zero(plant.Z().dim()), horizon, dt};
  }

  void validate(const Plant& plant) const {
    require_dim(d, plant.H().dim(), "scenario.d");
    require_dim(y_ref, plant.Z().dim(), "scenario.y_ref");
    require_dim(w0, plant.H().dim(), "scenario.w0");
    require_dim(z0, plant.Z().dim(), "scenario.z0");
    if (!(horizon > 0.0) || !(dt > 0.0)) {
      throw UsageError("scenario: T and dt must be positive");
    }
  }
};

/// u = B* dM(w)* [z - M(w)].
inline Vec feedback(const ForwardingMap& fmap, const ClosedLoopState& state) {
  const auto lin = fmap.linearize(state.w);
  return lin.adjoint_B(state.z - lin.value());
}

/// V = ½‖w‖²_H + (ρ/2)‖z - M(w)‖²_Z.
inline double lyapunov(const ForwardingMap& fmap, const ClosedLoopState& state,
                       std::optional<double> rho = std::nullopt) {
  const Plant& p = fmap.plant();
  const Vec eta = state.z - eval_M(fmap, state.w);
  const double r = rho.value_or(fmap.rho());
  return 0.5 * p.H().inner(state.w, state.w) + 0.5 * r * p.Z().inner(eta, eta);
}

struct SimulationResult {
  double dt = 0.0;
  std::vector<double> times;
  std::vector<Vec> w;
  std::vector<Vec> z;
  std::vector<Vec> eta;  // z - M(w)
  std::vector<Vec> u;    // control applied on [t_k, t_{k+1}); last entry at T
  std::vector<Vec> y;
  std::vector<double> V;
  std::vector<double> w_norm;
  bool aborted = false;
  std::string abort_reason;

  std::size_t size() const { return times.size(); }
  ClosedLoopState state(std::size_t k) const { return {w[k], z[k]}; }
};

struct SimulateOptions {
  double divergence_norm = 1e6;
};

inline SimulationResult simulate(const Plant& plant, const ForwardingMap& fmap,
                                 const Scenario& sc, SimulateOptions opts = {}) {
  sc.validate(plant);
  const auto n = step_count(sc.horizon, sc.dt);
  stability_guard(plant, sc.dt);
  const double rho = fmap.rho();
  const Stepper stepper = plant.stepper(sc.dt);
  const Space& h = plant.H();
  const Space& zs = plant.Z();

  SimulationResult res;
  res.dt = sc.dt;
  Vec w = sc.w0, z = sc.z0;
  for (std::size_t k = 0;; ++k) {
    const auto lin = fmap.linearize(w);
    const Vec eta = z - lin.value();
    const Vec u = lin.adjoint_B(eta);
    const Vec y = plant.C_matrix() * w;
    const double wn2 = h.inner(w, w);
    res.times.push_back(static_cast<double>(k) * sc.dt);
    res.w.push_back(w);
    res.z.push_back(z);
    res.eta.push_back(eta);
    res.u.push_back(u);
    res.y.push_back(y);
    res.V.push_back(0.5 * wn2 + 0.5 * rho * zs.inner(eta, eta));
    res.w_norm.push_back(std::sqrt(wn2));
    if (k == n) break;

    const double size = std::sqrt(wn2 + zs.inner(z, z));
    if (!std::isfinite(size) || size > opts.divergence_norm) {
      res.aborted = true;
      res.abort_reason = "state norm exceeded divergence threshold";
      break;
    }
    const Vec w_next =
        stepper.solve(w + sc.dt * (plant.B_matrix() * u + sc.d - plant.F(w)));
    z = z + sc.dt * (y - sc.y_ref);
    w = w_next;
  }
  return res;
}

struct EquilibriumOptions {
  double dt = 0.01;
  double check_interval = 1.0;  // Δ between stagnation checks
  double stagnation_tol = 1e-12;
  double max_time = 1000.0;
  std::size_t tail_samples = 10;
};

struct Equilibrium {
  Vec w_star;
  Vec z_star;
  double dynamics_residual = 0.0;  // ‖-𝒜(w*) + B u* + d‖_H
  double output_residual = 0.0;    // ‖C w* - y_ref‖_Z
  double time = 0.0;
  bool found = false;
  std::string message;
};

/// Runs the closed loop from the origin until ‖state(t + Δ) - state(t)‖
/// stagnates, then averages the last few step states.
inline Equilibrium find_equilibrium(const Plant& plant,
                                    const ForwardingMap& fmap, const Vec& d,
                                    const Vec& y_ref,
                                    EquilibriumOptions opts = {},
                                    std::optional<ClosedLoopState> start = {}) {
  require_dim(d, plant.H().dim(), "find_equilibrium.d");
  require_dim(y_ref, plant.Z().dim(), "find_equilibrium.y_ref");
  const Space& h = plant.H();
  const Space& zs = plant.Z();
  const Stepper stepper = plant.stepper(opts.dt);
  stability_guard(plant, opts.dt);
  const auto per_check = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(opts.check_interval / opts.dt)));

  Vec w = start ? start->w : Vec(Vec::Zero(h.dim()));
  Vec z = start ? start->z : Vec(Vec::Zero(zs.dim()));
  Equilibrium eq;
  std::vector<ClosedLoopState> tail;
  double t = 0.0;
  while (t < opts.max_time) {
    const Vec w_prev = w, z_prev = z;
    tail.clear();
    for (std::size_t k = 0; k < per_check; ++k) {
      const auto lin = fmap.linearize(w);
      const Vec u = lin.adjoint_B(z - lin.value());
      const Vec y = plant.C_matrix() * w;
      w = stepper.solve(w + opts.dt * (plant.B_matrix() * u + d - plant.F(w)));
      z = z + opts.dt * (y - y_ref);
      if (per_check - k <= opts.tail_samples) tail.push_back({w, z});
    }
    t += static_cast<double>(per_check) * opts.dt;
    const double size = std::sqrt(h.inner(w, w) + zs.inner(z, z));
    if (!std::isfinite(size) || size > 1e6) {
      eq.message = "closed loop diverged";
      eq.time = t;
      return eq;
    }
    const double change =
        std::sqrt(h.inner(w - w_prev, w - w_prev) + zs.inner(z - z_prev, z - z_prev));
    if (change <= opts.stagnation_tol * std::max(1.0, size)) {
      eq.found = true;
      break;
    }
  }
  eq.time = t;
  Vec ws = Vec::Zero(h.dim()), zsum = Vec::Zero(zs.dim());
  for (const auto& s : tail) {
    ws += s.w;
    zsum += s.z;
  }
  eq.w_star = ws / static_cast<double>(tail.size());
  eq.z_star = zsum / static_cast<double>(tail.size());
  const Vec u = feedback(fmap, {eq.w_star, eq.z_star});
  eq.dynamics_residual =
      h.norm(Vec(-apply_nonlinear_A(plant, eq.w_star) + plant.B_matrix() * u + d));
  eq.output_residual = zs.norm(Vec(plant.C_matrix() * eq.w_star - y_ref));
  if (!eq.found) {
    eq.message =
        "no stagnation within the time budget; (d, y_ref) may be too large";
  }
  return eq;
}

struct RegulationReport {
  Vec w_star;
  Vec z_star;
  double final_output_error = 0.0;
  double averaged_output_error = 0.0;
  std::optional<double> fitted_rate;  // empty when not measurable
  bool lyapunov_monotone = true;
  double max_lyapunov_jump = 0.0;
  std::vector<double> deviation;  // ‖[w - w*, η - η*]‖_ρ
};

/// ‖[w, η]‖_ρ = (‖w‖²_H + ρ‖η‖²_Z)^{1/2}.
inline double rho_norm(const Plant& plant, double rho, const Vec& w,
                       const Vec& eta) {
  return std::sqrt(plant.H().inner(w, w) + rho * plant.Z().inner(eta, eta));
}

/// Least-squares slope of log e(t) over the samples with
/// 1e-3 e(0) < e(t) ≤ 0.1 e(0); returns the negated slope.
inline std::optional<double> fit_decay_rate(const std::vector<double>& times,
                                            const std::vector<double>& dev,
                                            double upper = 0.1,
                                            double lower = 1e-3) {
  if (dev.empty() || !(dev.front() > 0.0)) return std::nullopt;
  const double e0 = dev.front();
  std::size_t first = dev.size(), last = dev.size();
  for (std::size_t k = 0; k < dev.size(); ++k) {
    if (first == dev.size() && dev[k] <= upper * e0) first = k;
    if (first != dev.size() && dev[k] <= lower * e0) {
      last = k;
      break;
    }
  }
  if (first == dev.size() || last == dev.size() || last - first < 3) {
    return std::nullopt;
  }
  double st = 0, sy = 0, stt = 0, sty = 0;
  const double m = static_cast<double>(last - first);
  for (std::size_t k = first; k < last; ++k) {
    const double t = times[k], y = std::log(dev[k]);
    st += t;
    sy += y;
    stt += t * t;
    sty += t * y;
  }
  const double den = m * stt - st * st;
  if (den <= 0.0) return std::nullopt;
  return -(m * sty - st * sy) / den;
}

inline RegulationReport convergence_report(const SimulationResult& traj,
                                           const ForwardingMap& fmap,
                                           const Vec& y_ref, const Vec& w_star,
                                           const Vec& z_star, double window,
                                           double monotone_tol = 0.0) {
  const Plant& p = fmap.plant();
  const double rho = fmap.rho();
  RegulationReport rep;
  rep.w_star = w_star;
  rep.z_star = z_star;
  const Vec eta_star = z_star - eval_M(fmap, w_star);
  const std::size_t n = traj.size();
  rep.deviation.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    rep.deviation[k] =
        rho_norm(p, rho, Vec(traj.w[k] - w_star), Vec(traj.eta[k] - eta_star));
  }
  std::vector<double> err2(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Vec e = traj.y[k] - y_ref;
    err2[k] = p.Z().inner(e, e);
  }
  rep.final_output_error = std::sqrt(err2.back());
  // Trapezoid over [T - window, T] on the grid.
  const double t_end = traj.times.back();
  double acc = 0.0;
  for (std::size_t k = 1; k < n; ++k) {
    if (traj.times[k] <= t_end - window + 1e-12) continue;
    const double a = std::max(traj.times[k - 1], t_end - window);
    const double len = traj.times[k] - a;
    const double frac = (a - traj.times[k - 1]) / (traj.times[k] - traj.times[k - 1]);
    const double ea = err2[k - 1] + frac * (err2[k] - err2[k - 1]);
    acc += 0.5 * len * (ea + err2[k]);
  }
  rep.averaged_output_error = acc;
  rep.fitted_rate = fit_decay_rate(traj.times, rep.deviation);
  for (std::size_t k = 1; k < n; ++k) {
    const double jump = traj.V[k] - traj.V[k - 1];
    rep.max_lyapunov_jump = std::max(rep.max_lyapunov_jump, jump);
  }
  rep.lyapunov_monotone = rep.max_lyapunov_jump <= monotone_tol;
  return rep;
}

}  // namespace contreg
