#pragma once

// Oracles and the check battery: dense closed-loop reference for F = 0,
// finite-difference differentials, refinement ladders, pass/fail aggregation.

#include "contreg/evolution.hpp"
#include "contreg/forwarding.hpp"
#include "contreg/regulator.hpp"
#include "contreg/space.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>
#include <nlohmann/json.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace contreg {

// ---------------------------------------------------------------------------
// dense linear reference

/// Closed loop of a linear plant in x = [w, η]:
///   dx/dt = J x + c,  J = [[-A, B K], [0, -M B K]],  c = [d, -y_ref - M d],
/// with M = -C A⁻¹ and K = B* M* (gain U <- Z). Built from dense matrices
/// only, so it shares no code path with the sparse solvers.
class LinearOracle {
 public:
  LinearOracle(const Plant& plant, const Vec& d, const Vec& y_ref,
               std::optional<double> rho = std::nullopt)
      : rho_(rho) {
    if (!plant.is_linear()) {
      throw UsageError("dense_linear_oracle: plant must have F = 0");
    }
    n_ = plant.H().dim();
    m_ = plant.Z().dim();
    if (n_ > 200) throw UsageError("dense_linear_oracle: dim(H) must be <= 200");
    require_dim(d, n_, "dense_linear_oracle.d");
    require_dim(y_ref, m_, "dense_linear_oracle.y_ref");

    const Mat a = Mat(plant.A());
    const Mat b = Mat(plant.B_matrix());
    const Mat c = Mat(plant.C_matrix());
    const Mat gu = Mat(plant.U().gram());
    const Mat gz = Mat(plant.Z().gram());

    m_mat_ = -a.transpose().partialPivLu().solve(c.transpose()).transpose();
    // K = G_U⁻¹ Bᵀ G_H (G_H⁻¹ Mᵀ G_Z) = G_U⁻¹ Bᵀ Mᵀ G_Z
    k_mat_ = gu.llt().solve(b.transpose() * m_mat_.transpose() * gz);

    const Eigen::Index s = n_ + m_;
    j_.setZero(s, s);
    j_.topLeftCorner(n_, n_) = -a;
    j_.topRightCorner(n_, m_) = b * k_mat_;
    j_.bottomRightCorner(m_, m_) = -m_mat_ * b * k_mat_;
    c_.resize(s);
    c_.head(n_) = d;
    c_.tail(m_) = -y_ref - m_mat_ * d;

    Eigen::FullPivLU<Mat> lu(j_);
    if (!lu.isInvertible()) {
      throw InfeasibleError("dense_linear_oracle: closed-loop matrix is singular");
    }
    x_star_ = -lu.solve(c_);
    const Eigen::VectorXcd ev = j_.eigenvalues();
    abscissa_ = ev.real().maxCoeff();
  }

  const Mat& M() const { return m_mat_; }
  const Mat& gain() const { return k_mat_; }
  const Mat& closed_loop_matrix() const { return j_; }
  const Vec& affine_term() const { return c_; }
  std::optional<double> rho() const { return rho_; }
  double spectral_abscissa() const { return abscissa_; }

  Vec w_star() const { return x_star_.head(n_); }
  Vec eta_star() const { return x_star_.tail(m_); }
  Vec z_star() const { return eta_star() + m_mat_ * w_star(); }

  /// Exact state at time t from (w0, z0).
  ClosedLoopState at(double t, const Vec& w0, const Vec& z0) const {
    Vec x0(n_ + m_);
    x0.head(n_) = w0;
    x0.tail(m_) = z0 - m_mat_ * w0;
    const Mat e = (j_ * t).exp();
    const Vec x = x_star_ + e * (x0 - x_star_);
    return {x.head(n_), x.tail(m_) + m_mat_ * x.head(n_)};
  }

 private:
  Eigen::Index n_ = 0, m_ = 0;
  std::optional<double> rho_;
  Mat m_mat_, k_mat_, j_;
  Vec c_, x_star_;
  double abscissa_ = 0.0;
};

inline LinearOracle dense_linear_oracle(const Plant& plant, const Vec& d,
                                        const Vec& y_ref,
                                        std::optional<double> rho = std::nullopt) {
  return LinearOracle(plant, d, y_ref, rho);
}

// ---------------------------------------------------------------------------
// finite differences and ladders

struct FdRow {
  double eps = 0.0;
  double rel_error = 0.0;
};

struct FdTable {
  std::vector<FdRow> rows;
  std::vector<double> orders;  // between consecutive rows
};

/// Central differences of M against dM h; error relative to ‖dM h‖_Z.
inline FdTable fd_check_dM(const ForwardingMap& fmap, const Vec& w,
                           const Vec& h, const std::vector<double>& eps_ladder) {
  const Plant& p = fmap.plant();
  require_dim(w, p.H().dim(), "fd_check_dM.w");
  require_dim(h, p.H().dim(), "fd_check_dM.h");
  for (std::size_t i = 1; i < eps_ladder.size(); ++i) {
    if (!(eps_ladder[i] < eps_ladder[i - 1])) {
      throw UsageError("fd_check_dM: eps ladder must be decreasing");
    }
  }
  const Vec dmh = eval_dM(fmap, w, h);
  const double scale = p.Z().norm(dmh);
  FdTable t;
  for (const double eps : eps_ladder) {
    const Vec fd = (eval_M(fmap, Vec(w + eps * h)) -
                    eval_M(fmap, Vec(w - eps * h))) / (2.0 * eps);
    const double err = p.Z().norm(Vec(fd - dmh));
    double rel = 0.0;
    if (scale > 0.0) {
      rel = err / scale;
    } else if (err > 0.0) {
      rel = std::numeric_limits<double>::infinity();
    }
    t.rows.push_back({eps, rel});
  }
  for (std::size_t i = 1; i < t.rows.size(); ++i) {
    const auto& a = t.rows[i - 1];
    const auto& b = t.rows[i];
    if (a.rel_error > 0.0 && b.rel_error > 0.0) {
      t.orders.push_back(std::log(a.rel_error / b.rel_error) /
                         std::log(a.eps / b.eps));
    } else {
      t.orders.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return t;
}

/// |(dM h, ζ)_Z - (h, dM* ζ)_H| / (‖dM h‖ ‖ζ‖ + ‖h‖ ‖dM* ζ‖).
inline double duality_error(const ForwardingMap& fmap, const Vec& w,
                            const Vec& h, const Vec& zeta) {
  const Plant& p = fmap.plant();
  const auto lin = fmap.linearize(w);
  const Vec dmh = lin.apply(h);
  const Vec adj = lin.adjoint(zeta);
  const double lhs = p.Z().inner(dmh, zeta);
  const double rhs = p.H().inner(h, adj);
  const double scale =
      p.Z().norm(dmh) * p.Z().norm(zeta) + p.H().norm(h) * p.H().norm(adj);
  if (scale == 0.0) return 0.0;
  return std::abs(lhs - rhs) / scale;
}

struct RefinementTable {
  std::string parameter;
  std::vector<double> levels;
  std::vector<double> values;
  std::vector<double> orders;  // log(v_i / v_{i+1}) / log(l_i / l_{i+1})
};

inline RefinementTable refinement_ladder(
    const std::string& parameter, const std::vector<double>& levels,
    const std::function<double(double)>& residual) {
  if (levels.size() < 3) throw UsageError("refinement_ladder: need >= 3 levels");
  RefinementTable t;
  t.parameter = parameter;
  t.levels = levels;
  for (const double l : levels) t.values.push_back(residual(l));
  for (std::size_t i = 1; i < levels.size(); ++i) {
    const double v0 = t.values[i - 1], v1 = t.values[i];
    if (v0 > 0.0 && v1 > 0.0 && levels[i] != levels[i - 1]) {
      t.orders.push_back(std::log(v0 / v1) / std::log(levels[i - 1] / levels[i]));
    } else {
      t.orders.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Lyapunov dissipation

struct DissipationResult {
  double c = 0.0;           // smallest c with ΔV/dt ≤ -(α/2)‖w‖² - (ρ/2)‖u‖² + c dt
  double max_excess = 0.0;  // max of ΔV/dt + (α/2)‖w‖² + (ρ/2)‖u‖²
  std::size_t steps = 0;
  bool aborted = false;
};

inline DissipationResult dissipation_constant(const Plant& plant,
                                              const ForwardingMap& fmap,
                                              const SimulationResult& traj) {
  const Gains g = fmap.gains();
  DissipationResult r;
  r.aborted = traj.aborted;
  r.max_excess = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
    const double dv = (traj.V[k + 1] - traj.V[k]) / traj.dt;
    const double wn = traj.w_norm[k];
    const double un2 = plant.U().inner(traj.u[k], traj.u[k]);
    const double excess = dv + 0.5 * g.alpha * wn * wn + 0.5 * g.rho * un2;
    r.max_excess = std::max(r.max_excess, excess);
    ++r.steps;
  }
  r.c = std::max(0.0, r.max_excess) / traj.dt;
  return r;
}

/// c is "stable under halving" when both are negligible or c(dt/2) does not
/// grow by more than `growth` over c(dt).
inline bool dissipation_stable(double c_dt, double c_half, double floor = 1e-10,
                               double growth = 1.5) {
  if (!std::isfinite(c_dt) || !std::isfinite(c_half)) return false;
  if (c_dt <= floor && c_half <= floor) return true;
  return c_half <= growth * c_dt + floor;
}

// ---------------------------------------------------------------------------
// battery

struct CheckResult {
  std::optional<double> value;
  double bound = 0.0;
  bool pass = false;
  bool mandatory = true;
  std::string note;
};

struct VerificationReport {
  std::map<std::string, CheckResult> checks;
  std::map<std::string, RefinementTable> refinement;

  bool overall() const {
    for (const auto& [name, c] : checks) {
      if (c.mandatory && !c.pass) return false;
    }
    return true;
  }

  std::vector<std::string> failed() const {
    std::vector<std::string> out;
    for (const auto& [name, c] : checks) {
      if (c.mandatory && !c.pass) out.push_back(name);
    }
    return out;
  }
};

inline nlohmann::json to_json(const VerificationReport& rep) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  nlohmann::json j;
  nlohmann::json checks = nlohmann::json::object();
  for (const auto& [name, c] : rep.checks) {
    nlohmann::json e;
    e["value"] = c.value ? num(*c.value) : nlohmann::json(nullptr);
    e["bound"] = num(c.bound);
    e["pass"] = c.pass;
    e["mandatory"] = c.mandatory;
    if (!c.note.empty()) e["note"] = c.note;
    checks[name] = e;
  }
  j["checks"] = checks;
  nlohmann::json ref = nlohmann::json::object();
  for (const auto& [name, t] : rep.refinement) {
    nlohmann::json e;
    e["parameter"] = t.parameter;
    nlohmann::json lv = nlohmann::json::array(), va = nlohmann::json::array(),
                   od = nlohmann::json::array();
    for (double v : t.levels) lv.push_back(num(v));
    for (double v : t.values) va.push_back(num(v));
    for (double v : t.orders) od.push_back(num(v));
    e["levels"] = lv;
    e["values"] = va;
    e["orders"] = od;
    ref[name] = e;
  }
  j["refinement"] = ref;
  j["overall"] = rep.overall();
  j["failed"] = rep.failed();
  return j;
}

using StateSampler = std::function<Vec(std::mt19937_64&)>;

struct BatteryConfig {
  std::uint64_t seed = 1;
  // States for the sampled checks; defaults to the uniform ball of
  // sample_radius in H.
  StateSampler sampler;
  double sample_radius = 1.0;

  int monotonicity_samples = 200;
  double monotonicity_tol = 1e-9;

  int contraction_pairs = 3;
  double contraction_horizon_factor = 5.0;  // horizon = factor / α
  double contraction_dt = 0.01;
  double contraction_slack = 0.05;

  int fe_samples = 3;
  double fe_tol = 1e-3;
  double m_zero_tol = 1e-14;

  int duality_samples = 3;
  double duality_tol = 1e-9;
  double fd_eps = 1e-4;
  double fd_tol = 1e-3;

  int lyapunov_runs = 2;
  double lyapunov_horizon = 1.0;
  double lyapunov_dt = 0.01;
  double lyapunov_radius = 1.0;

  bool uniform_coercivity = false;
  int uniform_samples = 20;
  double uniform_radius = 1.0;

  bool global_convergence = false;
  int global_runs = 2;
  double global_radius = 10.0;
  double global_horizon = 100.0;
  double global_dt = 0.01;
  double global_ratio = 1e-2;  // final / initial deviation from the origin
};

namespace detail {

inline Vec draw(const BatteryConfig& cfg, const Plant& p, std::mt19937_64& rng) {
  if (cfg.sampler) return cfg.sampler(rng);
  return sample_ball(p.H(), cfg.sample_radius, rng);
}

inline CheckResult skipped(double bound, std::string why, bool mandatory = true) {
  CheckResult c;
  c.bound = bound;
  c.pass = false;
  c.mandatory = mandatory;
  c.note = std::move(why);
  return c;
}

}  // namespace detail

inline VerificationReport run_battery(const Plant& plant, const ForwardingMap& fmap,
                                      const BatteryConfig& cfg) {
  VerificationReport rep;
  std::mt19937_64 rng(cfg.seed);
  const Space& h = plant.H();
  const Space& zs = plant.Z();
  const auto alpha = plant.alpha_cert();
  const bool have_gains = fmap.feasible();

  // strong monotonicity, against the certificate
  {
    const auto est = estimate_alpha(plant, cfg.monotonicity_samples,
                                    cfg.sample_radius, rng(), cfg.monotonicity_tol);
    const auto lin = estimate_alpha_linearized(plant, cfg.monotonicity_samples,
                                               cfg.sample_radius, rng(),
                                               cfg.monotonicity_tol);
    CheckResult c;
    c.value = std::min(est.value, lin.value);
    if (alpha) {
      c.bound = *alpha;
      c.pass = *c.value >= *alpha * (1.0 - cfg.monotonicity_tol) - cfg.monotonicity_tol;
    } else {
      c.bound = std::numeric_limits<double>::quiet_NaN();
      c.pass = false;
      c.note = "no certified alpha for this plant";
      for (const auto& n : plant.notes()) c.note += "; " + n;
    }
    rep.checks["monotonicity"] = c;
  }

  // contraction and linearized decay over 5/α
  if (alpha) {
    double horizon = cfg.contraction_horizon_factor / *alpha;
    horizon = std::ceil(horizon / cfg.contraction_dt - 1e-9) * cfg.contraction_dt;
    double worst_c = 0.0, worst_l = 0.0;
    for (int i = 0; i < cfg.contraction_pairs; ++i) {
      const Vec w1 = detail::draw(cfg, plant, rng);
      const Vec w2 = detail::draw(cfg, plant, rng);
      const Vec dir = detail::draw(cfg, plant, rng);
      const auto cr = contraction_check(plant, w1, w2, horizon, cfg.contraction_dt,
                                        *alpha, cfg.contraction_slack);
      worst_c = std::max(worst_c, cr.max_ratio);
      const auto lr = linearized_decay_check(plant, w1, dir, horizon,
                                             cfg.contraction_dt, *alpha,
                                             cfg.contraction_slack);
      worst_l = std::max(worst_l, lr.max_ratio);
    }
    rep.checks["contraction"] = {worst_c, 1.0 + cfg.contraction_slack,
                                 worst_c <= 1.0 + cfg.contraction_slack, true, ""};
    rep.checks["linearized_decay"] = {worst_l, 1.0 + cfg.contraction_slack,
                                      worst_l <= 1.0 + cfg.contraction_slack, true, ""};
  } else {
    rep.checks["contraction"] =
        detail::skipped(1.0 + cfg.contraction_slack, "needs a certified alpha");
    rep.checks["linearized_decay"] =
        detail::skipped(1.0 + cfg.contraction_slack, "needs a certified alpha");
  }

  // M(0) = 0 and the functional equation
  {
    const double m0 = zs.norm(eval_M(fmap, Vec(Vec::Zero(h.dim()))));
    rep.checks["M_zero"] = {m0, cfg.m_zero_tol, m0 <= cfg.m_zero_tol, true, ""};
    double worst = 0.0;
    for (int i = 0; i < cfg.fe_samples; ++i) {
      worst = std::max(worst,
                       functional_equation_residual(fmap, detail::draw(cfg, plant, rng)));
    }
    rep.checks["functional_equation"] = {worst, cfg.fe_tol, worst <= cfg.fe_tol, true, ""};
  }

  // dM duality and finite differences
  {
    double worst_dual = 0.0, worst_fd = 0.0;
    for (int i = 0; i < cfg.duality_samples; ++i) {
      const Vec w = detail::draw(cfg, plant, rng);
      const Vec dir = detail::draw(cfg, plant, rng);
      Vec zeta(zs.dim());
      std::normal_distribution<double> nd;
      for (Eigen::Index j = 0; j < zeta.size(); ++j) zeta[j] = nd(rng);
      worst_dual = std::max(worst_dual, duality_error(fmap, w, dir, zeta));
      const auto fd = fd_check_dM(fmap, w, dir, {cfg.fd_eps});
      worst_fd = std::max(worst_fd, fd.rows.front().rel_error);
    }
    rep.checks["dM_duality"] = {worst_dual, cfg.duality_tol,
                                worst_dual <= cfg.duality_tol, true, ""};
    rep.checks["dM_finite_difference"] = {worst_fd, cfg.fd_tol,
                                          worst_fd <= cfg.fd_tol, true, ""};
  }

  // range condition
  {
    const double lam = fmap.lambda();
    CheckResult c{lam, 0.0, lam > 0.0, true, ""};
    if (!c.pass) c.note = "B* dM(0)* is not injective; C A^-1 B lacks full row rank";
    rep.checks["range_condition"] = c;
  }

  // Lyapunov dissipation at dt and dt/2
  if (have_gains) {
    double c_dt = 0.0, c_half = 0.0;
    bool aborted = false;
    for (int i = 0; i < cfg.lyapunov_runs; ++i) {
      Scenario sc = Scenario::zero(plant, cfg.lyapunov_horizon, cfg.lyapunov_dt);
      sc.w0 = detail::draw(cfg, plant, rng);
      sc.w0 *= cfg.lyapunov_radius / std::max(1e-300, h.norm(sc.w0));
      std::normal_distribution<double> nd;
      for (Eigen::Index j = 0; j < sc.z0.size(); ++j) sc.z0[j] = nd(rng);
      sc.z0 *= cfg.lyapunov_radius / std::max(1e-300, zs.norm(sc.z0));
      const auto r1 = dissipation_constant(plant, fmap, simulate(plant, fmap, sc));
      sc.dt = 0.5 * cfg.lyapunov_dt;
      const auto r2 = dissipation_constant(plant, fmap, simulate(plant, fmap, sc));
      c_dt = std::max(c_dt, r1.c);
      c_half = std::max(c_half, r2.c);
      aborted = aborted || r1.aborted || r2.aborted;
    }
    CheckResult c;
    c.value = c_half;
    c.bound = c_dt;
    c.pass = !aborted && dissipation_stable(c_dt, c_half);
    c.note = "value: c at dt/2, bound: c at dt";
    rep.checks["lyapunov_dissipation"] = c;
  } else {
    rep.checks["lyapunov_dissipation"] =
        detail::skipped(std::numeric_limits<double>::quiet_NaN(),
                        "gains unavailable (alpha uncertified or lambda = 0)");
  }

  if (cfg.uniform_coercivity) {
    if (fmap.lambda() > 0.0) {
      const auto u = uniform_coercivity_check(fmap, cfg.uniform_samples,
                                              cfg.uniform_radius, rng());
      rep.checks["uniform_coercivity"] = {u.min_sigma2, u.lambda_global, u.pass,
                                          false, ""};
    } else {
      rep.checks["uniform_coercivity"] =
          detail::skipped(0.0, "lambda = 0", false);
    }
  }

  if (cfg.global_convergence) {
    if (have_gains) {
      double worst = 0.0;
      bool aborted = false;
      for (int i = 0; i < cfg.global_runs; ++i) {
        Scenario sc = Scenario::zero(plant, cfg.global_horizon, cfg.global_dt);
        Vec w0 = detail::draw(cfg, plant, rng);
        const double nw = h.norm(w0);
        if (nw > 0.0) w0 *= cfg.global_radius / nw;
        sc.w0 = w0;
        const auto tr = simulate(plant, fmap, sc);
        aborted = aborted || tr.aborted;
        const double ratio = tr.w_norm.back() / std::max(1e-300, tr.w_norm.front());
        worst = std::max(worst, ratio);
      }
      rep.checks["global_convergence"] = {worst, cfg.global_ratio,
                                          !aborted && worst <= cfg.global_ratio,
                                          false, ""};
    } else {
      rep.checks["global_convergence"] =
          detail::skipped(cfg.global_ratio, "gains unavailable", false);
    }
  }
  return rep;
}

}  // namespace contreg
