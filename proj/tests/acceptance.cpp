// Acceptance run: one PASS/FAIL line per criterion, with the measured numbers
// and wall time. Exit status is nonzero if any criterion fails.

#include "contreg/cli.hpp"
#include "contreg/config.hpp"
#include "contreg/evolution.hpp"
#include "contreg/forwarding.hpp"
#include "contreg/plants.hpp"
#include "contreg/regulator.hpp"
#include "contreg/verify.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#ifndef CONTREG_CONFIG_DIR
#define CONTREG_CONFIG_DIR "configs"
#endif

using namespace contreg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void run(int id, const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = budget_s <= 0.0 || secs <= budget_s;
  const bool ok = o.pass && in_time;
  if (!ok) ++failures;
  std::ostringstream os;
  os << (ok ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail;
  os.precision(3);
  os << " (" << std::fixed << secs << " s";
  if (budget_s > 0.0) os << " of " << budget_s << " s";
  os << ")";
  std::cout << os.str() << std::endl;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Vec randn(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Vec v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

Vec unit(const Space& s, Vec v) { return v / s.norm(v); }

SineGordonParams sg_params() { return SineGordonParams{}; }  // ξ = 2, L = π, γ = 0.05, N = 200

WilsonCowanParams wc_params() { return WilsonCowanParams{}; }  // k ≡ 0.1, tanh, α = 0.05

// ---------------------------------------------------------------------------

Outcome linear_oracle() {
  const Plant p = make_linear_benchmark(20, 0.5, 42);
  const ForwardingMap f(p);
  std::mt19937_64 rng(101);

  // M against the dense -C A^{-1}
  const Mat dense_m = -Mat(p.C_matrix()) * Mat(p.A()).inverse();
  double m_err = 0.0;
  for (int i = 0; i < 10; ++i) {
    const Vec w = randn(20, rng);
    const Vec ref = dense_m * w;
    m_err = std::max(m_err, (eval_M(f, w) - ref).norm() / ref.norm());
  }

  // simulate against exp(J t)
  const Vec d = 0.01 * unit(p.H(), randn(20, rng));
  Vec y_ref(2);
  y_ref << 0.02, -0.01;
  const Vec w0 = unit(p.H(), randn(20, rng));
  const Vec z0 = 0.1 * randn(2, rng);
  const LinearOracle o(p, d, y_ref);
  const double horizon = 10.0;
  std::vector<double> errs;
  for (double dt : {1e-2, 5e-3, 2.5e-3}) {
    Scenario sc{d, y_ref, w0, z0, horizon, dt};
    const auto tr = simulate(p, f, sc);
    // sup-norm error over t = 0.1, 0.2, ..., T relative to the sup of the exact state
    const auto stride = static_cast<std::size_t>(std::llround(0.1 / dt));
    double e = 0.0, scale = 0.0;
    for (std::size_t k = stride; k < tr.size(); k += stride) {
      const auto ex = o.at(tr.times[k], w0, z0);
      e = std::max(e, std::sqrt((tr.w[k] - ex.w).squaredNorm() + (tr.z[k] - ex.z).squaredNorm()));
      scale = std::max(scale, std::sqrt(ex.w.squaredNorm() + ex.z.squaredNorm()));
    }
    e /= scale;
    errs.push_back(e);
  }
  const double ord1 = std::log2(errs[0] / errs[1]);
  const double ord2 = std::log2(errs[1] / errs[2]);

  EquilibriumOptions eo;
  eo.dt = 0.01;
  eo.stagnation_tol = 1e-13;
  const auto eq = find_equilibrium(p, f, d, y_ref, eo);
  const double eq_err = std::max((eq.w_star - o.w_star()).norm() / o.w_star().norm(),
                                 (eq.z_star - o.z_star()).norm() / o.z_star().norm());
  const double out_err = (Vec(p.C_matrix() * eq.w_star) - y_ref).norm();

  Outcome r;
  r.pass = m_err <= 1e-8 && ord1 >= 0.9 && ord2 >= 0.9 && eq.found && eq_err <= 1e-8 &&
           out_err <= 1e-8;
  r.detail = "M rel err " + sci(m_err) + "; sim err " + sci(errs[0]) + "/" + sci(errs[1]) + "/" +
             sci(errs[2]) + " orders " + sci(ord1) + ", " + sci(ord2) + "; equilibrium rel err " +
             sci(eq_err) + "; |Cw*-y_ref| " + sci(out_err);
  return r;
}

Outcome functional_equation() {
  const auto sp = sg_params();
  const Plant p = make_sine_gordon(sp);
  const double alpha = *p.alpha_cert();
  std::mt19937_64 rng(202);
  std::vector<Vec> states;
  for (int i = 0; i < 20; ++i) states.push_back(sine_gordon_smooth_state(sp, rng));

  auto residuals = [&](double dq, double tau) {
    ForwardingOptions o;
    o.dt_quad = dq;
    o.tau_max = tau;
    const ForwardingMap f(p, o);
    std::vector<double> r;
    for (const auto& w : states) r.push_back(functional_equation_residual(f, w));
    return r;
  };
  const double dq = 0.1, tau = 5.0 / alpha;
  const auto r0 = residuals(dq, tau);
  const auto r1 = residuals(dq / 2, tau + 2.0 / alpha);
  const auto r2 = residuals(dq / 4, tau + 4.0 / alpha);
  // aggregate residual = worst case over the 20 states
  auto worst = [](const std::vector<double>& v) { return *std::max_element(v.begin(), v.end()); };
  const double w0 = worst(r0), w1 = worst(r1), w2 = worst(r2);
  int below = 0;  // states whose own residual shrank by less than 1.7x on the first step
  double below_max = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (r0[i] / r1[i] < 1.7) {
      ++below;
      below_max = std::max(below_max, r0[i]);
    }
  }
  Outcome r;
  r.pass = w0 <= 1e-3 && w0 / w1 >= 1.7 && w1 / w2 >= 1.7;
  r.detail = "worst residual " + sci(w0) + " -> " + sci(w1) + " -> " + sci(w2) +
             " (dt_quad 0.1, 0.05, 0.025), decrease " + sci(w0 / w1) + "x, " + sci(w1 / w2) +
             "x; " + std::to_string(below) + " states below 1.7x individually, all with residual <= " +
             sci(below_max);
  return r;
}

struct Ratios {
  double contraction = 0.0;
  double decay = 0.0;
};

Ratios contraction_ratios(const Plant& p, double dt, const std::function<Vec()>& draw) {
  const double alpha = *p.alpha_cert();
  const double horizon = std::ceil(5.0 / alpha / dt - 1e-9) * dt;
  Ratios r;
  for (int i = 0; i < 10; ++i) {
    const Vec w1 = draw(), w2 = draw(), h = draw();
    r.contraction = std::max(r.contraction, contraction_check(p, w1, w2, horizon, dt, alpha).max_ratio);
    r.decay = std::max(r.decay, linearized_decay_check(p, w1, h, horizon, dt, alpha).max_ratio);
  }
  return r;
}

Outcome contraction() {
  const auto sp = sg_params();
  const Plant sg = make_sine_gordon(sp);
  std::mt19937_64 rng(303);
  const auto s = contraction_ratios(sg, 0.05, [&] { return sine_gordon_smooth_state(sp, rng); });
  const Plant wc = make_wilson_cowan(wc_params());
  const auto w = contraction_ratios(wc, 0.05, [&] { return sample_ball(wc.H(), 10.0, rng); });
  Outcome r;
  r.pass = s.contraction <= 1.05 && s.decay <= 1.05 && w.contraction <= 1.05 && w.decay <= 1.05;
  r.detail = "max ratio sine-Gordon " + sci(s.contraction) + " / linearized " + sci(s.decay) +
             "; Wilson-Cowan (radius 10) " + sci(w.contraction) + " / linearized " + sci(w.decay) +
             " (bound 1.05)";
  return r;
}

Outcome differentials() {
  std::mt19937_64 rng(404);
  const Plant sc = make_scalar_plant(2, 1, 1, 0.1);
  const ForwardingMap fs_(sc);
  double fd_scalar = 0.0, dual = 0.0;
  for (double w : {-1.5, 0.3, 1.0}) {
    const Vec wv = Vec::Constant(1, w), h = Vec::Constant(1, 0.7);
    fd_scalar = std::max(fd_scalar, fd_check_dM(fs_, wv, h, {1e-4}).rows[0].rel_error);
    dual = std::max(dual, duality_error(fs_, wv, h, Vec::Constant(1, -1.3)));
  }
  const auto sp = sg_params();
  const Plant sg = make_sine_gordon(sp);
  ForwardingOptions o;
  o.dt_quad = 0.1;
  const ForwardingMap fsg(sg, o);
  double fd_sg = 0.0;
  for (int i = 0; i < 3; ++i) {
    const Vec w = sine_gordon_smooth_state(sp, rng);
    const Vec h = sine_gordon_smooth_state(sp, rng);
    fd_sg = std::max(fd_sg, fd_check_dM(fsg, w, h, {1e-4}).rows[0].rel_error);
    dual = std::max(dual, duality_error(fsg, w, randn(sg.H().dim(), rng), randn(1, rng)));
  }
  Outcome r;
  r.pass = fd_scalar <= 1e-4 && fd_sg <= 1e-3 && dual <= 1e-9;
  r.detail = "FD rel err scalar " + sci(fd_scalar) + ", sine-Gordon " + sci(fd_sg) +
             "; duality " + sci(dual);
  return r;
}

struct DissipationRow {
  std::string plant;
  double c_dt = 0.0, c_half = 0.0;
  bool aborted = false;
};

DissipationRow dissipation_for(const std::string& name, const Plant& p, const ForwardingMap& f,
                               double horizon, double dt, const std::function<Vec()>& draw,
                               std::mt19937_64& rng) {
  DissipationRow row{name};
  for (int i = 0; i < 10; ++i) {
    Scenario sc = Scenario::zero(p, horizon, dt);
    sc.w0 = unit(p.H(), draw());
    sc.z0 = unit(p.Z(), randn(p.Z().dim(), rng));
    const auto a = dissipation_constant(p, f, simulate(p, f, sc));
    sc.dt = dt / 2;
    const auto b = dissipation_constant(p, f, simulate(p, f, sc));
    row.c_dt = std::max(row.c_dt, a.c);
    row.c_half = std::max(row.c_half, b.c);
    row.aborted = row.aborted || a.aborted || b.aborted;
  }
  return row;
}

Outcome lyapunov_dissipation() {
  std::mt19937_64 rng(505);
  std::vector<DissipationRow> rows;
  {
    const Plant p = make_linear_benchmark(20, 0.5, 42);
    const ForwardingMap f(p);
    rows.push_back(dissipation_for("linear", p, f, 5.0, 0.005,
                                   [&] { return randn(20, rng); }, rng));
  }
  {
    const auto sp = sg_params();
    const Plant p = make_sine_gordon(sp);
    ForwardingOptions o;
    o.dt_quad = 0.25;
    o.early_stop = true;
    const ForwardingMap f(p, o);
    rows.push_back(dissipation_for("sine-Gordon", p, f, 5.0, 0.025,
                                   [&] { return sine_gordon_smooth_state(sp, rng); }, rng));
  }
  {
    const Plant p = make_wilson_cowan(wc_params());
    ForwardingOptions o;
    o.dt_quad = 0.5;
    o.tail_tol = 1e-6;
    const ForwardingMap f(p, o);
    rows.push_back(dissipation_for("Wilson-Cowan", p, f, 0.1, 0.002,
                                   [&] { return sample_ball(p.H(), 1.0, rng); }, rng));
  }
  Outcome r;
  r.pass = true;
  for (const auto& row : rows) {
    const bool ok = !row.aborted && dissipation_stable(row.c_dt, row.c_half);
    r.pass = r.pass && ok;
    if (!r.detail.empty()) r.detail += "; ";
    r.detail += row.plant + " c(dt) " + sci(row.c_dt) + ", c(dt/2) " + sci(row.c_half);
  }
  return r;
}

Outcome sine_gordon_regulation() {
  const auto sp = sg_params();
  const Plant p = make_sine_gordon(sp);
  ForwardingOptions o;
  o.dt_quad = 0.25;
  o.early_stop = true;
  const ForwardingMap f(p, o);
  const Gains g = f.gains();
  std::mt19937_64 rng(606);
  Scenario sc = Scenario::zero(p, 1.0, 0.25);
  sc.d = 1e-2 * unit(p.H(), sine_gordon_smooth_state(sp, rng));
  sc.y_ref = Vec::Constant(1, 1e-2);
  sc.horizon = std::ceil(60.0 / g.kappa / sc.dt) * sc.dt;
  const auto tr = simulate(p, f, sc);
  EquilibriumOptions eo;
  eo.dt = 0.25;
  eo.stagnation_tol = 1e-12;
  const auto eq = find_equilibrium(p, f, sc.d, sc.y_ref, eo);
  const auto rep = convergence_report(tr, f, sc.y_ref, eq.w_star, eq.z_star, 1.0 / g.kappa);
  Outcome r;
  r.pass = !tr.aborted && eq.found && rep.averaged_output_error <= 1e-3 && rep.fitted_rate &&
           *rep.fitted_rate >= g.kappa / 2;
  r.detail = "T = " + sci(sc.horizon) + ", averaged error " + sci(rep.averaged_output_error) +
             ", final |y-y_ref| " + sci(rep.final_output_error) + ", fitted rate " +
             (rep.fitted_rate ? sci(*rep.fitted_rate) : std::string("n/a")) + " vs kappa/2 " +
             sci(g.kappa / 2);
  return r;
}

Outcome wilson_cowan_regulation() {
  const Plant p = make_wilson_cowan(wc_params());
  ForwardingOptions o;
  o.dt_quad = 2.5;
  o.tail_tol = 1e-6;
  const ForwardingMap f(p, o);
  std::mt19937_64 rng(707);
  const Vec d = 0.01 * unit(p.H(), Vec::Ones(p.H().dim()));
  const Vec y_ref = 0.01 * unit(p.Z(), Vec::Ones(p.Z().dim()));
  EquilibriumOptions eo;
  eo.dt = 0.004;
  eo.stagnation_tol = 1e-8;
  eo.max_time = 2000.0;

  // two initial conditions of norm 10; both must settle on the same w*
  std::vector<Equilibrium> eqs;
  for (int i = 0; i < 2; ++i) {
    const Vec w0 = 10.0 * unit(p.H(), randn(p.H().dim(), rng));
    const Vec z0 = Vec::Zero(p.Z().dim());
    eqs.push_back(find_equilibrium(p, f, d, y_ref, eo, ClosedLoopState{w0, z0}));
  }
  const double spread = p.H().norm(Vec(eqs[0].w_star - eqs[1].w_star));
  double out = 0.0;
  bool found = true;
  for (const auto& e : eqs) {
    out = std::max(out, e.output_residual);
    found = found && e.found;
  }
  const auto coer = uniform_coercivity_check(f, 50, 10.0, 708);
  Outcome r;
  r.pass = found && out <= 1e-4 && spread <= 1e-4 && coer.pass;
  r.detail = "equilibria found " + std::string(found ? "yes" : "no") + " at t = " +
             sci(eqs[0].time) + ", " + sci(eqs[1].time) + "; |Cw*-y_ref| " + sci(out) +
             "; |w*_1 - w*_2| " + sci(spread) + "; uniform coercivity min " +
             sci(coer.min_sigma2) + " vs lambda/3 " + sci(coer.lambda_global);
  return r;
}

Outcome gain_formulas() {
  const fs::path dir = fs::temp_directory_path() / "contreg_acceptance_gains";
  Outcome r;
  r.pass = true;
  for (const std::string cfg : {"scalar_gains", "linear_verify", "sine_gordon", "wilson_cowan"}) {
    CliContext ctx;
    ctx.cfg = load_config(std::string(CONTREG_CONFIG_DIR) + "/" + cfg + ".ini");
    ctx.out = dir / cfg;
    std::ostringstream log;
    ctx.log = &log;
    const int rc = cmd_gains(ctx);
    std::ifstream in(ctx.out / "gains.json");
    const auto j = nlohmann::json::parse(in);
    const double alpha = j["alpha"], b = j["b_norm"], lambda = j["lambda"];
    const double lt = lambda / 3.0;
    const bool exact = rc == kPass && j["lambda_tilde"].get<double>() == lt &&
                       j["kappa"].get<double>() == std::min(alpha / 4.0, lt / 4.0) &&
                       j["rho"].get<double>() == b * b * std::max(1.0, 2.0 / alpha);
    r.pass = r.pass && exact;
    if (!r.detail.empty()) r.detail += "; ";
    r.detail += cfg + (exact ? " exact" : " MISMATCH");
  }
  return r;
}

Outcome negative_controls() {
  const fs::path dir = fs::temp_directory_path() / "contreg_acceptance_negative";
  Outcome r;
  r.pass = true;
  for (const auto& [cfg, expect] : std::vector<std::pair<std::string, std::string>>{
           {"sine_gordon_negative", "monotonicity"}, {"rank_deficient", "range_condition"}}) {
    CliContext ctx;
    ctx.cfg = load_config(std::string(CONTREG_CONFIG_DIR) + "/" + cfg + ".ini");
    ctx.out = dir / cfg;
    std::ostringstream log;
    ctx.log = &log;
    const int rc = cmd_verify(ctx);
    std::ifstream in(ctx.out / "verify.json");
    const auto j = nlohmann::json::parse(in);
    const auto failed = j["failed"].get<std::vector<std::string>>();
    const bool named = std::find(failed.begin(), failed.end(), expect) != failed.end();
    r.pass = r.pass && rc == kVerifyFail && named;
    std::string list;
    for (const auto& s : failed) list += (list.empty() ? "" : ",") + s;
    if (!r.detail.empty()) r.detail += "; ";
    r.detail += cfg + " exit " + std::to_string(rc) + " failed {" + list + "}";
  }
  return r;
}

}  // namespace

int main() {
  std::cout << "contreg " << kVersion << " acceptance" << std::endl;
  run(1, "linear oracle equivalence", 10, linear_oracle);
  run(2, "functional equation on sine-Gordon", 120, functional_equation);
  run(3, "contraction and linearized decay", 120, contraction);
  run(4, "differential consistency", 0, differentials);
  run(5, "Lyapunov dissipation", 0, lyapunov_dissipation);
  run(6, "sine-Gordon regulation", 300, sine_gordon_regulation);
  run(7, "Wilson-Cowan global regulation", 180, wilson_cowan_regulation);
  run(8, "gain formulas via cmd_gains", 0, gain_formulas);
  run(9, "negative controls", 0, negative_controls);
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
