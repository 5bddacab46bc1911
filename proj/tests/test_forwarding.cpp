// forwarding map, gains, closed loop

#include "contreg/forwarding.hpp"
#include "contreg/plants.hpp"
#include "contreg/regulator.hpp"
#include "contreg/verify.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace contreg;

namespace {

Vec randn(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Vec v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

Vec scalar(double v) { return Vec::Constant(1, v); }

// -C ∫_0^T 𝒯_t w dt for dw/dt = -a w - k w³, with the integral carried as a
// second RK4 state; shares nothing with the IMEX machinery
double brute_force_M(double a, double k, double c, double w, double dt, double horizon) {
  auto rhs = [a, k](double x) { return -a * x - k * x * x * x; };
  const auto n = static_cast<long>(std::llround(horizon / dt));
  double x = w, q = 0.0;
  for (long i = 0; i < n; ++i) {
    const double k1 = rhs(x), k2 = rhs(x + 0.5 * dt * k1);
    const double k3 = rhs(x + 0.5 * dt * k2), k4 = rhs(x + dt * k3);
    q += dt / 6 * (x + 2 * (x + 0.5 * dt * k1) + 2 * (x + 0.5 * dt * k2) + (x + dt * k3));
    x += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return -c * q;
}

}  // namespace

// --- linear part ---------------------------------------------------------

TEST(Forwarding, LinearScalar) {
  const ForwardingMap f(make_scalar_plant(2, 1, 1));
  EXPECT_DOUBLE_EQ(f.linear_matrix()(0, 0), -0.5);
  EXPECT_EQ(f.linear_map().apply(scalar(0))[0], 0.0);
  EXPECT_EQ(eval_M(f, scalar(0))[0], 0.0);
  EXPECT_DOUBLE_EQ(eval_M(f, scalar(3))[0], -1.5);
}

TEST(Forwarding, LinearRoundTrip) {
  std::mt19937_64 rng(1);
  Mat r = Mat::Random(5, 5);
  const Mat a = Mat::Identity(5, 5) * 3.0 + 0.5 * (r - r.transpose());
  const Mat c = Mat::Random(2, 5);
  const Plant p = make_linear_plant(a, Mat::Random(5, 2), c, 3.0);
  const Vec w = randn(5, rng);
  EXPECT_LT((Vec(p.C_matrix() * p.solve_A(p.apply_A(w))) - c * w).norm(), 1e-10 * w.norm());

  const Plant lb = make_linear_benchmark(20, 0.5, 42);
  const ForwardingMap f(lb);
  const Vec x = randn(20, rng);
  const Vec ref = -Mat(lb.C_matrix()) * Mat(lb.A()).inverse() * x;
  EXPECT_LT((eval_M(f, x) - ref).norm(), 1e-10 * ref.norm());
  const Vec h = randn(20, rng);
  EXPECT_LT((eval_dM(f, x, h) - (-Mat(lb.C_matrix()) * Mat(lb.A()).inverse() * h)).norm(),
            1e-10 * h.norm());
}

// --- semilinear ----------------------------------------------------------

TEST(Forwarding, ScalarCubicMatchesBruteForce) {
  const Plant p = make_scalar_plant(2, 1, 1, 0.1);
  ForwardingOptions o;
  o.dt_quad = 5e-4;
  o.tau_max = 5.0;
  const ForwardingMap f(p, o);
  const double m = eval_M(f, scalar(1))[0];
  const double ref = brute_force_M(2, 0.1, 1, 1.0, o.dt_quad / 10, 2 * *o.tau_max);
  EXPECT_LT(std::abs(m - ref) / std::abs(ref), 1e-5) << m << " vs " << ref;
}

TEST(Forwarding, DifferentialAtZeroAndLinearity) {
  const auto sp = [] {
    SineGordonParams q;
    q.n = 60;
    return q;
  }();
  const Plant sg = make_sine_gordon(sp);
  ForwardingOptions o;
  o.dt_quad = 0.25;
  const ForwardingMap f(sg, o);
  std::mt19937_64 rng(2);
  const Vec h = randn(sg.H().dim(), rng);
  const Vec zero = Vec::Zero(sg.H().dim());
  EXPECT_LT((eval_dM(f, zero, h) - linear_forwarding(sg).apply(h)).norm(), 1e-12 * h.norm());
  EXPECT_EQ(eval_dM(f, sine_gordon_smooth_state(sp, rng), zero).norm(), 0.0);

  const Vec zeta = randn(1, rng);
  const Vec ref = sg.B().apply_adjoint(linear_forwarding(sg).apply_adjoint(zeta));
  EXPECT_LT((eval_dM_adjoint_B(f, zero, zeta) - ref).norm(), 1e-10 * ref.norm());
  EXPECT_EQ(eval_dM_adjoint(f, sine_gordon_smooth_state(sp, rng), Vec::Zero(1)).norm(), 0.0);
}

TEST(Forwarding, FiniteDifferenceScalar) {
  const Plant p = make_scalar_plant(2, 1, 1, 0.1);
  const ForwardingMap f(p);
  const auto t = fd_check_dM(f, scalar(1.0), scalar(1.0), {1e-2, 1e-3, 1e-4});
  EXPECT_LE(t.rows.back().rel_error, 1e-4);
  EXPECT_LT(t.rows[1].rel_error, t.rows[0].rel_error);
}

TEST(Forwarding, DualitySineGordon) {
  SineGordonParams sp;  // N = 200
  const Plant sg = make_sine_gordon(sp);
  ForwardingOptions o;
  o.dt_quad = 0.25;
  const ForwardingMap f(sg, o);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 3; ++i) {
    const Vec w = sine_gordon_smooth_state(sp, rng);
    EXPECT_LE(duality_error(f, w, randn(sg.H().dim(), rng), randn(1, rng)), 1e-9);
  }
}

// --- constants -----------------------------------------------------------

TEST(Gains, ScalarHandValues) {
  const ForwardingMap f(make_scalar_plant(2, 1, 1));
  EXPECT_DOUBLE_EQ(f.lambda(), 0.25);
  const Gains g = f.gains();
  EXPECT_DOUBLE_EQ(g.rho, 1.0);
  EXPECT_DOUBLE_EQ(g.lambda_tilde, 1.0 / 12);
  EXPECT_DOUBLE_EQ(g.kappa, 1.0 / 48);
}

TEST(Gains, Formulas) {
  const Gains g = compute_gains(0.5, 1.0, 0.25);
  EXPECT_DOUBLE_EQ(g.rho, 4.0);
  EXPECT_DOUBLE_EQ(g.lambda_tilde, 1.0 / 12);
  EXPECT_DOUBLE_EQ(g.kappa, 1.0 / 48);
  EXPECT_THROW(compute_gains(0.5, 1.0, 0.0), InfeasibleError);
  EXPECT_THROW(compute_gains(0.0, 1.0, 0.25), InfeasibleError);
}

TEST(Gains, RankDeficientIsInfeasible) {
  LinearBenchmarkOptions o;
  o.rank_deficient = true;
  const ForwardingMap f(make_linear_benchmark(20, 0.5, 42, o));
  EXPECT_EQ(f.lambda(), 0.0);
  EXPECT_FALSE(f.feasible());
  EXPECT_THROW(f.gains(), InfeasibleError);
}

TEST(Gains, WilsonCowanRangeCondition) {
  const ForwardingMap f(make_wilson_cowan(WilsonCowanParams{}));
  EXPECT_GT(f.lambda(), 0.0);
}

TEST(Coercivity, UniformCheck) {
  const ForwardingMap f(make_scalar_plant(2, 1, 1, 0.1));
  const auto r0 = uniform_coercivity_check(f, 3, 0.0, 1);
  EXPECT_NEAR(r0.min_sigma2, f.lambda(), 1e-15);

  const ForwardingMap lin(make_linear_benchmark(20, 0.5, 42));
  const auto a = uniform_coercivity_check(lin, 3, 0.0, 1);
  const auto b = uniform_coercivity_check(lin, 5, 10.0, 2);
  EXPECT_NEAR(a.min_sigma2, b.min_sigma2, 1e-12 * a.min_sigma2);

  WilsonCowanParams wp;  // α = 0.05 > 2 M_ks = 0.02
  ForwardingOptions o;
  o.dt_quad = 0.5;
  o.tail_tol = 1e-6;
  const ForwardingMap wc(make_wilson_cowan(wp), o);
  EXPECT_TRUE(uniform_coercivity_check(wc, 5, 1.0, 3).pass);
}

TEST(FunctionalEquation, Residual) {
  const ForwardingMap lin(make_linear_benchmark(20, 0.5, 42));
  std::mt19937_64 rng(4);
  EXPECT_EQ(functional_equation_residual(lin, Vec::Zero(20)), 0.0);
  EXPECT_LE(functional_equation_residual(lin, randn(20, rng)), 1e-8);

  SineGordonParams sp;
  ForwardingOptions o;
  o.dt_quad = 0.1;
  const ForwardingMap sg(make_sine_gordon(sp), o);
  EXPECT_LE(functional_equation_residual(sg, sine_gordon_smooth_state(sp, rng)), 1e-3);
}

// --- closed loop ---------------------------------------------------------

TEST(Regulator, Feedback) {
  const Plant p = make_scalar_plant(2, 1, 1);
  const ForwardingMap f(p);
  EXPECT_DOUBLE_EQ(feedback(f, {scalar(1), scalar(0)})[0], -0.25);
  EXPECT_EQ(feedback(f, {scalar(1), eval_M(f, scalar(1))})[0], 0.0);
  EXPECT_DOUBLE_EQ(feedback(f, {scalar(0), scalar(2)})[0], -1.0);

  const Plant lb = make_linear_benchmark(20, 0.5, 42);
  const ForwardingMap fl(lb);
  std::mt19937_64 rng(5);
  const Vec zeta = randn(2, rng);
  const Vec ref = lb.B().apply_adjoint(linear_forwarding(lb).apply_adjoint(zeta));
  EXPECT_LT((feedback(fl, {Vec::Zero(20), zeta}) - ref).norm(), 1e-12 * ref.norm());
}

TEST(Regulator, Lyapunov) {
  const ForwardingMap f(make_scalar_plant(2, 1, 1));
  EXPECT_EQ(lyapunov(f, {scalar(0), scalar(0)}), 0.0);
  EXPECT_DOUBLE_EQ(lyapunov(f, {scalar(1), scalar(0)}, 4.0), 1.0);
  std::mt19937_64 rng(6);
  for (int i = 0; i < 5; ++i) {
    const Vec w = randn(1, rng);
    EXPECT_GE(lyapunov(f, {w, randn(1, rng)}), 0.5 * w.squaredNorm());
  }
}

TEST(Regulator, ZeroScenarioStaysZero) {
  const Plant p = make_linear_benchmark(20, 0.5, 42);
  const ForwardingMap f(p);
  const auto r = simulate(p, f, Scenario::zero(p, 1.0, 0.01));
  ASSERT_EQ(r.size(), 101u);
  for (std::size_t k = 0; k < r.size(); ++k) {
    EXPECT_EQ(r.w[k].norm() + r.z[k].norm() + r.u[k].norm(), 0.0);
  }
}

TEST(Regulator, LyapunovNonincreasing) {
  const Plant p = make_linear_benchmark(20, 0.5, 42);
  const ForwardingMap f(p);
  std::mt19937_64 rng(7);
  Scenario sc = Scenario::zero(p, 5.0, 0.005);
  sc.w0 = 0.1 * randn(20, rng);
  sc.z0 = 0.1 * randn(2, rng);
  const auto r = simulate(p, f, sc);
  for (std::size_t k = 1; k < r.size(); ++k) {
    EXPECT_LE(r.V[k], r.V[k - 1] + 1e-12);
  }
}

TEST(Regulator, ScalarTracksReference) {
  const Plant p = make_scalar_plant(2, 1, 1);
  const ForwardingMap f(p);
  Scenario sc = Scenario::zero(p, 40.0 / f.kappa(), 0.01);
  sc.d = scalar(0.01);
  sc.y_ref = scalar(0.02);
  const auto r = simulate(p, f, sc);
  EXPECT_FALSE(r.aborted);
  EXPECT_LE(std::abs(r.y.back()[0] - 0.02), 1e-6);
}

TEST(Regulator, Equilibrium) {
  const Plant p = make_scalar_plant(2, 1, 1);
  const ForwardingMap f(p);
  const auto e0 = find_equilibrium(p, f, scalar(0), scalar(0));
  EXPECT_TRUE(e0.found);
  EXPECT_LE(e0.w_star.norm() + e0.z_star.norm(), 1e-10);
  EXPECT_LE(e0.dynamics_residual + e0.output_residual, 1e-10);

  const auto e = find_equilibrium(p, f, scalar(0.01), scalar(0.02));
  const LinearOracle o(p, scalar(0.01), scalar(0.02));
  EXPECT_TRUE(e.found);
  EXPECT_NEAR(e.w_star[0], o.w_star()[0], 1e-8);
  EXPECT_NEAR(e.z_star[0], o.z_star()[0], 1e-8);
}

TEST(Regulator, ConvergenceReportConstant) {
  const Plant p = make_scalar_plant(2, 1, 1);
  const ForwardingMap f(p);
  const auto e = find_equilibrium(p, f, scalar(0.01), scalar(0.02));
  Scenario sc = Scenario::zero(p, 5.0, 0.01);
  sc.d = scalar(0.01);
  sc.y_ref = scalar(0.02);
  sc.w0 = e.w_star;
  sc.z0 = e.z_star;
  const auto tr = simulate(p, f, sc);
  const auto rep = convergence_report(tr, f, sc.y_ref, e.w_star, e.z_star, 1.0);
  EXPECT_LE(rep.averaged_output_error, 1e-24);
  EXPECT_FALSE(rep.fitted_rate.has_value());
}

TEST(Regulator, FittedRateMatchesAbscissa) {
  const Plant p = make_scalar_plant(2, 1, 1);
  const ForwardingMap f(p);
  const LinearOracle o(p, scalar(0), scalar(0));
  Scenario sc = Scenario::zero(p, 60.0, 0.001);
  sc.z0 = scalar(1.0);
  const auto tr = simulate(p, f, sc);
  const auto rep = convergence_report(tr, f, sc.y_ref, Vec::Zero(1), Vec::Zero(1), 1.0);
  ASSERT_TRUE(rep.fitted_rate.has_value());
  EXPECT_NEAR(*rep.fitted_rate, -o.spectral_abscissa(), 0.1 * std::abs(o.spectral_abscissa()));
  EXPECT_GE(*rep.fitted_rate, f.kappa() / 2);
}
