#pragma once

// The forwarding map of a semilinear plant and the controller constants
// derived from it.
//
//   M(w)    = -C ∫_0^∞ 𝒯_t w dt = -C A^{-1} w + C A^{-1} ∫_0^∞ F(𝒯_t w) dt
//   dM(w)h  = -C A^{-1} h + C A^{-1} ∫_0^∞ dF(𝒯_t w) v(t; w, h) dt
//
// (integrating dw/dt = -A w - F(w) over (0, ∞) gives ∫ 𝒯_t w = A⁻¹(w - ∫ F),
// hence the plus sign on the F-integral.)
//
// The integrals are truncated at a horizon τ and evaluated with the
// trapezoidal rule on the IMEX grid of step dt_quad. dM is the exact
// derivative of the discrete M, and dM* its exact Gram-weighted adjoint.

#include "contreg/evolution.hpp"
#include "contreg/space.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace contreg {

/// Raised when the range condition fails (λ = 0) or α is not certified.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ForwardingOptions {
  double dt_quad = 0.05;
  double tail_tol = 1e-8;
  double tau_ceiling = 1000.0;
  // Fixed truncation horizon; bypasses the tail-bound rule when set.
  std::optional<double> tau_max;
  // Stop the quadrature once lip_F ‖𝒯_τ w‖ ‖CA⁻¹‖ / α ≤ tail_tol.
  bool early_stop = false;
  // Decay rate used for the horizon when the plant carries no certificate.
  std::optional<double> alpha_fallback;
  int norm_iters = 200;
};

struct Gains {
  double alpha = 0.0;
  double b_norm = 0.0;
  double lambda = 0.0;
  double lambda_tilde = 0.0;
  double rho = 0.0;
  double kappa = 0.0;
};

/// ρ = ‖B‖² max{1, 2/α}, λ̃ = λ/3, κ = min{α/4, λ̃/4}.
inline Gains compute_gains(double alpha, double b_norm, double lambda) {
  if (!(alpha > 0.0)) throw InfeasibleError("alpha is not certified positive");
  if (!(lambda > 0.0)) {
    throw InfeasibleError("range condition fails: lambda = 0");
  }
  Gains g;
  g.alpha = alpha;
  g.b_norm = b_norm;
  g.lambda = lambda;
  g.rho = b_norm * b_norm * std::max(1.0, 2.0 / alpha);
  g.lambda_tilde = lambda / 3.0;
  g.kappa = std::min(alpha / 4.0, g.lambda_tilde / 4.0);
  return g;
}

class Linearization;

class ForwardingMap {
 public:
  ForwardingMap(Plant plant, ForwardingOptions options = {}) {
    if (!(options.dt_quad > 0.0)) throw UsageError("dt_quad must be positive");
    if (!(options.tail_tol > 0.0)) throw UsageError("tail_tol must be positive");
    auto impl = std::make_shared<Impl>(std::move(plant), options);
    const Plant& p = impl->plant;
    const Space h = p.H(), z = p.Z();

    // Row j of -C A^{-1} is -(A^{-T} C^T e_j)^T. Its Euclidean dual form
    // A^{-T} C^T G_Z is what the adjoint sweeps need.
    const Mat ct = Mat(p.C_matrix().transpose());
    impl->a_inv_t_ct.resize(h.dim(), z.dim());
    for (Eigen::Index j = 0; j < z.dim(); ++j) {
      impl->a_inv_t_ct.col(j) = p.solve_A_transpose(ct.col(j));
    }
    impl->m_lin_dense = -impl->a_inv_t_ct.transpose();
    impl->m_lin = LinMap::from_dense(h, z, impl->m_lin_dense);
    impl->m_lin_norm = operator_norm(*impl->m_lin, options.norm_iters).value;
    impl->b_norm = operator_norm(p.B(), options.norm_iters).value;
    impl->stepper.emplace(p.stepper(options.dt_quad));
    impl->lambda = compute_lambda(*impl);
    impl_ = std::move(impl);
  }

  const Plant& plant() const { return impl_->plant; }
  const ForwardingOptions& options() const { return impl_->options; }

  /// The linear part -C A^{-1} : H → Z.
  const LinMap& linear_map() const { return *impl_->m_lin; }
  const Mat& linear_matrix() const { return impl_->m_lin_dense; }
  double linear_norm() const { return impl_->m_lin_norm; }
  double b_norm() const { return impl_->b_norm; }

  /// λ = σ_min(z ↦ B* dM(0)* z)².
  double lambda() const { return impl_->lambda; }

  std::optional<double> alpha() const { return impl_->plant.alpha_cert(); }

  bool feasible() const { return alpha().has_value() && lambda() > 0.0; }

  Gains gains() const {
    if (!alpha()) throw InfeasibleError("alpha is not certified positive");
    return compute_gains(*alpha(), b_norm(), lambda());
  }

  double rho() const { return gains().rho; }
  double kappa() const { return gains().kappa; }

  /// Rate used to size the truncation horizon.
  std::optional<double> horizon_rate() const {
    if (alpha()) return alpha();
    return impl_->options.alpha_fallback;
  }

  /// Bound on the neglected tail: lip_F e^{-α τ} ‖w‖ ‖CA⁻¹‖ / α.
  std::optional<double> tail_bound(double w_norm, double tau) const {
    const auto rate = horizon_rate();
    const auto lip = plant().lip_f();
    if (!rate || !lip) return std::nullopt;
    return *lip * std::exp(-*rate * tau) * w_norm * linear_norm() / *rate;
  }

  /// Truncation horizon for the point w, rounded up to the quadrature grid.
  double horizon(const Vec& w) const {
    const auto& o = impl_->options;
    double tau;
    if (o.tau_max) {
      tau = *o.tau_max;
    } else if (const auto rate = horizon_rate()) {
      tau = 5.0 / *rate;
      if (const auto lip = plant().lip_f()) {
        const double arg = *lip * plant().H().norm(w) * linear_norm() /
                           (*rate * o.tail_tol);
        if (arg > 1.0) tau = std::max(tau, std::log(arg) / *rate);
      }
      tau = std::min(tau, o.tau_ceiling);
    } else {
      tau = o.tau_ceiling;
    }
    const double steps = std::ceil(tau / o.dt_quad - 1e-9);
    return std::max(1.0, steps) * o.dt_quad;
  }

  /// Whether the tail of the M-integral is certified below tail_tol.
  bool tail_certified() const {
    return plant().lip_f().has_value() && horizon_rate().has_value();
  }

  Linearization linearize(const Vec& w) const;

 private:
  struct Impl {
    Impl(Plant p, ForwardingOptions o) : plant(std::move(p)), options(o) {}
    Plant plant;
    ForwardingOptions options;
    Mat a_inv_t_ct;
    Mat m_lin_dense;
    std::optional<LinMap> m_lin;
    double m_lin_norm = 0.0;
    double b_norm = 0.0;
    double lambda = 0.0;
    std::optional<Stepper> stepper;
  };

  static double compute_lambda(const Impl& impl);

  std::shared_ptr<const Impl> impl_;
  friend class Linearization;
};

/// M, dM, and dM* at a fixed point w, sharing one base trajectory 𝒯_t w.
class Linearization {
 public:
  const Vec& point() const { return w_; }
  const Vec& value() const { return m_value_; }
  double horizon() const { return horizon_; }
  std::size_t quadrature_steps() const {
    return base_.empty() ? 0 : base_.size() - 1;
  }

  /// dM(w) h.
  Vec apply(const Vec& h) const {
    const Plant& p = fm_->plant;
    require_dim(h, p.H().dim(), "dM");
    Vec acc = h;
    if (!base_.empty()) {
      Vec v = h;
      const std::size_t n = base_.size() - 1;
      for (std::size_t k = 0; k <= n; ++k) {
        acc -= weight(k) * p.dF(base_[k], v);
        if (k < n) v = tangent_step(p, *fm_->stepper, base_[k], v);
      }
    }
    return -(p.C_matrix() * p.solve_A(acc));
  }

  /// Euclidean dual of dM(w)* ζ, i.e. -G_H dM(w)* ζ.
  Vec adjoint_dual(const Vec& zeta) const {
    const Plant& p = fm_->plant;
    require_dim(zeta, p.Z().dim(), "dM*");
    const Vec r = fm_->a_inv_t_ct * p.Z().apply_gram(zeta);
    if (base_.empty()) return r;
    const std::size_t n = base_.size() - 1;
    Vec acc = weight(n) * p.dF_transpose(base_[n], r);
    for (std::size_t k = n; k-- > 0;) {
      acc = tangent_step_transpose(p, *fm_->stepper, base_[k], acc);
      acc += weight(k) * p.dF_transpose(base_[k], r);
    }
    return r - acc;
  }

  /// dM(w)* ζ ∈ H.
  Vec adjoint(const Vec& zeta) const {
    return -fm_->plant.H().solve_gram(adjoint_dual(zeta));
  }

  /// B* dM(w)* ζ ∈ U.
  Vec adjoint_B(const Vec& zeta) const {
    const Plant& p = fm_->plant;
    const Vec d = adjoint_dual(zeta);
    return -p.U().solve_gram(Vec(p.B_matrix().transpose() * d));
  }

  /// The map z ↦ B* dM(w)* z assembled columnwise (dim U × dim Z).
  Mat gain_matrix() const {
    const Plant& p = fm_->plant;
    Mat g(p.U().dim(), p.Z().dim());
    Vec e = Vec::Zero(p.Z().dim());
    for (Eigen::Index j = 0; j < p.Z().dim(); ++j) {
      e[j] = 1.0;
      g.col(j) = adjoint_B(e);
      e[j] = 0.0;
    }
    return g;
  }

  LinMap gain_map() const {
    const Plant& p = fm_->plant;
    return LinMap::from_dense(p.Z(), p.U(), gain_matrix());
  }

 private:
  friend class ForwardingMap;
  Linearization() = default;

  double weight(std::size_t k) const {
    const double dt = fm_->options.dt_quad;
    return (k == 0 || k + 1 == base_.size()) ? 0.5 * dt : dt;
  }

  std::shared_ptr<const ForwardingMap::Impl> fm_;
  Vec w_;
  std::vector<Vec> base_;  // empty for linear plants
  Vec m_value_;
  double horizon_ = 0.0;
};

inline Linearization ForwardingMap::linearize(const Vec& w) const {
  const Plant& p = impl_->plant;
  require_dim(w, p.H().dim(), "linearize");
  Linearization lin;
  lin.fm_ = impl_;
  lin.w_ = w;
  if (p.is_linear()) {
    lin.m_value_ = impl_->m_lin_dense * w;
    return lin;
  }
  const auto& o = impl_->options;
  const double tau = horizon(w);
  const auto n = static_cast<std::size_t>(std::llround(tau / o.dt_quad));
  const Stepper& stepper = *impl_->stepper;

  std::optional<double> stop_scale;
  if (o.early_stop && tail_certified()) {
    stop_scale = *p.lip_f() * linear_norm() / *horizon_rate();
  }

  lin.base_.reserve(n + 1);
  lin.base_.push_back(w);
  for (std::size_t k = 0; k < n; ++k) {
    const Vec& cur = lin.base_.back();
    if (stop_scale && k > 0 && *stop_scale * p.H().norm(cur) <= o.tail_tol) {
      break;
    }
    lin.base_.push_back(step(p, stepper, cur, Vec::Zero(w.size())));
  }
  lin.horizon_ = static_cast<double>(lin.base_.size() - 1) * o.dt_quad;

  Vec acc = w;
  for (std::size_t k = 0; k < lin.base_.size(); ++k) {
    acc -= lin.weight(k) * p.F(lin.base_[k]);
  }
  lin.m_value_ = -(p.C_matrix() * p.solve_A(acc));
  return lin;
}

inline double ForwardingMap::compute_lambda(const Impl& impl) {
  // dM(0) = -C A^{-1} since dF(0) = 0 and 𝒯_t 0 = 0.
  const Plant& p = impl.plant;
  const Mat gd = -(Mat(p.B_matrix().transpose()) *
                   (impl.a_inv_t_ct * Mat(p.Z().gram())));
  const Mat g0 = p.U().solve_gram(gd);
  const double s = smallest_singular_value(LinMap::from_dense(p.Z(), p.U(), g0));
  return s * s;
}

inline Vec eval_M(const ForwardingMap& fmap, const Vec& w) {
  return fmap.linearize(w).value();
}

inline Vec eval_dM(const ForwardingMap& fmap, const Vec& w, const Vec& h) {
  return fmap.linearize(w).apply(h);
}

inline Vec eval_dM_adjoint(const ForwardingMap& fmap, const Vec& w,
                           const Vec& zeta) {
  return fmap.linearize(w).adjoint(zeta);
}

inline Vec eval_dM_adjoint_B(const ForwardingMap& fmap, const Vec& w,
                             const Vec& zeta) {
  return fmap.linearize(w).adjoint_B(zeta);
}

inline LinMap linear_forwarding(const Plant& plant) {
  const Space h = plant.H(), z = plant.Z();
  return LinMap::matrix_free(
      h, z,
      [plant](const Vec& w) -> Vec {
        return -(plant.C_matrix() * plant.solve_A(w));
      },
      [plant](const Vec& zeta) -> Vec {
        const Vec r = plant.solve_A_transpose(
            Vec(plant.C_matrix().transpose() * plant.Z().apply_gram(zeta)));
        return -plant.H().solve_gram(r);
      });
}

inline double coercivity_lambda(const ForwardingMap& fmap) {
  return fmap.lambda();
}

inline Gains gains(const ForwardingMap& fmap) { return fmap.gains(); }

struct CoercivityReport {
  double min_sigma2 = std::numeric_limits<double>::infinity();
  double lambda_global = 0.0;
  int samples = 0;
  bool pass = false;
};

/// min over sampled w with ‖w‖ ≤ radius of σ_min(B* dM(w)*)², compared with
/// lambda_global (defaults to λ̃ = λ/3).
inline CoercivityReport uniform_coercivity_check(
    const ForwardingMap& fmap, int n_samples, double radius,
    std::uint64_t seed, std::optional<double> lambda_global = std::nullopt) {
  if (n_samples < 1) throw UsageError("uniform_coercivity_check: n_samples >= 1");
  CoercivityReport rep;
  rep.lambda_global = lambda_global.value_or(fmap.lambda() / 3.0);
  std::mt19937_64 rng(seed);
  const Plant& p = fmap.plant();
  for (int i = 0; i < n_samples; ++i) {
    const Vec w = radius > 0.0 ? sample_ball(p.H(), radius, rng)
                               : Vec(Vec::Zero(p.H().dim()));
    const double s = smallest_singular_value(fmap.linearize(w).gain_map());
    rep.min_sigma2 = std::min(rep.min_sigma2, s * s);
    ++rep.samples;
  }
  rep.pass = rep.lambda_global > 0.0 && rep.min_sigma2 >= rep.lambda_global;
  return rep;
}

/// ‖dM(w) 𝒜(w) + C w‖_Z / (‖C w‖_Z + ‖𝒜(w)‖_H + floor).
inline double functional_equation_residual(const ForwardingMap& fmap,
                                           const Vec& w,
                                           double floor = 1e-12) {
  const Plant& p = fmap.plant();
  const Vec aw = apply_nonlinear_A(p, w);
  const Vec cw = p.C_matrix() * w;
  const Vec r = fmap.linearize(w).apply(aw) + cw;
  return p.Z().norm(r) / (p.Z().norm(cw) + p.H().norm(aw) + floor);
}

}  // namespace contreg
