#pragma once

// Semilinear plants dw/dt + A w + F(w) = f(t) and their first-order IMEX
// time stepping: implicit Euler in A, explicit in F.
//
//   (I + dt A) w_{k+1} = w_k + dt (f_k - F(w_k))
//
// The tangent stepper is the exact derivative of this map and the adjoint
// stepper its exact Gram-weighted transpose.

#include "contreg/space.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace contreg {

/// The nonlinear part F of 𝒜 = A + F with its Jacobian actions.
/// `vjp` is the plain (Euclidean) transpose action dF(w)^T p.
struct Nonlinearity {
  std::function<Vec(const Vec&)> value;
  std::function<Vec(const Vec&, const Vec&)> jvp;
  std::function<Vec(const Vec&, const Vec&)> vjp;
};

/// Aggregate used to build a Plant. Matrices act on coordinate vectors.
struct PlantData {
  std::string name = "plant";
  Space space_h = Space::euclidean(1, SpaceLabel::H);
  Space space_u = Space::euclidean(1, SpaceLabel::U);
  Space space_z = Space::euclidean(1, SpaceLabel::Z);
  SpMat a;
  std::optional<Nonlinearity> f;  // empty means F = 0
  SpMat b;                        // H <- U
  SpMat c;                        // Z <- H
  std::optional<double> alpha_cert;
  std::optional<double> lip_f;
  std::optional<double> lip_df;
  std::vector<std::string> notes;
};

class Stepper;

/// The discretized open-loop system. Immutable; copies share state.
class Plant {
 public:
  explicit Plant(PlantData data) {
    const auto n = data.space_h.dim();
    if (data.a.rows() != n || data.a.cols() != n) {
      throw ConfigurationError("Plant: A must be dim(H) x dim(H)");
    }
    if (data.b.rows() != n || data.b.cols() != data.space_u.dim()) {
      throw ConfigurationError("Plant: B must be dim(H) x dim(U)");
    }
    if (data.c.rows() != data.space_z.dim() || data.c.cols() != n) {
      throw ConfigurationError("Plant: C must be dim(Z) x dim(H)");
    }
    if (data.alpha_cert && !(*data.alpha_cert > 0.0)) {
      throw ConfigurationError("Plant: alpha_cert must be positive");
    }
    auto impl = std::make_shared<Impl>(std::move(data));
    impl->data.a.makeCompressed();
    impl->a_lu.compute(impl->data.a);
    if (impl->a_lu.info() != Eigen::Success) {
      throw NumericalError("Plant: A is singular (0 is not in its resolvent set)");
    }
    SpMat at = impl->data.a.transpose();
    at.makeCompressed();
    impl->at_lu.compute(at);
    impl->b_map = LinMap::from_matrix(impl->data.space_u, impl->data.space_h,
                                      impl->data.b);
    impl->c_map = LinMap::from_matrix(impl->data.space_h, impl->data.space_z,
                                      impl->data.c);
    impl_ = std::move(impl);
  }

  const std::string& name() const { return impl_->data.name; }
  const Space& H() const { return impl_->data.space_h; }
  const Space& U() const { return impl_->data.space_u; }
  const Space& Z() const { return impl_->data.space_z; }
  const SpMat& A() const { return impl_->data.a; }
  const SpMat& B_matrix() const { return impl_->data.b; }
  const SpMat& C_matrix() const { return impl_->data.c; }
  const LinMap& B() const { return *impl_->b_map; }
  const LinMap& C() const { return *impl_->c_map; }
  std::optional<double> alpha_cert() const { return impl_->data.alpha_cert; }
  std::optional<double> lip_f() const { return impl_->data.lip_f; }
  std::optional<double> lip_df() const { return impl_->data.lip_df; }
  bool is_linear() const { return !impl_->data.f.has_value(); }
  const std::vector<std::string>& notes() const { return impl_->data.notes; }

  LinMap A_map() const { return LinMap::from_matrix(H(), H(), A()); }

  Vec apply_A(const Vec& w) const {
    require_dim(w, H().dim(), "apply_A");
    return A() * w;
  }

  Vec solve_A(const Vec& b) const {
    require_dim(b, H().dim(), "solve_A");
    Vec x = impl_->a_lu.solve(b);
    if (impl_->a_lu.info() != Eigen::Success || !x.allFinite()) {
      throw NumericalError("solve_A failed");
    }
    return x;
  }

  /// Solves A^T x = b (plain transpose).
  Vec solve_A_transpose(const Vec& b) const {
    require_dim(b, H().dim(), "solve_A_transpose");
    return impl_->at_lu.solve(b);
  }

  Vec F(const Vec& w) const {
    if (is_linear()) return Vec::Zero(w.size());
    return impl_->data.f->value(w);
  }

  Vec dF(const Vec& w, const Vec& h) const {
    if (is_linear()) return Vec::Zero(h.size());
    return impl_->data.f->jvp(w, h);
  }

  Vec dF_transpose(const Vec& w, const Vec& p) const {
    if (is_linear()) return Vec::Zero(p.size());
    return impl_->data.f->vjp(w, p);
  }

  /// dF(w) as a map on H, with the Gram-weighted adjoint.
  LinMap dF_map(const Vec& w) const {
    const Space h = H();
    const Plant self = *this;
    return LinMap::matrix_free(
        h, h, [self, w](const Vec& v) { return self.dF(w, v); },
        [self, w, h](const Vec& y) {
          return h.solve_gram(self.dF_transpose(w, h.apply_gram(y)));
        });
  }

  Stepper stepper(double dt) const;

 private:
  struct Impl {
    explicit Impl(PlantData d) : data(std::move(d)) {}
    PlantData data;
    Eigen::SparseLU<SpMat> a_lu;
    Eigen::SparseLU<SpMat> at_lu;
    std::optional<LinMap> b_map;
    std::optional<LinMap> c_map;
  };
  std::shared_ptr<const Impl> impl_;
};

/// Factorizations of (I + dt A) and its transpose for a fixed dt.
class Stepper {
 public:
  Stepper(const Plant& plant, double dt) : dt_(dt) {
    if (!(dt > 0.0)) throw UsageError("Stepper: dt must be positive");
    auto f = std::make_shared<Factors>();
    SpMat id(plant.H().dim(), plant.H().dim());
    id.setIdentity();
    SpMat m = id + dt * plant.A();
    m.makeCompressed();
    f->lu.compute(m);
    if (f->lu.info() != Eigen::Success) {
      throw NumericalError("Stepper: I + dt A is singular");
    }
    SpMat mt = m.transpose();
    mt.makeCompressed();
    f->lu_t.compute(mt);
    if (f->lu_t.info() != Eigen::Success) {
      throw NumericalError("Stepper: (I + dt A)^T is singular");
    }
    factors_ = std::move(f);
  }

  double dt() const { return dt_; }

  Vec solve(const Vec& b) const {
    Vec x = factors_->lu.solve(b);
    if (!x.allFinite()) {
      throw NumericalError("Stepper: non-finite solution of (I + dt A) x = b");
    }
    return x;
  }

  Vec solve_transpose(const Vec& b) const { return factors_->lu_t.solve(b); }

 private:
  struct Factors {
    Eigen::SparseLU<SpMat> lu;
    Eigen::SparseLU<SpMat> lu_t;
  };
  double dt_;
  std::shared_ptr<const Factors> factors_;
};

inline Stepper Plant::stepper(double dt) const { return Stepper(*this, dt); }

/// Time-indexed record t_k = k dt of H-vectors.
struct Trajectory {
  double dt = 0.0;
  std::vector<double> times;
  std::vector<Vec> states;

  std::size_t size() const { return states.size(); }
  const Vec& back() const { return states.back(); }
};

using Forcing = std::function<Vec(double)>;

inline Forcing constant_forcing(Vec f) {
  return [f = std::move(f)](double) { return f; };
}

inline Vec apply_nonlinear_A(const Plant& plant, const Vec& w) {
  return plant.apply_A(w) + plant.F(w);
}

/// Checks the explicit-F stability guard dt * lip_F < 1. Returns false when
/// lip_F is unknown so the caller can warn.
inline bool stability_guard(const Plant& plant, double dt) {
  if (!plant.lip_f()) {
    return false;
  }
  if (dt * *plant.lip_f() >= 1.0) {
    throw UsageError("step: dt * lip_F >= 1 violates the explicit stability guard");
  }
  return true;
}

/// One IMEX step with a prefactored stepper.
inline Vec step(const Plant& plant, const Stepper& stepper, const Vec& w,
                const Vec& f) {
  return stepper.solve(w + stepper.dt() * (f - plant.F(w)));
}

inline Vec step(const Plant& plant, const Vec& w, const Vec& f, double dt) {
  require_dim(w, plant.H().dim(), "step");
  require_dim(f, plant.H().dim(), "step");
  stability_guard(plant, dt);
  return step(plant, plant.stepper(dt), w, f);
}

inline std::size_t step_count(double horizon, double dt) {
  if (!(horizon > 0.0) || !(dt > 0.0)) {
    throw UsageError("flow: T and dt must be positive");
  }
  const double ratio = horizon / dt;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio)) {
    throw UsageError("flow: dt must divide T");
  }
  return static_cast<std::size_t>(rounded);
}

inline Trajectory flow(const Plant& plant, const Stepper& stepper,
                       const Vec& w0, const Forcing& forcing,
                       std::size_t n_steps) {
  require_dim(w0, plant.H().dim(), "flow");
  Trajectory traj;
  traj.dt = stepper.dt();
  traj.times.reserve(n_steps + 1);
  traj.states.reserve(n_steps + 1);
  traj.times.push_back(0.0);
  traj.states.push_back(w0);
  for (std::size_t k = 0; k < n_steps; ++k) {
    const double t = static_cast<double>(k) * traj.dt;
    const Vec f = forcing ? forcing(t) : Vec::Zero(w0.size());
    traj.states.push_back(step(plant, stepper, traj.states.back(), f));
    traj.times.push_back(static_cast<double>(k + 1) * traj.dt);
  }
  return traj;
}

inline Trajectory flow(const Plant& plant, const Vec& w0,
                       const Forcing& forcing, double horizon, double dt) {
  const auto n = step_count(horizon, dt);
  stability_guard(plant, dt);
  return flow(plant, plant.stepper(dt), w0, forcing, n);
}

/// Unforced flow t ↦ 𝒯_t w0.
inline Trajectory flow(const Plant& plant, const Vec& w0, double horizon,
                       double dt) {
  return flow(plant, w0, Forcing{}, horizon, dt);
}

/// One tangent step v ↦ (I + dt A)^{-1} (v - dt dF(w) v).
inline Vec tangent_step(const Plant& plant, const Stepper& stepper,
                        const Vec& w, const Vec& v) {
  return stepper.solve(v - stepper.dt() * plant.dF(w, v));
}

/// Euclidean transpose of tangent_step, acting on dual vectors p = G λ.
inline Vec tangent_step_transpose(const Plant& plant, const Stepper& stepper,
                                  const Vec& w, const Vec& p) {
  const Vec q = stepper.solve_transpose(p);
  return q - stepper.dt() * plant.dF_transpose(w, q);
}

/// First-variation flow v(t; w0, h) along an unforced base trajectory.
inline Trajectory tangent_flow(const Plant& plant, const Stepper& stepper,
                               const Trajectory& base, const Vec& h) {
  require_dim(h, plant.H().dim(), "tangent_flow");
  Trajectory out;
  out.dt = base.dt;
  out.times = base.times;
  out.states.reserve(base.size());
  out.states.push_back(h);
  for (std::size_t k = 0; k + 1 < base.size(); ++k) {
    out.states.push_back(
        tangent_step(plant, stepper, base.states[k], out.states.back()));
  }
  return out;
}

inline Trajectory tangent_flow(const Plant& plant, const Trajectory& base,
                               const Vec& h) {
  return tangent_flow(plant, plant.stepper(base.dt), base, h);
}

/// Exact discrete adjoint of tangent_flow. states[k] holds the adjoint state
/// λ_k = (S_{n-1} ⋯ S_k)^* ζ, so (v_n, ζ)_H = (h, states[0])_H.
inline Trajectory adjoint_tangent_flow(const Plant& plant,
                                       const Stepper& stepper,
                                       const Trajectory& base,
                                       const Vec& zeta_final) {
  require_dim(zeta_final, plant.H().dim(), "adjoint_tangent_flow");
  const Space& h = plant.H();
  const std::size_t n = base.size();
  Trajectory out;
  out.dt = base.dt;
  out.times = base.times;
  out.states.assign(n, Vec());
  Vec p = h.apply_gram(zeta_final);
  out.states[n - 1] = zeta_final;
  for (std::size_t k = n - 1; k-- > 0;) {
    p = tangent_step_transpose(plant, stepper, base.states[k], p);
    out.states[k] = h.solve_gram(p);
  }
  return out;
}

inline Trajectory adjoint_tangent_flow(const Plant& plant,
                                       const Trajectory& base,
                                       const Vec& zeta_final) {
  return adjoint_tangent_flow(plant, plant.stepper(base.dt), base, zeta_final);
}

struct AlphaEstimate {
  double value = std::numeric_limits<double>::infinity();
  int pairs_used = 0;
  // Set when the sampled minimum drops below alpha_cert - tol.
  bool violates_certificate = false;
};

/// Minimum of (𝒜(w1) - 𝒜(w2), w1 - w2)_H / ‖w1 - w2‖²_H over pairs drawn
/// uniformly from the ball of the given radius.
inline AlphaEstimate estimate_alpha(const Plant& plant, int n_samples,
                                    double radius, std::uint64_t seed,
                                    double tol = 1e-10) {
  if (n_samples < 2) throw UsageError("estimate_alpha: n_samples must be >= 2");
  std::mt19937_64 rng(seed);
  const Space& h = plant.H();
  AlphaEstimate est;
  for (int i = 0; i < n_samples; ++i) {
    const Vec w1 = sample_ball(h, radius, rng);
    const Vec w2 = sample_ball(h, radius, rng);
    const Vec dw = w1 - w2;
    const double nn = h.inner(dw, dw);
    if (nn <= 0.0) continue;
    const Vec da = apply_nonlinear_A(plant, w1) - apply_nonlinear_A(plant, w2);
    est.value = std::min(est.value, h.inner(da, dw) / nn);
    ++est.pairs_used;
  }
  if (plant.alpha_cert()) {
    est.violates_certificate = est.value < *plant.alpha_cert() - tol;
  }
  return est;
}

/// Minimum of (A h + dF(w) h, h)_H / ‖h‖²_H over sampled w and h, the
/// linearized form of the monotonicity constant.
inline AlphaEstimate estimate_alpha_linearized(const Plant& plant,
                                               int n_samples, double radius,
                                               std::uint64_t seed,
                                               double tol = 1e-10) {
  if (n_samples < 1) throw UsageError("estimate_alpha_linearized: n_samples >= 1");
  std::mt19937_64 rng(seed);
  const Space& h = plant.H();
  AlphaEstimate est;
  for (int i = 0; i < n_samples; ++i) {
    const Vec w = sample_ball(h, radius, rng);
    const Vec d = sample_ball(h, 1.0, rng);
    const double nn = h.inner(d, d);
    if (nn <= 0.0) continue;
    const Vec jd = plant.apply_A(d) + plant.dF(w, d);
    est.value = std::min(est.value, h.inner(jd, d) / nn);
    ++est.pairs_used;
  }
  if (plant.alpha_cert()) {
    est.violates_certificate = est.value < *plant.alpha_cert() - tol;
  }
  return est;
}

struct ContractionReport {
  double max_ratio = 0.0;  // max over t of ‖Δ(t)‖ / (e^{-α t} ‖Δ(0)‖)
  double alpha = 0.0;
  bool trivial = false;    // w1 == w2
  bool pass = true;
};

/// Compares ‖𝒯_t w1 - 𝒯_t w2‖_H with e^{-α t} ‖w1 - w2‖_H on the grid.
inline ContractionReport contraction_check(const Plant& plant, const Vec& w1,
                                           const Vec& w2, double horizon,
                                           double dt, double alpha,
                                           double tol = 0.05) {
  ContractionReport rep;
  rep.alpha = alpha;
  const Space& h = plant.H();
  const double d0 = h.norm(w1 - w2);
  if (d0 == 0.0) {
    rep.trivial = true;
    return rep;
  }
  const Trajectory t1 = flow(plant, w1, horizon, dt);
  const Trajectory t2 = flow(plant, w2, horizon, dt);
  for (std::size_t k = 0; k < t1.size(); ++k) {
    const double ratio = h.norm(t1.states[k] - t2.states[k]) /
                         (std::exp(-alpha * t1.times[k]) * d0);
    rep.max_ratio = std::max(rep.max_ratio, ratio);
  }
  rep.pass = rep.max_ratio <= 1.0 + tol;
  return rep;
}

inline ContractionReport contraction_check(const Plant& plant, const Vec& w1,
                                           const Vec& w2, double horizon,
                                           double dt) {
  if (!plant.alpha_cert()) {
    throw UsageError("contraction_check: plant has no alpha certificate");
  }
  return contraction_check(plant, w1, w2, horizon, dt, *plant.alpha_cert());
}

/// Same ratio for the tangent flow: ‖v(t)‖ / (e^{-α t} ‖h‖).
inline ContractionReport linearized_decay_check(const Plant& plant,
                                                const Vec& w0, const Vec& h,
                                                double horizon, double dt,
                                                double alpha,
                                                double tol = 0.05) {
  ContractionReport rep;
  rep.alpha = alpha;
  const double h0 = plant.H().norm(h);
  if (h0 == 0.0) {
    rep.trivial = true;
    return rep;
  }
  const auto stepper = plant.stepper(dt);
  const Trajectory base = flow(plant, stepper, w0, Forcing{}, step_count(horizon, dt));
  const Trajectory v = tangent_flow(plant, stepper, base, h);
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double ratio =
        plant.H().norm(v.states[k]) / (std::exp(-alpha * v.times[k]) * h0);
    rep.max_ratio = std::max(rep.max_ratio, ratio);
  }
  rep.pass = rep.max_ratio <= 1.0 + tol;
  return rep;
}

}  // namespace contreg
