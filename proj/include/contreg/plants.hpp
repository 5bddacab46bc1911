#pragma once

// Plant constructors: a seeded finite-dimensional linear benchmark, a scalar
// test plant, the damped sine-Gordon equation on (0, L) with Dirichlet ends,
// and the pre-stabilized Wilson-Cowan neural field on (0, 1).

#include "contreg/evolution.hpp"
#include "contreg/space.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace contreg {

/// Plant with F = 0 on Euclidean spaces.
inline Plant make_linear_plant(const Mat& a, const Mat& b, const Mat& c,
                               std::optional<double> alpha_cert,
                               std::string name = "linear") {
  PlantData d;
  d.name = std::move(name);
  d.space_h = Space::euclidean(a.rows(), SpaceLabel::H);
  d.space_u = Space::euclidean(b.cols(), SpaceLabel::U);
  d.space_z = Space::euclidean(c.rows(), SpaceLabel::Z);
  d.a = a.sparseView();
  d.b = b.sparseView();
  d.c = c.sparseView();
  d.alpha_cert = alpha_cert;
  return Plant(std::move(d));
}

/// Scalar plant dw/dt + a w + cubic w³ = b u, y = c w.
inline Plant make_scalar_plant(double a, double b, double c,
                               double cubic = 0.0) {
  PlantData d;
  d.name = "scalar";
  d.a = Mat::Constant(1, 1, a).sparseView();
  d.b = Mat::Constant(1, 1, b).sparseView();
  d.c = Mat::Constant(1, 1, c).sparseView();
  if (cubic != 0.0) {
    d.f = Nonlinearity{
        [cubic](const Vec& w) -> Vec { return cubic * w.array().cube(); },
        [cubic](const Vec& w, const Vec& h) -> Vec {
          return 3.0 * cubic * w.array().square() * h.array();
        },
        [cubic](const Vec& w, const Vec& p) -> Vec {
          return 3.0 * cubic * w.array().square() * p.array();
        }};
  }
  // A monotone cubic only adds to the coercivity of a.
  if (a > 0.0 && cubic >= 0.0) d.alpha_cert = a;
  return Plant(std::move(d));
}

struct LinearBenchmarkOptions {
  int io_dim = 2;
  double skew_scale = 1.0;
  bool rank_deficient = false;  // zero last row of C, so CA⁻¹B loses rank
  double min_sigma = 1e-2;
};

/// A = α I + S with S random skew-symmetric, B and C random; (A h, h) =
/// α ‖h‖² exactly. Seeds whose CA⁻¹B is nearly singular are redrawn.
inline Plant make_linear_benchmark(int n, double alpha, std::uint64_t seed,
                                   LinearBenchmarkOptions opts = {}) {
  if (n < 1) throw UsageError("make_linear_benchmark: n must be >= 1");
  if (!(alpha > 0.0)) throw UsageError("make_linear_benchmark: alpha must be > 0");
  const int m = std::min(opts.io_dim, n);
  if (m < 1) throw UsageError("make_linear_benchmark: io_dim must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  auto randn = [&](int r, int c) {
    Mat x(r, c);
    for (int j = 0; j < c; ++j)
      for (int i = 0; i < r; ++i) x(i, j) = normal(rng);
    return x;
  };
  for (int attempt = 0; attempt < 100; ++attempt) {
    const Mat r = randn(n, n);
    const Mat a = alpha * Mat::Identity(n, n) +
                  opts.skew_scale * 0.5 * (r - r.transpose());
    const Mat b = randn(n, m);
    Mat c = randn(m, n);
    if (opts.rank_deficient) c.row(m - 1).setZero();
    const Mat g = c * a.partialPivLu().solve(b);
    Eigen::JacobiSVD<Mat> svd(g);
    const double smin = svd.singularValues().minCoeff();
    if (!opts.rank_deficient && smin < opts.min_sigma) continue;
    return make_linear_plant(a, b, c, alpha, "linear_benchmark");
  }
  throw ConfigurationError("make_linear_benchmark: no admissible draw");
}

// ---------------------------------------------------------------------------
// Sine-Gordon

struct SineGordonParams {
  double length = std::numbers::pi;
  double xi = 2.0;
  double gamma = 0.05;
  int n = 200;
  double window_lo = 1.0;
  double window_hi = 2.0;
};

struct SineGordonConstants {
  double lambda1 = 0.0;           // (π/L)²
  double lambda1_discrete = 0.0;  // smallest eigenvalue of the discrete -∂xx
  double epsilon = 0.0;
  double alpha_margin = 0.0;      // ε/2 - γ λ₁ with the larger λ₁
  bool feasible = false;          // γ < ε / (2 λ₁)
  bool global = false;            // ε / (2 (1 + λ₁)) > γ
};

/// ε = min{ξ/4, λ₁/(2ξ)} and the two γ-conditions, for a given λ₁.
inline SineGordonConstants sine_gordon_constants(double xi, double gamma,
                                                 double lambda1) {
  SineGordonConstants k;
  k.lambda1 = lambda1;
  k.lambda1_discrete = lambda1;
  k.epsilon = std::min(xi / 4.0, lambda1 / (2.0 * xi));
  k.alpha_margin = k.epsilon / 2.0 - gamma * lambda1;
  k.feasible = gamma < k.epsilon / (2.0 * lambda1);
  k.global = k.epsilon / (2.0 * (1.0 + lambda1)) > gamma;
  return k;
}

/// Constants for the discretized problem: ε from the smaller (discrete)
/// Poincaré constant and the margin from the larger one.
inline SineGordonConstants sine_gordon_constants(const SineGordonParams& p) {
  const double h = p.length / (p.n + 1);
  const double lam_a = std::pow(std::numbers::pi / p.length, 2);
  const double s = std::sin(std::numbers::pi * h / (2.0 * p.length));
  const double lam_d = 4.0 * s * s / (h * h);
  const double lam_lo = std::min(lam_a, lam_d), lam_hi = std::max(lam_a, lam_d);
  SineGordonConstants k;
  k.lambda1 = lam_a;
  k.lambda1_discrete = lam_d;
  k.epsilon = std::min(p.xi / 4.0, lam_lo / (2.0 * p.xi));
  k.alpha_margin = k.epsilon / 2.0 - p.gamma * lam_hi;
  k.feasible = p.gamma < k.epsilon / (2.0 * lam_hi);
  k.global = k.epsilon / (2.0 * (1.0 + lam_hi)) > p.gamma;
  return k;
}

/// Interior grid x_i = i h, i = 1..n, h = L/(n+1).
inline std::vector<double> sine_gordon_grid(const SineGordonParams& p) {
  const double h = p.length / (p.n + 1);
  std::vector<double> x(p.n);
  for (int i = 0; i < p.n; ++i) x[i] = (i + 1) * h;
  return x;
}

/// Tridiagonal (2, -1)/h² Dirichlet Laplacian.
inline SpMat dirichlet_laplacian(int n, double h) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(3 * n);
  const double s = 1.0 / (h * h);
  for (int i = 0; i < n; ++i) {
    t.emplace_back(i, i, 2.0 * s);
    if (i > 0) t.emplace_back(i, i - 1, -s);
    if (i + 1 < n) t.emplace_back(i, i + 1, -s);
  }
  SpMat d(n, n);
  d.setFromTriplets(t.begin(), t.end());
  return d;
}

/// State w = [θ, ζ] with ζ = ∂_t θ on the interior grid.
///   A[θ, ζ] = [-ζ, -∂xx θ + ξ ζ + γ θ],   F[θ, ζ] = [0, γ sin θ - γ θ]
///   B u = [0, 1_𝒪 u],   C w = ∂x θ(0) by (-3θ₀ + 4θ₁ - θ₂)/(2h), θ₀ = 0.
/// H carries the ε-weighted energy product
///   ∫ θ₁' θ₂' + ∫ (ζ₁ + ε θ₁)(ζ₂ + ε θ₂).
inline Plant make_sine_gordon(const SineGordonParams& p) {
  if (p.n < 3) throw UsageError("make_sine_gordon: n must be >= 3");
  if (!(p.length > 0.0) || !(p.xi > 0.0) || !(p.gamma > 0.0)) {
    throw UsageError("make_sine_gordon: L, xi, gamma must be positive");
  }
  const int n = p.n;
  const double h = p.length / (n + 1);
  const auto k = sine_gordon_constants(p);
  const double eps = k.epsilon;
  const SpMat lap = dirichlet_laplacian(n, h);

  std::vector<Eigen::Triplet<double>> ta, tg;
  for (int j = 0; j < lap.outerSize(); ++j) {
    for (SpMat::InnerIterator it(lap, j); it; ++it) {
      ta.emplace_back(n + it.row(), it.col(), it.value());
      tg.emplace_back(it.row(), it.col(), h * it.value());
    }
  }
  for (int i = 0; i < n; ++i) {
    ta.emplace_back(i, n + i, -1.0);
    ta.emplace_back(n + i, i, p.gamma);
    ta.emplace_back(n + i, n + i, p.xi);
    tg.emplace_back(i, i, eps * eps * h);
    tg.emplace_back(i, n + i, eps * h);
    tg.emplace_back(n + i, i, eps * h);
    tg.emplace_back(n + i, n + i, h);
  }
  SpMat a(2 * n, 2 * n), gram(2 * n, 2 * n);
  a.setFromTriplets(ta.begin(), ta.end());
  gram.setFromTriplets(tg.begin(), tg.end());

  std::vector<int> window;
  const auto x = sine_gordon_grid(p);
  for (int i = 0; i < n; ++i) {
    if (x[i] > p.window_lo && x[i] < p.window_hi) window.push_back(i);
  }
  if (window.empty()) throw UsageError("make_sine_gordon: control window has no grid points");
  const int m = static_cast<int>(window.size());
  SpMat b(2 * n, m);
  for (int j = 0; j < m; ++j) b.insert(n + window[j], j) = 1.0;
  SpMat c(1, 2 * n);
  c.insert(0, 0) = 4.0 / (2.0 * h);
  c.insert(0, 1) = -1.0 / (2.0 * h);

  const double gamma = p.gamma;
  Nonlinearity f{
      [n, gamma](const Vec& w) -> Vec {
        Vec out = Vec::Zero(2 * n);
        const auto th = w.head(n).array();
        out.tail(n) = gamma * (th.sin() - th);
        return out;
      },
      [n, gamma](const Vec& w, const Vec& v) -> Vec {
        Vec out = Vec::Zero(2 * n);
        out.tail(n) = gamma * (w.head(n).array().cos() - 1.0) * v.head(n).array();
        return out;
      },
      [n, gamma](const Vec& w, const Vec& q) -> Vec {
        Vec out = Vec::Zero(2 * n);
        out.head(n) = gamma * (w.head(n).array().cos() - 1.0) * q.tail(n).array();
        return out;
      }};

  PlantData d;
  d.name = "sine_gordon";
  d.space_h = Space(std::move(gram), SpaceLabel::H);
  d.space_u = Space::diagonal(Vec::Constant(m, h), SpaceLabel::U);
  d.space_z = Space::euclidean(1, SpaceLabel::Z);
  d.a = std::move(a);
  d.f = std::move(f);
  d.b = std::move(b);
  d.c = std::move(c);
  // |sin a - a - sin b + b| ≤ 2|a - b| and ‖θ‖ ≤ ‖θ'‖/√λ₁ ≤ ‖w‖_H/√λ₁.
  d.lip_f = 2.0 * gamma / std::sqrt(std::min(k.lambda1, k.lambda1_discrete));
  if (k.feasible && k.alpha_margin > 0.0) {
    d.alpha_cert = k.alpha_margin;
  } else {
    d.notes.push_back("gamma >= epsilon/(2 lambda1): no monotonicity certificate");
  }
  if (!k.global) d.notes.push_back("global coercivity flag not satisfied");
  return Plant(std::move(d));
}

/// θ = Σ_{j ≤ modes} a_j sin(jπx/L), ζ likewise, with a_j ~ U(-amp, amp).
inline Vec sine_gordon_smooth_state(const SineGordonParams& p,
                                    std::mt19937_64& rng, int modes = 3,
                                    double amplitude = 1.0) {
  std::uniform_real_distribution<double> coef(-amplitude, amplitude);
  const auto x = sine_gordon_grid(p);
  const int n = p.n;
  Vec w = Vec::Zero(2 * n);
  for (int part = 0; part < 2; ++part) {
    for (int j = 1; j <= modes; ++j) {
      const double a = coef(rng);
      for (int i = 0; i < n; ++i) {
        w[part * n + i] += a * std::sin(j * std::numbers::pi * x[i] / p.length);
      }
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Wilson-Cowan

struct ScalarNonlinearity {
  std::string name = "tanh";
  std::function<double(double)> s;
  std::function<double(double)> ds;
  double ds_bound = 1.0;         // L_s = sup |s'|
  double ds_offset_bound = 1.0;  // sup |s' - s'(0)|
};

inline ScalarNonlinearity tanh_nonlinearity() {
  return {"tanh", [](double v) { return std::tanh(v); },
          [](double v) {
            const double c = std::cosh(v);
            return 1.0 / (c * c);
          },
          1.0, 1.0};
}

inline ScalarNonlinearity atan_nonlinearity() {
  return {"atan", [](double v) { return std::atan(v); },
          [](double v) { return 1.0 / (1.0 + v * v); }, 1.0, 1.0};
}

using Kernel = std::function<double(double, double)>;

inline Kernel constant_kernel(double c) {
  return [c](double, double) { return c; };
}

inline Kernel gaussian_kernel(double amplitude, double width) {
  return [amplitude, width](double x, double y) {
    const double r = (x - y) / width;
    return amplitude * std::exp(-0.5 * r * r);
  };
}

struct WilsonCowanParams {
  int n = 20;  // midpoint cells on (0, 1)
  double alpha_gain = 0.05;
  Kernel kernel = constant_kernel(0.1);
  ScalarNonlinearity s = tanh_nonlinearity();
  double window_lo = 0.25;
  double window_hi = 0.75;
};

/// M_{k,s} = ∬ |k(x, ν) L_s|² dx dν by the tensor midpoint rule, with the
/// uniform bound L_s standing in for s'(ν).
inline double compute_M_ks(const WilsonCowanParams& p) {
  const double h = 1.0 / p.n;
  double acc = 0.0;
  for (int i = 0; i < p.n; ++i) {
    for (int j = 0; j < p.n; ++j) {
      const double v = p.kernel((i + 0.5) * h, (j + 0.5) * h) * p.s.ds_bound;
      acc += v * v;
    }
  }
  return acc * h * h;
}

struct WilsonCowanFlags {
  double m_ks = 0.0;
  bool feasible = false;  // α > M_{k,s}
  bool global = false;    // α > 2 M_{k,s}
};

inline WilsonCowanFlags wilson_cowan_flags(const WilsonCowanParams& p) {
  WilsonCowanFlags f;
  f.m_ks = compute_M_ks(p);
  f.feasible = p.alpha_gain > f.m_ks;
  f.global = p.alpha_gain > 2.0 * f.m_ks;
  return f;
}

/// H = L²(0, 1) on midpoint cells; K w = s'(0) ∫ k(x, ν) w(ν) dν,
/// A = α I + K, F(w) = ∫ k(x, ν) {s(w(ν)) - s'(0) w(ν)} dν,
/// B = 1_𝒪 injection, C = restriction to 𝒪 (U = Z = L²(𝒪)).
inline Plant make_wilson_cowan(const WilsonCowanParams& p) {
  if (p.n < 2) throw UsageError("make_wilson_cowan: n must be >= 2");
  if (!(p.alpha_gain > 0.0)) throw UsageError("make_wilson_cowan: alpha must be > 0");
  const int n = p.n;
  const double h = 1.0 / n;
  Mat kq(n, n);  // quadrature of the kernel: (kq w)_i ≈ ∫ k(x_i, ν) w(ν) dν
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      kq(i, j) = p.kernel((i + 0.5) * h, (j + 0.5) * h) * h;
  if (!kq.allFinite()) throw UsageError("make_wilson_cowan: kernel is not finite");
  const double ds0 = p.s.ds(0.0);
  const Mat a = p.alpha_gain * Mat::Identity(n, n) + ds0 * kq;

  std::vector<int> window;
  for (int i = 0; i < n; ++i) {
    const double x = (i + 0.5) * h;
    if (x > p.window_lo && x < p.window_hi) window.push_back(i);
  }
  if (window.empty()) throw UsageError("make_wilson_cowan: control window has no cells");
  const int m = static_cast<int>(window.size());
  SpMat b(n, m), c(m, n);
  for (int j = 0; j < m; ++j) {
    b.insert(window[j], j) = 1.0;
    c.insert(j, window[j]) = 1.0;
  }

  const auto s = p.s;
  const Mat kqt = kq.transpose();
  Nonlinearity f{
      [kq, s, ds0](const Vec& w) -> Vec {
        Vec g(w.size());
        for (Eigen::Index i = 0; i < w.size(); ++i) g[i] = s.s(w[i]) - ds0 * w[i];
        return kq * g;
      },
      [kq, s, ds0](const Vec& w, const Vec& v) -> Vec {
        Vec g(w.size());
        for (Eigen::Index i = 0; i < w.size(); ++i) g[i] = (s.ds(w[i]) - ds0) * v[i];
        return kq * g;
      },
      [kqt, s, ds0](const Vec& w, const Vec& q) -> Vec {
        Vec g = kqt * q;
        for (Eigen::Index i = 0; i < w.size(); ++i) g[i] *= s.ds(w[i]) - ds0;
        return g;
      }};

  const auto flags = wilson_cowan_flags(p);
  Eigen::JacobiSVD<Mat> svd(kq);
  PlantData d;
  d.name = "wilson_cowan";
  d.space_h = Space::diagonal(Vec::Constant(n, h), SpaceLabel::H);
  d.space_u = Space::diagonal(Vec::Constant(m, h), SpaceLabel::U);
  d.space_z = Space::diagonal(Vec::Constant(m, h), SpaceLabel::Z);
  d.a = a.sparseView();
  d.f = std::move(f);
  d.b = std::move(b);
  d.c = std::move(c);
  d.lip_f = svd.singularValues()(0) * p.s.ds_offset_bound;
  if (flags.feasible) {
    d.alpha_cert = p.alpha_gain - flags.m_ks;
  } else {
    d.notes.push_back("alpha <= M_ks: no monotonicity certificate");
  }
  if (!flags.global) d.notes.push_back("alpha <= 2 M_ks: global coercivity not guaranteed");
  d.notes.push_back("M_ks uses the uniform bound sup|s'| in place of s'(nu)");
  return Plant(std::move(d));
}

}  // namespace contreg
