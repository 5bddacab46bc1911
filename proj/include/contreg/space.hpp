#pragma once

// Finite-dimensional Hilbert spaces with a Gram-weighted inner product and
// linear maps between them. Adjoints are always taken with respect to the
// Gram weights: L* = G_dom^{-1} L^T G_cod.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

namespace contreg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;

/// Raised for dimension mismatches and malformed arguments.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a space or plant cannot be built from the given data.
class ConfigurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a linear solve or iteration breaks down.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SpaceLabel { H, U, Z };

inline const char* to_string(SpaceLabel label) {
  switch (label) {
    case SpaceLabel::H: return "H";
    case SpaceLabel::U: return "U";
    case SpaceLabel::Z: return "Z";
  }
  return "?";
}

inline void require_dim(const Vec& x, Eigen::Index dim, const char* what) {
  if (x.size() != dim) {
    throw UsageError(std::string(what) + ": expected length " +
                     std::to_string(dim) + ", got " +
                     std::to_string(x.size()));
  }
}

/// A discrete Hilbert space R^n with inner product x^T G y.
///
/// The Gram matrix is validated once (symmetric, positive definite) and
/// factorized; copies share the factorization.
class Space {
 public:
  Space(SpMat gram, SpaceLabel label) {
    if (gram.rows() != gram.cols() || gram.rows() == 0) {
      throw ConfigurationError("Gram matrix must be square and non-empty");
    }
    gram.makeCompressed();
    const SpMat asym = gram - SpMat(gram.transpose());
    const double scale = std::max(1.0, gram.norm());
    if (asym.norm() > 1e-12 * scale) {
      throw ConfigurationError("Gram matrix is not symmetric");
    }
    auto impl = std::make_shared<Impl>();
    impl->gram = std::move(gram);
    impl->label = label;
    impl->chol.compute(impl->gram);
    if (impl->chol.info() != Eigen::Success) {
      throw ConfigurationError("Gram matrix is not positive definite");
    }
    const auto& d = impl->chol.vectorD();
    if (d.minCoeff() <= 0.0) {
      throw ConfigurationError("Gram matrix is not positive definite");
    }
    impl->diagonal = is_diagonal(impl->gram);
    impl_ = std::move(impl);
  }

  static Space euclidean(Eigen::Index dim, SpaceLabel label) {
    return diagonal(Vec::Ones(dim), label);
  }

  static Space diagonal(const Vec& weights, SpaceLabel label) {
    SpMat g(weights.size(), weights.size());
    g.reserve(Eigen::VectorXi::Constant(weights.size(), 1));
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
      g.insert(i, i) = weights[i];
    }
    return Space(std::move(g), label);
  }

  static Space dense(const Mat& gram, SpaceLabel label) {
    return Space(gram.sparseView(), label);
  }

  Eigen::Index dim() const { return impl_->gram.rows(); }
  const SpMat& gram() const { return impl_->gram; }
  SpaceLabel label() const { return impl_->label; }

  double inner(const Vec& x, const Vec& y) const {
    require_dim(x, dim(), "inner");
    require_dim(y, dim(), "inner");
    return x.dot(impl_->gram * y);
  }

  double norm(const Vec& x) const { return std::sqrt(std::max(0.0, inner(x, x))); }

  Vec apply_gram(const Vec& x) const {
    require_dim(x, dim(), "apply_gram");
    return impl_->gram * x;
  }

  Vec solve_gram(const Vec& b) const {
    require_dim(b, dim(), "solve_gram");
    if (impl_->diagonal) return b.cwiseQuotient(Vec(impl_->gram.diagonal()));
    return impl_->chol.solve(b);
  }

  Mat solve_gram(const Mat& b) const {
    if (impl_->diagonal) {
      return Vec(impl_->gram.diagonal()).cwiseInverse().asDiagonal() * b;
    }
    return impl_->chol.solve(b);
  }

  /// Maps orthonormal coordinates g to w with ‖w‖ = |g|₂ (uses the sparse
  /// factorization P G P^T = L D L^T).
  Vec from_orthonormal(const Vec& g) const {
    require_dim(g, dim(), "from_orthonormal");
    const auto& c = impl_->chol;
    Vec y = g.cwiseQuotient(c.vectorD().cwiseSqrt());
    y = c.matrixU().solve(y);
    return c.permutationPinv() * y;
  }

  bool same_as(const Space& other) const { return impl_ == other.impl_; }

 private:
  static bool is_diagonal(const SpMat& g) {
    for (int k = 0; k < g.outerSize(); ++k) {
      for (SpMat::InnerIterator it(g, k); it; ++it) {
        if (it.row() != it.col() && it.value() != 0.0) return false;
      }
    }
    return true;
  }

  struct Impl {
    SpMat gram;
    SpaceLabel label = SpaceLabel::H;
    Eigen::SimplicialLDLT<SpMat> chol;
    bool diagonal = false;
  };
  std::shared_ptr<const Impl> impl_;
};

inline double inner(const Space& space, const Vec& x, const Vec& y) {
  return space.inner(x, y);
}

/// A linear map between two spaces, either backed by an explicit matrix or
/// given matrix-free through an applier and an adjoint applier.
class LinMap {
 public:
  using Applier = std::function<Vec(const Vec&)>;

  static LinMap from_matrix(Space domain, Space codomain, SpMat matrix) {
    if (matrix.rows() != codomain.dim() || matrix.cols() != domain.dim()) {
      throw UsageError("LinMap: matrix shape does not match spaces");
    }
    matrix.makeCompressed();
    auto m = std::make_shared<const SpMat>(std::move(matrix));
    LinMap map(domain, codomain);
    map.matrix_ = m;
    map.apply_ = [m](const Vec& x) -> Vec { return *m * x; };
    map.adjoint_ = [m, domain, codomain](const Vec& y) -> Vec {
      return domain.solve_gram(Vec(m->transpose() * codomain.apply_gram(y)));
    };
    return map;
  }

  static LinMap from_dense(Space domain, Space codomain, const Mat& matrix) {
    return from_matrix(std::move(domain), std::move(codomain), matrix.sparseView());
  }

  static LinMap matrix_free(Space domain, Space codomain, Applier apply,
                            Applier adjoint) {
    LinMap map(std::move(domain), std::move(codomain));
    map.apply_ = std::move(apply);
    map.adjoint_ = std::move(adjoint);
    return map;
  }

  static LinMap identity(const Space& space) {
    SpMat id(space.dim(), space.dim());
    id.setIdentity();
    return from_matrix(space, space, std::move(id));
  }

  const Space& domain() const { return domain_; }
  const Space& codomain() const { return codomain_; }
  bool has_matrix() const { return matrix_ != nullptr; }
  const SpMat& matrix() const {
    if (!matrix_) throw UsageError("LinMap: no explicit matrix");
    return *matrix_;
  }

  Vec apply(const Vec& x) const {
    require_dim(x, domain_.dim(), "LinMap::apply");
    return apply_(x);
  }

  Vec apply_adjoint(const Vec& y) const {
    require_dim(y, codomain_.dim(), "LinMap::apply_adjoint");
    return adjoint_(y);
  }

  Vec operator()(const Vec& x) const { return apply(x); }

  /// Dense matrix of the action, assembled columnwise when matrix-free.
  Mat to_dense() const {
    if (matrix_) return Mat(*matrix_);
    Mat out(codomain_.dim(), domain_.dim());
    Vec e = Vec::Zero(domain_.dim());
    for (Eigen::Index j = 0; j < domain_.dim(); ++j) {
      e[j] = 1.0;
      out.col(j) = apply_(e);
      e[j] = 0.0;
    }
    return out;
  }

  LinMap adjoint() const {
    LinMap map(codomain_, domain_);
    if (matrix_) {
      // G_dom^{-1} L^T G_cod, kept explicit so the result has a matrix too.
      const Mat lt = Mat(matrix_->transpose()) * Mat(codomain_.gram());
      map = from_dense(codomain_, domain_, domain_.solve_gram(lt));
      return map;
    }
    map.apply_ = adjoint_;
    map.adjoint_ = apply_;
    return map;
  }

  /// Composition this ∘ inner.
  LinMap compose(const LinMap& inner) const {
    if (inner.codomain_.dim() != domain_.dim()) {
      throw UsageError("LinMap::compose: dimension mismatch");
    }
    Applier outer_apply = apply_, outer_adj = adjoint_;
    Applier inner_apply = inner.apply_, inner_adj = inner.adjoint_;
    return matrix_free(
        inner.domain_, codomain_,
        [=](const Vec& x) { return outer_apply(inner_apply(x)); },
        [=](const Vec& y) { return inner_adj(outer_adj(y)); });
  }

 private:
  LinMap(Space domain, Space codomain)
      : domain_(std::move(domain)), codomain_(std::move(codomain)) {}

  Space domain_;
  Space codomain_;
  std::shared_ptr<const SpMat> matrix_;
  Applier apply_;
  Applier adjoint_;
};

inline LinMap adjoint(const LinMap& map) { return map.adjoint(); }

struct NormEstimate {
  double value = 0.0;
  // ‖L*L x - μ x‖ / ‖x‖ at the last iterate, μ the Rayleigh quotient.
  double residual = 0.0;
  int iterations = 0;
};

/// Power iteration on L*L with a fixed-seed start vector. The Rayleigh
/// quotient ‖Lx‖²/‖x‖² of a positive semidefinite self-adjoint operator is
/// nondecreasing along power iterates, so the estimate only grows with iters.
inline NormEstimate operator_norm(const LinMap& map, int iters = 100) {
  if (iters < 1) throw UsageError("operator_norm: iters must be >= 1");
  const Space& dom = map.domain();
  std::mt19937_64 rng(0x5eed5eedULL);
  std::normal_distribution<double> normal;
  Vec x(dom.dim());
  for (auto& v : x) v = normal(rng);
  x /= dom.norm(x);

  NormEstimate est;
  for (int k = 0; k < iters; ++k) {
    const Vec lx = map.apply(x);
    const Vec y = map.apply_adjoint(lx);
    const double mu = map.codomain().inner(lx, lx);
    est.value = std::sqrt(std::max(0.0, mu));
    est.residual = dom.norm(y - mu * x);
    est.iterations = k + 1;
    const double ny = dom.norm(y);
    if (ny == 0.0) {
      est.value = 0.0;
      est.residual = 0.0;
      break;
    }
    x = y / ny;
  }
  return est;
}

/// Smallest of the min(dim dom, dim cod) singular values of the map with
/// respect to the Gram-weighted norms. Zero means the map is rank deficient.
inline double smallest_singular_value(const LinMap& map) {
  const Mat l = map.to_dense();
  const Space& dom = map.domain();
  const Space& cod = map.codomain();
  // Generalized symmetric eigenproblems on the smaller side.
  Mat lhs, rhs;
  if (dom.dim() <= cod.dim()) {
    lhs = l.transpose() * (cod.gram() * l);
    rhs = Mat(dom.gram());
  } else {
    const Mat gd_inv_lt = dom.solve_gram(Mat(l.transpose()));
    const Mat gc = Mat(cod.gram());
    lhs = gc * l * gd_inv_lt * gc;
    rhs = gc;
  }
  lhs = 0.5 * (lhs + lhs.transpose());
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(lhs, rhs,
                                                   Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) {
    throw NumericalError("smallest_singular_value: eigensolver failed");
  }
  const double mu = es.eigenvalues().minCoeff();
  const double top = std::max(es.eigenvalues().maxCoeff(), 0.0);
  // Eigenvalues at round-off level relative to the largest are zero.
  if (mu <= 1e-13 * top) return 0.0;
  return std::sqrt(mu);
}

/// Draws a point uniformly from the ball {‖x‖ ≤ radius} of the space.
template <class Rng>
Vec sample_ball(const Space& space, double radius, Rng& rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto n = space.dim();
  Vec g(n);
  for (auto& v : g) v = normal(rng);
  const double r = radius * std::pow(unif(rng), 1.0 / static_cast<double>(n));
  Vec w = space.from_orthonormal(g);
  const double nw = space.norm(w);
  return nw > 0 ? Vec(w * (r / nw)) : w;
}

}  // namespace contreg
