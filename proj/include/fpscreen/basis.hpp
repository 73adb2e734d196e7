#ifndef FPSCREEN_BASIS_HPP_
#define FPSCREEN_BASIS_HPP_

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "fpscreen/errors.hpp"

namespace fpscreen {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
  double length() const { return hi - lo; }
  bool contains(double t) const { return t >= lo && t <= hi; }
};

namespace detail {

// Gauss–Legendre nodes and weights on [-1,1], Newton iteration on P_n.
inline void gauss_legendre(int n, std::vector<double>& nodes,
                           std::vector<double>& weights) {
  nodes.assign(n, 0.0);
  weights.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      // Legendre recurrence for P_n(x) and P_n'(x).
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    nodes[i] = x;
    weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
}

// Cox–de Boor: values of all basis functions at t for a clamped knot
// vector. dim = knots.size() - degree - 1.
inline Eigen::VectorXd bspline_values(const std::vector<double>& knots,
                                      int degree, double t) {
  const int dim = static_cast<int>(knots.size()) - degree - 1;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim);

  // Locate the knot span; t == right boundary maps to the last span.
  int span = degree;
  const int last_span = dim - 1;
  if (t >= knots[static_cast<size_t>(dim)]) {
    span = last_span;
  } else {
    while (span < last_span && t >= knots[static_cast<size_t>(span + 1)]) ++span;
  }

  // Triangular scheme over the degree+1 nonzero functions.
  std::vector<double> vals(static_cast<size_t>(degree) + 1, 0.0);
  vals[0] = 1.0;
  std::vector<double> left(static_cast<size_t>(degree) + 1, 0.0);
  std::vector<double> right(static_cast<size_t>(degree) + 1, 0.0);
  for (int j = 1; j <= degree; ++j) {
    left[static_cast<size_t>(j)] = t - knots[static_cast<size_t>(span + 1 - j)];
    right[static_cast<size_t>(j)] = knots[static_cast<size_t>(span + j)] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      double denom = right[static_cast<size_t>(r + 1)] +
                     left[static_cast<size_t>(j - r)];
      double tmp = denom > 0.0 ? vals[static_cast<size_t>(r)] / denom : 0.0;
      vals[static_cast<size_t>(r)] =
          saved + right[static_cast<size_t>(r + 1)] * tmp;
      saved = left[static_cast<size_t>(j - r)] * tmp;
    }
    vals[static_cast<size_t>(j)] = saved;
  }
  for (int r = 0; r <= degree; ++r) out(span - degree + r) = vals[static_cast<size_t>(r)];
  return out;
}

// Linear-interpolation empirical quantile (order statistics at h=(n-1)p).
inline double quantile(const std::vector<double>& sorted, double p) {
  const size_t n = sorted.size();
  if (n == 1) return sorted[0];
  double h = (static_cast<double>(n) - 1.0) * p;
  size_t lo = static_cast<size_t>(std::floor(h));
  if (lo >= n - 1) return sorted[n - 1];
  double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace detail

// A clamped B-spline basis on a closed time interval together with its L²
// Gram matrix W = ∫ π(t) π(t)ᵀ dt and a symmetric square root of W.
// Immutable after construction.
class BasisSystem {
 public:
  BasisSystem(Interval domain, int degree, std::vector<double> interior_knots)
      : domain_(domain), degree_(degree),
        interior_knots_(std::move(interior_knots)) {
    if (degree_ < 0) throw UsageError("basis degree must be nonnegative");
    if (!(domain_.hi > domain_.lo))
      throw DataError("basis domain must have positive length");
    for (size_t i = 0; i < interior_knots_.size(); ++i) {
      if (interior_knots_[i] <= domain_.lo || interior_knots_[i] >= domain_.hi)
        throw DataError("interior knot outside the open domain");
      if (i > 0 && interior_knots_[i] < interior_knots_[i - 1])
        throw DataError("interior knots must be nondecreasing");
    }

    knots_.assign(static_cast<size_t>(degree_ + 1), domain_.lo);
    knots_.insert(knots_.end(), interior_knots_.begin(), interior_knots_.end());
    knots_.insert(knots_.end(), static_cast<size_t>(degree_ + 1), domain_.hi);

    gram_ = gram_with_nodes(default_quad_nodes());
    integral_ = integral_with_nodes(default_quad_nodes());

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram_);
    if (es.eigenvalues().minCoeff() <= 1e-12)
      throw DegeneracyError(
          "basis gram matrix is numerically rank-deficient; "
          "knot placement gives a degenerate basis");
    Eigen::VectorXd sqrt_ev = es.eigenvalues().array().max(1e-12).sqrt();
    gram_half_ = es.eigenvectors() * sqrt_ev.asDiagonal() *
                 es.eigenvectors().transpose();
    gram_half_inv_ = es.eigenvectors() * sqrt_ev.cwiseInverse().asDiagonal() *
                     es.eigenvectors().transpose();
  }

  int degree() const { return degree_; }
  int dim() const { return static_cast<int>(knots_.size()) - degree_ - 1; }
  const Interval& domain() const { return domain_; }
  const std::vector<double>& interior_knots() const { return interior_knots_; }
  const std::vector<double>& knots() const { return knots_; }
  const Eigen::MatrixXd& gram() const { return gram_; }
  const Eigen::MatrixXd& gram_half() const { return gram_half_; }
  // Vector of ∫ π_j(t) dt over the domain.
  const Eigen::VectorXd& basis_integral() const { return integral_; }

  // All basis values at t. Times within 1e-12 of the boundary are clamped.
  Eigen::VectorXd evaluate(double t) const {
    if (t < domain_.lo || t > domain_.hi) {
      if (t >= domain_.lo - 1e-12 && t <= domain_.hi + 1e-12)
        t = std::clamp(t, domain_.lo, domain_.hi);
      else
        throw DomainError("time outside the basis domain");
    }
    return detail::bspline_values(knots_, degree_, t);
  }

  double gram_norm(const Eigen::VectorXd& coef) const {
    return std::sqrt(coef.dot(gram_ * coef));
  }

  double gram_inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    return a.dot(gram_ * b);
  }

  // Gram–Schmidt under the gram inner product: maps candidate to a vector of
  // unit gram-norm orthogonal to every vector in previous. Works on
  // gram_half-transformed coordinates where the inner product is Euclidean.
  Eigen::VectorXd orthogonalize(
      const Eigen::VectorXd& candidate,
      const std::vector<Eigen::VectorXd>& previous) const {
    for (size_t l = 0; l < previous.size(); ++l) {
      if (std::abs(gram_norm(previous[l]) - 1.0) > 1e-8)
        throw NumericalError("orthogonalize: previous vector not unit norm");
      for (size_t m = l + 1; m < previous.size(); ++m)
        if (std::abs(gram_inner(previous[l], previous[m])) > 1e-8)
          throw NumericalError("orthogonalize: previous vectors not orthogonal");
    }
    Eigen::VectorXd h = gram_half_ * candidate;
    for (const auto& p : previous) {
      Eigen::VectorXd hp = gram_half_ * p;
      h -= hp.dot(h) * hp;
    }
    double norm = h.norm();
    if (norm < 1e-12)
      throw DegeneracyError(
          "orthogonalize: candidate lies in the span of previous components");
    h /= norm;
    return gram_half_inv_ * h;
  }

  // Gram matrix with an explicit per-span node count (the constructor uses
  // default_quad_nodes(), exact for the piecewise-polynomial integrand).
  Eigen::MatrixXd gram_with_nodes(int nodes_per_span) const {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(dim(), dim());
    for_each_quad_point(nodes_per_span,
                        [&](double w, const Eigen::VectorXd& pi) {
                          g.noalias() += w * pi * pi.transpose();
                        });
    // Symmetrize away quadrature round-off.
    return (g + g.transpose()) / 2.0;
  }

  Eigen::VectorXd integral_with_nodes(int nodes_per_span) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim());
    for_each_quad_point(nodes_per_span,
                        [&](double w, const Eigen::VectorXd& pi) { v += w * pi; });
    return v;
  }

  int default_quad_nodes() const { return degree_ + 2; }

 private:
  template <typename F>
  void for_each_quad_point(int nodes_per_span, F&& f) const {
    std::vector<double> xs, ws;
    detail::gauss_legendre(nodes_per_span, xs, ws);
    for (size_t s = static_cast<size_t>(degree_);
         s + 1 < knots_.size() - static_cast<size_t>(degree_); ++s) {
      double a = knots_[s], b = knots_[s + 1];
      if (b <= a) continue;
      double mid = (a + b) / 2.0, half = (b - a) / 2.0;
      for (int q = 0; q < nodes_per_span; ++q) {
        double t = mid + half * xs[static_cast<size_t>(q)];
        f(half * ws[static_cast<size_t>(q)],
          detail::bspline_values(knots_, degree_, t));
      }
    }
  }

  Interval domain_;
  int degree_;
  std::vector<double> interior_knots_;
  std::vector<double> knots_;
  Eigen::MatrixXd gram_;
  Eigen::MatrixXd gram_half_;
  Eigen::MatrixXd gram_half_inv_;
  Eigen::VectorXd integral_;
};

// Basis with interior knots at the j/(num_interior+1) empirical quantiles of
// the pooled observation times.
inline BasisSystem build_basis(Interval domain, int degree, int num_interior,
                               std::vector<double> pooled_times) {
  if (num_interior < 0) throw UsageError("num_interior must be nonnegative");
  if (pooled_times.empty()) throw DataError("pooled times are empty");
  std::sort(pooled_times.begin(), pooled_times.end());
  for (double t : pooled_times)
    if (!domain.contains(t)) throw DataError("pooled time outside the domain");
  if (num_interior > 0 && pooled_times.front() == pooled_times.back())
    throw DataError(
        "all pooled times are equal: uninformative knot placement");

  std::vector<double> interior;
  for (int j = 1; j <= num_interior; ++j)
    interior.push_back(detail::quantile(
        pooled_times, static_cast<double>(j) / (num_interior + 1)));
  // Quantile ties collapse to a single knot; a changed dimension is an error
  // rather than a silently smaller basis.
  std::vector<double> dedup = interior;
  dedup.erase(std::unique(dedup.begin(), dedup.end()), dedup.end());
  dedup.erase(std::remove_if(dedup.begin(), dedup.end(),
                             [&](double k) {
                               return k <= domain.lo || k >= domain.hi;
                             }),
              dedup.end());
  if (dedup.size() != interior.size())
    throw DataError("duplicate or boundary quantile knots shrink the basis; "
                    "reduce num_interior");
  return BasisSystem(domain, degree, std::move(interior));
}

}  // namespace fpscreen

#endif  // FPSCREEN_BASIS_HPP_
