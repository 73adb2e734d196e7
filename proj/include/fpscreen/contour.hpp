#ifndef FPSCREEN_CONTOUR_HPP_
#define FPSCREEN_CONTOUR_HPP_

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fpscreen/covariate.hpp"
#include "fpscreen/errors.hpp"
#include "fpscreen/rpca.hpp"

namespace fpscreen {

inline std::vector<double> default_tau_grid() {
  std::vector<double> taus;
  for (int i = 1; i <= 19; ++i) taus.push_back(i / 20.0);
  taus.push_back(0.975);
  taus.push_back(0.99);
  return taus;
}

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

// Trigonometric basis (1, cosθ, sinθ, …, cos Hθ, sin Hθ).
inline Eigen::VectorXd trig_basis(double theta, int harmonics) {
  Eigen::VectorXd b(2 * harmonics + 1);
  b(0) = 1.0;
  for (int h = 1; h <= harmonics; ++h) {
    b(2 * h - 1) = std::cos(h * theta);
    b(2 * h) = std::sin(h * theta);
  }
  return b;
}

// Check-loss minimization by the MM (iteratively reweighted least squares)
// scheme for quantile regression.
inline Eigen::VectorXd quantile_regression(const Eigen::MatrixXd& design,
                                           const Eigen::VectorXd& response,
                                           double tau) {
  const Eigen::Index p = design.cols();
  const double scale = std::max(response.cwiseAbs().maxCoeff(), 1.0);
  const double eps = 1e-9 * scale;

  // Least-squares start.
  Eigen::MatrixXd ata = design.transpose() * design;
  ata.diagonal().array() += 1e-10;
  Eigen::VectorXd c =
      Eigen::LDLT<Eigen::MatrixXd>(ata).solve(design.transpose() * response);

  Eigen::VectorXd b_sum = design.colwise().sum();
  for (int iter = 0; iter < 500; ++iter) {
    Eigen::VectorXd u = response - design * c;
    Eigen::MatrixXd wbb = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd wrb = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < response.size(); ++i) {
      double w = 1.0 / (eps + std::abs(u(i)));
      wbb.noalias() += w * design.row(i).transpose() * design.row(i);
      wrb += w * response(i) * design.row(i).transpose();
    }
    wbb.diagonal().array() += 1e-12;
    Eigen::VectorXd c_new =
        Eigen::LDLT<Eigen::MatrixXd>(wbb).solve(wrb + (2.0 * tau - 1.0) * b_sum);
    double change = (c_new - c).cwiseAbs().maxCoeff();
    c = c_new;
    if (change < 1e-12 * scale) break;
  }
  return c;
}

}  // namespace detail

struct Rank {
  double tau = 0.0;        // covering grid level; 1.0 when beyond the top
  bool beyond_top = false;
};

// Nested bivariate quantile contours over a reference score cloud: polar
// transform about the componentwise median, angular quantile regression in a
// trigonometric basis per level, monotone rearrangement across levels at
// each query angle. Immutable after build.
class ContourChart {
 public:
  ContourChart(Eigen::Vector2d center, std::vector<double> tau_grid,
               int harmonics, std::vector<Eigen::VectorXd> angular_models,
               int reference_n, int jittered_points)
      : center_(std::move(center)), tau_grid_(std::move(tau_grid)),
        harmonics_(harmonics), angular_models_(std::move(angular_models)),
        reference_n_(reference_n), jittered_points_(jittered_points) {}

  const Eigen::Vector2d& center() const { return center_; }
  const std::vector<double>& tau_grid() const { return tau_grid_; }
  int harmonics() const { return harmonics_; }
  const std::vector<Eigen::VectorXd>& angular_models() const {
    return angular_models_;
  }
  int reference_n() const { return reference_n_; }
  int jittered_points() const { return jittered_points_; }

  // Radii of all level curves at angle theta, monotonically rearranged
  // (sorted) across the level grid and floored at a tiny positive value.
  std::vector<double> radii_at(double theta) const {
    Eigen::VectorXd b = detail::trig_basis(theta, harmonics_);
    std::vector<double> radii;
    radii.reserve(angular_models_.size());
    for (const auto& c : angular_models_)
      radii.push_back(std::max(b.dot(c), 1e-12));
    std::sort(radii.begin(), radii.end());
    return radii;
  }

  Rank rank_point(const Eigen::Vector2d& score2) const {
    Eigen::Vector2d d = score2 - center_;
    double r = d.norm();
    double theta = std::atan2(d.y(), d.x());
    std::vector<double> radii = radii_at(theta);
    for (size_t k = 0; k < radii.size(); ++k)
      if (r <= radii[k]) return Rank{tau_grid_[k], false};
    return Rank{1.0, true};
  }

 private:
  Eigen::Vector2d center_;
  std::vector<double> tau_grid_;
  int harmonics_;
  std::vector<Eigen::VectorXd> angular_models_;  // one per tau
  int reference_n_;
  int jittered_points_;
};

inline ContourChart build_chart(const Eigen::MatrixXd& scores,
                                std::vector<double> tau_grid = default_tau_grid(),
                                int harmonics = 3) {
  if (scores.cols() < 2)
    throw UsageError("build_chart: need at least two score columns");
  const Eigen::Index n = scores.rows();
  if (n < 50) throw DataError("build_chart: need at least 50 reference points");
  if (harmonics < 0) throw UsageError("build_chart: harmonics must be >= 0");
  if (tau_grid.empty()) throw UsageError("build_chart: empty tau grid");
  for (size_t k = 0; k < tau_grid.size(); ++k) {
    if (tau_grid[k] <= 0.0 || tau_grid[k] >= 1.0)
      throw UsageError("build_chart: tau levels must lie in (0,1)");
    if (k > 0 && tau_grid[k] <= tau_grid[k - 1])
      throw UsageError("build_chart: tau grid must be increasing");
  }

  std::vector<double> xs(static_cast<size_t>(n)), ys(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    xs[static_cast<size_t>(i)] = scores(i, 0);
    ys[static_cast<size_t>(i)] = scores(i, 1);
  }
  Eigen::Vector2d center(detail::median(xs), detail::median(ys));

  int jittered = 0;
  Eigen::VectorXd radii(n);
  Eigen::MatrixXd design(n, 2 * harmonics + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Vector2d d = scores.row(i).head<2>().transpose() - center;
    double r = d.norm();
    if (r < 1e-12) {
      r = 1e-9;  // points at the center get a tiny radius
      ++jittered;
    }
    radii(i) = r;
    design.row(i) = detail::trig_basis(std::atan2(d.y(), d.x()), harmonics);
  }

  std::vector<Eigen::VectorXd> models;
  for (double tau : tau_grid) {
    Eigen::VectorXd c = detail::quantile_regression(design, radii, tau);
    if (!c.allFinite())
      throw NumericalError("build_chart: quantile regression failed at tau=" +
                           std::to_string(tau));
    models.push_back(std::move(c));
  }
  return ContourChart(center, std::move(tau_grid), harmonics,
                      std::move(models), static_cast<int>(n), jittered);
}

struct ScreeningResult {
  std::string subject_id;
  Eigen::VectorXd scores;
  Rank rank;
  bool flagged = false;
};

template <typename Model>
ScreeningResult screen_subject(const Subject& subject, const Model& model,
                               const ContourChart& chart, double level = 0.95) {
  if (level <= 0.0 || level >= 1.0)
    throw UsageError("screen_subject: level must lie in (0,1)");
  ScreeningResult result;
  result.subject_id = subject.id;
  result.scores = project_scores(subject, model);
  if (result.scores.size() < 2)
    throw UsageError("screen_subject: model has fewer than two components");
  result.rank = chart.rank_point(result.scores.head<2>());
  double effective = result.rank.beyond_top ? 1.0 : result.rank.tau;
  result.flagged = effective > level;
  return result;
}

}  // namespace fpscreen

#endif  // FPSCREEN_CONTOUR_HPP_
