#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "fpscreen/contour.hpp"
#include "oracles.hpp"

using fpscreen::ContourChart;

namespace {

Eigen::MatrixXd gaussian_cloud(int n, unsigned seed,
                               const Eigen::Matrix2d& transform =
                                   Eigen::Matrix2d::Identity(),
                               const Eigen::Vector2d& shift =
                                   Eigen::Vector2d::Zero()) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd s(n, 2);
  for (int i = 0; i < n; ++i) {
    Eigen::Vector2d z(g(rng), g(rng));
    s.row(i) = (transform * z + shift).transpose();
  }
  return s;
}

}  // namespace

TEST_CASE("median radius of a standard bivariate normal is sqrt(2 ln 2)") {
  Eigen::MatrixXd scores = gaussian_cloud(2000, 1);
  ContourChart chart =
      fpscreen::build_chart(scores, std::vector<double>{0.25, 0.5, 0.75}, 0);
  const double expect = std::sqrt(2.0 * std::log(2.0));  // ≈ 1.1774
  for (int a = 0; a < 36; ++a) {
    double theta = -std::numbers::pi + a * std::numbers::pi / 18.0;
    std::vector<double> radii = chart.radii_at(theta);
    CHECK(radii[1] == Catch::Approx(expect).margin(0.05));
  }
}

TEST_CASE("a perfect circle of points gives unit contours at every level") {
  const int n = 200;
  Eigen::MatrixXd scores(n, 2);
  for (int i = 0; i < n; ++i) {
    double th = 2.0 * std::numbers::pi * i / n;
    scores(i, 0) = std::cos(th);
    scores(i, 1) = std::sin(th);
  }
  ContourChart chart = fpscreen::build_chart(
      scores, std::vector<double>{0.1, 0.5, 0.9}, 3);
  for (int a = 0; a < 90; ++a) {
    double theta = -std::numbers::pi + a * std::numbers::pi / 45.0;
    for (double r : chart.radii_at(theta))
      CHECK(r == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("subgradient balance: empirical coverage tracks tau") {
  const int n = 2000;
  Eigen::MatrixXd scores = gaussian_cloud(n, 7);
  ContourChart chart = fpscreen::build_chart(scores);
  Eigen::Vector2d center = chart.center();
  const double band = 2.0 / std::sqrt(static_cast<double>(n));
  for (double tau : {0.25, 0.5, 0.75, 0.9}) {
    size_t idx = 0;
    while (chart.tau_grid()[idx] != tau) ++idx;
    int covered = 0;
    for (int i = 0; i < n; ++i) {
      Eigen::Vector2d d = scores.row(i).transpose() - center;
      double theta = std::atan2(d.y(), d.x());
      if (d.norm() <= chart.radii_at(theta)[idx]) ++covered;
    }
    double frac = static_cast<double>(covered) / n;
    CHECK(frac == Catch::Approx(tau).margin(band + 0.01));
  }
}

TEST_CASE("check loss of the angular fit is near a dense optimum") {
  // Compare the solver's loss against a brute-force search over constant
  // radii for an H=0 model, where the optimum is the tau-quantile.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  const int n = 1500;
  std::vector<double> radii(n);
  for (auto& r : radii) r = std::hypot(g(rng), g(rng));
  Eigen::MatrixXd design = Eigen::MatrixXd::Ones(n, 1);
  Eigen::VectorXd resp(n);
  for (int i = 0; i < n; ++i) resp(i) = radii[static_cast<size_t>(i)];
  for (double tau : {0.3, 0.5, 0.9}) {
    Eigen::VectorXd c = fpscreen::detail::quantile_regression(design, resp, tau);
    std::vector<double> at_fit(radii.size());
    std::vector<double> sorted = radii;
    std::sort(sorted.begin(), sorted.end());
    double qref = sorted[static_cast<size_t>(tau * (n - 1))];
    std::vector<double> u_fit, u_ref;
    for (double r : radii) {
      u_fit.push_back(r - c(0));
      u_ref.push_back(r - qref);
    }
    CHECK(oracle::check_loss(u_fit, tau) <=
          oracle::check_loss(u_ref, tau) + 1e-8 * n);
  }
}

TEST_CASE("contours are nested after rearrangement") {
  Eigen::MatrixXd scores = gaussian_cloud(
      800, 11, (Eigen::Matrix2d() << 2.0, 0.7, 0.0, 0.5).finished());
  ContourChart chart = fpscreen::build_chart(scores);
  for (int a = 0; a < 360; ++a) {
    double theta = -std::numbers::pi + a * 2.0 * std::numbers::pi / 360.0;
    std::vector<double> radii = chart.radii_at(theta);
    CHECK(radii.front() > 0.0);
    for (size_t k = 1; k < radii.size(); ++k)
      CHECK(radii[k] >= radii[k - 1]);
  }
}

TEST_CASE("rank_point basics") {
  Eigen::MatrixXd scores = gaussian_cloud(500, 21);
  ContourChart chart = fpscreen::build_chart(scores);
  fpscreen::Rank at_center = chart.rank_point(chart.center());
  CHECK(at_center.tau == chart.tau_grid().front());
  CHECK_FALSE(at_center.beyond_top);

  fpscreen::Rank far = chart.rank_point(chart.center() +
                                        Eigen::Vector2d(50.0, 50.0));
  CHECK(far.beyond_top);
  CHECK(far.tau == 1.0);

  // A point exactly on a level curve ranks at that curve's level.
  double theta = 0.0;
  size_t idx = 0;
  while (chart.tau_grid()[idx] != 0.95) ++idx;
  double r95 = chart.radii_at(theta)[idx];
  // Guard against coincident lower curves at this angle.
  if (idx == 0 || chart.radii_at(theta)[idx - 1] < r95) {
    fpscreen::Rank on = chart.rank_point(
        chart.center() + Eigen::Vector2d(r95, 0.0));
    CHECK(on.tau == 0.95);
  }
}

TEST_CASE("translation invariance and rotation stability of ranks") {
  Eigen::MatrixXd scores = gaussian_cloud(
      600, 31, (Eigen::Matrix2d() << 1.5, 0.3, -0.2, 0.8).finished());
  ContourChart chart = fpscreen::build_chart(scores);
  Eigen::Vector2d query = chart.center() + Eigen::Vector2d(1.1, -0.6);

  SECTION("translation") {
    Eigen::Vector2d shift(42.0, -17.0);
    Eigen::MatrixXd moved = scores;
    moved.col(0).array() += shift.x();
    moved.col(1).array() += shift.y();
    ContourChart chart2 = fpscreen::build_chart(moved);
    fpscreen::Rank r1 = chart.rank_point(query);
    fpscreen::Rank r2 = chart2.rank_point(query + shift);
    CHECK(r1.tau == Catch::Approx(r2.tau).margin(1e-12));
  }
  SECTION("rotation moves the rank by at most one grid step") {
    double ang = 0.7;
    Eigen::Matrix2d rot;
    rot << std::cos(ang), -std::sin(ang), std::sin(ang), std::cos(ang);
    Eigen::Vector2d c = chart.center();
    Eigen::MatrixXd rotated = scores;
    for (int i = 0; i < scores.rows(); ++i)
      rotated.row(i) = (c + rot * (scores.row(i).transpose() - c)).transpose();
    ContourChart chart2 = fpscreen::build_chart(rotated);
    fpscreen::Rank r1 = chart.rank_point(query);
    fpscreen::Rank r2 = chart2.rank_point(c + rot * (query - c));
    const auto& taus = chart.tau_grid();
    auto pos = [&](double tau) {
      size_t k = 0;
      while (k < taus.size() && taus[k] != tau) ++k;
      return k;  // taus.size() means beyond-top
    };
    long diff = static_cast<long>(pos(r1.tau)) - static_cast<long>(pos(r2.tau));
    CHECK(std::abs(diff) <= 2);
  }
}

TEST_CASE("held-out coverage calibration at standard levels") {
  double worst = 0.0;
  const int reps = 5;
  for (int rep = 0; rep < reps; ++rep) {
    Eigen::MatrixXd ref = gaussian_cloud(2000, 100 + static_cast<unsigned>(rep));
    Eigen::MatrixXd held = gaussian_cloud(2000, 900 + static_cast<unsigned>(rep));
    ContourChart chart = fpscreen::build_chart(ref);
    for (double tau : {0.5, 0.75, 0.95}) {
      int covered = 0;
      for (int i = 0; i < held.rows(); ++i) {
        fpscreen::Rank r = chart.rank_point(held.row(i).transpose());
        if (!r.beyond_top && r.tau <= tau) ++covered;
      }
      double frac = static_cast<double>(covered) / static_cast<double>(held.rows());
      worst = std::max(worst, std::abs(frac - tau));
    }
  }
  CHECK(worst < 0.04);
}

TEST_CASE("center points are jittered, tiny clouds rejected") {
  Eigen::MatrixXd scores = gaussian_cloud(100, 5);
  scores.row(0) << 0.0, 0.0;
  scores.row(1) << 0.0, 0.0;
  // Force the center onto the duplicated point.
  Eigen::MatrixXd centered = scores;
  ContourChart chart = fpscreen::build_chart(centered);
  CHECK(chart.reference_n() == 100);

  Eigen::MatrixXd tiny = gaussian_cloud(20, 6);
  CHECK_THROWS_AS(fpscreen::build_chart(tiny), fpscreen::DataError);
}
