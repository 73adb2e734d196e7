#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "fpscreen/covariate.hpp"
#include "fpscreen/rpca.hpp"

using fpscreen::BasisSystem;
using fpscreen::FitConfig;
using fpscreen::Interval;
using fpscreen::MuSpec;

namespace {

std::vector<double> grid(double lo, double hi, int n) {
  std::vector<double> t(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    t[static_cast<size_t>(i)] = lo + (hi - lo) * i / (n - 1);
  return t;
}

BasisSystem unit_basis(int degree = 2, int knots = 1) {
  return fpscreen::build_basis(Interval{0.0, 1.0}, degree, knots,
                               grid(0.0, 1.0, 301));
}

// Y_ij = u1(t) + x_i u2(t) + r_i (pi(t)^T a1) mu_part + noise, everything in
// basis span. mean_cols: basis-dim × 2, comp_cols: basis-dim × 2.
fpscreen::SparseDataset make_cov_data(const BasisSystem& basis,
                                      const Eigen::MatrixXd& mean_cols,
                                      const Eigen::MatrixXd& comp_cols,
                                      const Eigen::VectorXd& scores, int m,
                                      unsigned seed, double noise_sd = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ut(basis.domain().lo,
                                            basis.domain().hi);
  std::uniform_real_distribution<double> ux(-1.0, 1.0);
  std::normal_distribution<double> g;
  fpscreen::SparseDataset d;
  d.domain = basis.domain();
  for (int i = 0; i < scores.size(); ++i) {
    fpscreen::Subject s;
    s.id = "s" + std::to_string(i);
    double x = ux(rng);
    s.covariate = x;
    Eigen::Vector2d mu(1.0, x);
    for (int j = 0; j < m; ++j) {
      double t = ut(rng);
      Eigen::VectorXd pi = basis.evaluate(t);
      double y = pi.dot(mean_cols * mu) + scores(i) * pi.dot(comp_cols * mu);
      if (noise_sd > 0) y += noise_sd * g(rng);
      s.times.push_back(t);
      s.values.push_back(y);
    }
    s.sort_by_time();
    d.subjects.push_back(std::move(s));
  }
  return d;
}

}  // namespace

TEST_CASE("intercept-only covariate fit reproduces the plain fit exactly") {
  BasisSystem basis = unit_basis();
  Eigen::MatrixXd mean_cols = Eigen::MatrixXd::Zero(basis.dim(), 2);
  mean_cols.col(0) << 1.0, 2.0, 1.5, 0.5;
  Eigen::MatrixXd comp_cols = Eigen::MatrixXd::Zero(basis.dim(), 2);
  comp_cols.col(0) << 0.5, -1.0, 1.0, 0.2;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 2.0);
  Eigen::VectorXd scores = Eigen::VectorXd::NullaryExpr(
      120, [&](Eigen::Index) { return g(rng); });
  fpscreen::SparseDataset d =
      make_cov_data(basis, mean_cols, comp_cols, scores, 6, 20, 0.3);

  FitConfig cfg;
  cfg.seed = 77;
  cfg.max_components = 2;
  cfg.r2_target = 0.95;
  fpscreen::ComponentModel plain = fpscreen::fit(d, basis, cfg);
  fpscreen::CovariateModel cov =
      fpscreen::fit_covariate(d, basis, MuSpec{0}, cfg);

  REQUIRE(cov.num_components() == plain.num_components());
  CHECK((cov.mean_coeffs.col(0) - plain.mean.coefficients)
            .cwiseAbs()
            .maxCoeff() < 1e-10);
  for (int k = 0; k < plain.num_components(); ++k)
    CHECK((cov.alphas[static_cast<size_t>(k)].col(0) -
           plain.alphas[static_cast<size_t>(k)])
              .cwiseAbs()
              .maxCoeff() < 1e-10);
  CHECK((cov.scores - plain.scores).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("noiseless covariate-dependent mean surface is recovered") {
  BasisSystem basis = unit_basis();
  Eigen::MatrixXd mean_cols(basis.dim(), 2);
  mean_cols.col(0) << 2.0, 1.0, 3.0, 2.5;
  mean_cols.col(1) << 0.5, -0.5, 1.0, 0.0;
  // Mean-only data: any component signal with a nonzero sample score mean
  // would be partially absorbed by the pooled least-squares mean surface,
  // so exact recovery is only guaranteed without one.
  Eigen::MatrixXd comp_cols = Eigen::MatrixXd::Zero(basis.dim(), 2);
  Eigen::VectorXd scores = Eigen::VectorXd::Zero(100);
  fpscreen::SparseDataset d =
      make_cov_data(basis, mean_cols, comp_cols, scores, 6, 31);

  FitConfig cfg;
  cfg.seed = 6;
  cfg.max_components = 1;
  cfg.r2_target = 1.0;
  fpscreen::CovariateModel model =
      fpscreen::fit_covariate(d, basis, MuSpec{1}, cfg);

  // Compare the fitted surface on a (t, x) grid; coefficients live in the
  // standardized-x parameterization, so compare values, not columns.
  for (double x : {-0.8, -0.2, 0.4, 0.9}) {
    Eigen::Vector2d mu(1.0, x);
    for (int gidx = 0; gidx <= 20; ++gidx) {
      double t = gidx / 20.0;
      double truth = basis.evaluate(t).dot(mean_cols * mu);
      CHECK(model.mean_value(t, x) == Catch::Approx(truth).margin(1e-6));
    }
  }
}

TEST_CASE("fitted models satisfy the empirical constraints") {
  BasisSystem basis = unit_basis();
  Eigen::MatrixXd mean_cols(basis.dim(), 2);
  mean_cols.col(0) << 1.0, 1.5, 2.0, 1.0;
  mean_cols.col(1) << 0.3, 0.6, -0.4, 0.2;
  Eigen::MatrixXd comp_cols(basis.dim(), 2);
  comp_cols.col(0) << 1.0, -0.2, 0.5, 0.9;
  comp_cols.col(1) << 0.2, 0.4, -0.3, 0.1;
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g(0.0, 1.5);
  Eigen::VectorXd scores = Eigen::VectorXd::NullaryExpr(
      150, [&](Eigen::Index) { return g(rng); });
  fpscreen::SparseDataset d =
      make_cov_data(basis, mean_cols, comp_cols, scores, 6, 15, 0.5);

  FitConfig cfg;
  cfg.seed = 8;
  cfg.max_components = 2;
  cfg.r2_target = 1.0;
  fpscreen::CovariateModel model =
      fpscreen::fit_covariate(d, basis, MuSpec{1}, cfg);
  REQUIRE(model.num_components() >= 1);

  // Empirical norm/orthogonality by direct quadrature over t, averaged over
  // the observed covariates.
  auto emp_inner = [&](const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    double acc = 0.0;
    for (const auto& s : d.subjects) {
      Eigen::VectorXd mu = model.mu_spec.evaluate(
          model.standardized_x(*s.covariate));
      Eigen::VectorXd a = A * mu, b = B * mu;
      acc += a.dot(basis.gram() * b);
    }
    return acc / static_cast<double>(d.subjects.size());
  };
  for (int k = 0; k < model.num_components(); ++k) {
    CHECK(emp_inner(model.alphas[static_cast<size_t>(k)],
                    model.alphas[static_cast<size_t>(k)]) ==
          Catch::Approx(1.0).margin(1e-6));
    for (int l = 0; l < k; ++l)
      CHECK(std::abs(emp_inner(model.alphas[static_cast<size_t>(k)],
                               model.alphas[static_cast<size_t>(l)])) < 1e-5);
  }
}

TEST_CASE("covariate standardization leaves fitted values unchanged") {
  BasisSystem basis = unit_basis();
  Eigen::MatrixXd mean_cols(basis.dim(), 2);
  mean_cols.col(0) << 1.0, 2.0, 0.5, 1.5;
  mean_cols.col(1) << 0.4, -0.2, 0.7, 0.1;
  Eigen::MatrixXd comp_cols = Eigen::MatrixXd::Zero(basis.dim(), 2);
  comp_cols.col(0) << 0.8, 0.1, -0.5, 1.0;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  Eigen::VectorXd scores = Eigen::VectorXd::NullaryExpr(
      80, [&](Eigen::Index) { return g(rng); });
  fpscreen::SparseDataset d =
      make_cov_data(basis, mean_cols, comp_cols, scores, 6, 44, 0.2);

  FitConfig cfg;
  cfg.seed = 21;
  cfg.max_components = 1;
  cfg.r2_target = 1.0;
  fpscreen::CovariateModel m1 =
      fpscreen::fit_covariate(d, basis, MuSpec{1}, cfg);

  fpscreen::SparseDataset shifted = d;
  for (auto& s : shifted.subjects) s.covariate = (*s.covariate - 3.0) / 2.0;
  fpscreen::CovariateModel m2 =
      fpscreen::fit_covariate(shifted, basis, MuSpec{1}, cfg);

  for (size_t i = 0; i < d.subjects.size(); i += 7) {
    const auto& s = d.subjects[i];
    for (size_t j = 0; j < s.times.size(); ++j) {
      double f1 = m1.mean_value(s.times[j], *s.covariate) +
                  m1.scores(static_cast<Eigen::Index>(i), 0) *
                      m1.component_value(0, s.times[j], *s.covariate);
      double f2 = m2.mean_value(s.times[j],
                                *shifted.subjects[i].covariate) +
                  m2.scores(static_cast<Eigen::Index>(i), 0) *
                      m2.component_value(0, s.times[j],
                                         *shifted.subjects[i].covariate);
      CHECK(f1 == Catch::Approx(f2).margin(1e-8));
    }
  }
}

TEST_CASE("constant covariate is rejected") {
  BasisSystem basis = unit_basis();
  Eigen::MatrixXd mean_cols = Eigen::MatrixXd::Zero(basis.dim(), 2);
  mean_cols.col(0).setOnes();
  Eigen::MatrixXd comp_cols = Eigen::MatrixXd::Zero(basis.dim(), 2);
  comp_cols.col(0).setOnes();
  Eigen::VectorXd scores = Eigen::VectorXd::LinSpaced(30, -1.0, 1.0);
  fpscreen::SparseDataset d =
      make_cov_data(basis, mean_cols, comp_cols, scores, 5, 50, 0.1);
  for (auto& s : d.subjects) s.covariate = 7.0;
  FitConfig cfg;
  CHECK_THROWS_AS(fpscreen::fit_covariate(d, basis, MuSpec{1}, cfg),
                  fpscreen::DataError);
}

TEST_CASE("expected_path is affine in x for a linear mu") {
  BasisSystem basis = unit_basis();
  Eigen::MatrixXd mean_cols(basis.dim(), 2);
  mean_cols.col(0) << 1.0, 0.5, 2.0, 1.0;
  mean_cols.col(1) << 0.2, 0.8, -0.1, 0.3;
  Eigen::MatrixXd comp_cols = Eigen::MatrixXd::Zero(basis.dim(), 2);
  comp_cols.col(0) << 0.6, -0.4, 0.2, 0.7;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  Eigen::VectorXd scores = Eigen::VectorXd::NullaryExpr(
      60, [&](Eigen::Index) { return g(rng); });
  fpscreen::SparseDataset d =
      make_cov_data(basis, mean_cols, comp_cols, scores, 6, 52, 0.1);
  FitConfig cfg;
  cfg.seed = 99;
  cfg.max_components = 1;
  cfg.r2_target = 1.0;
  fpscreen::CovariateModel model =
      fpscreen::fit_covariate(d, basis, MuSpec{1}, cfg);

  std::vector<double> tg = grid(0.05, 0.95, 10);
  std::vector<double> pa = fpscreen::expected_path(model, -0.5, tg);
  std::vector<double> pb = fpscreen::expected_path(model, 0.7, tg);
  std::vector<double> pm = fpscreen::expected_path(model, 0.1, tg);
  for (size_t j = 0; j < tg.size(); ++j)
    CHECK(pm[j] == Catch::Approx((pa[j] + pb[j]) / 2.0).margin(1e-12));

  CHECK_THROWS_AS(fpscreen::expected_path(model, 0.0, {2.0}),
                  fpscreen::DomainError);
}

TEST_CASE("bootstrap test flags a strong covariate effect") {
  BasisSystem basis = fpscreen::build_basis(Interval{0.0, 1.0}, 1, 1,
                                            grid(0.0, 1.0, 301));
  Eigen::MatrixXd mean_cols(basis.dim(), 2);
  mean_cols.col(0) << 1.0, 2.0, 1.0;
  mean_cols.col(1) << 3.0, -2.0, 4.0;  // strong x-dependence
  Eigen::MatrixXd comp_cols = Eigen::MatrixXd::Zero(basis.dim(), 2);
  comp_cols.col(0) << 0.5, 1.0, -0.5;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  Eigen::VectorXd scores = Eigen::VectorXd::NullaryExpr(
      80, [&](Eigen::Index) { return g(rng); });
  fpscreen::SparseDataset d =
      make_cov_data(basis, mean_cols, comp_cols, scores, 5, 60, 0.2);

  FitConfig cfg;
  cfg.seed = 30;
  cfg.max_components = 1;
  cfg.r2_target = 1.0;
  cfg.restarts = 1;
  cfg.max_iter = 5000;  // resampled data can converge slowly
  fpscreen::BootstrapTestResult res = fpscreen::bootstrap_test(
      d, basis, MuSpec{1}, cfg, fpscreen::BootstrapTarget::kMeanCovariate, 100);
  CHECK(res.replicates == 100);
  CHECK(res.p_value <= 0.01);

  CHECK_THROWS_AS(
      fpscreen::bootstrap_test(d, basis, MuSpec{1}, cfg,
                               fpscreen::BootstrapTarget::kMeanCovariate, 0),
      fpscreen::UsageError);
}
