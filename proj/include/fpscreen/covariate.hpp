#ifndef FPSCREEN_COVARIATE_HPP_
#define FPSCREEN_COVARIATE_HPP_

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fpscreen/basis.hpp"
#include "fpscreen/dataset.hpp"
#include "fpscreen/errors.hpp"
#include "fpscreen/rng.hpp"
#include "fpscreen/rpca.hpp"

namespace fpscreen {

// Polynomial covariate functions μ(x) = (1, x, …, x^degree). degree 0 is the
// intercept-only case, which reduces the whole machinery to the plain fit.
struct MuSpec {
  int degree = 1;

  int dim() const { return degree + 1; }

  Eigen::VectorXd evaluate(double x) const {
    Eigen::VectorXd mu(dim());
    double pw = 1.0;
    for (int j = 0; j <= degree; ++j) {
      mu(j) = pw;
      pw *= x;
    }
    return mu;
  }
};

struct CovariateSummary {
  double mean = 0.0;
  double scale = 1.0;  // standardization scale (sample sd)
  double min = 0.0;
  double max = 0.0;
};

struct CovariateModel {
  BasisSystem basis;
  MuSpec mu_spec;
  Eigen::MatrixXd mean_coeffs;          // basis dim × ℓ_x, U(t,x) surface
  std::vector<Eigen::MatrixXd> alphas;  // K matrices, basis dim × ℓ_x
  Eigen::MatrixXd scores;               // N×K
  std::vector<std::string> subject_ids;
  CovariateSummary covariate_summary;
  std::vector<double> r_squared;
  std::vector<ComponentLog> convergence_log;
  std::uint64_t seed = 0;
  FitConfig config;

  int num_components() const { return static_cast<int>(alphas.size()); }

  double standardized_x(double x) const {
    return (x - covariate_summary.mean) / covariate_summary.scale;
  }

  // U(t,x) at a raw covariate value.
  double mean_value(double t, double x) const {
    return basis.evaluate(t).dot(mean_coeffs *
                                 mu_spec.evaluate(standardized_x(x)));
  }

  // φ_k(t,x) at a raw covariate value.
  double component_value(int k, double t, double x) const {
    return basis.evaluate(t).dot(alphas[static_cast<size_t>(k)] *
                                 mu_spec.evaluate(standardized_x(x)));
  }

  bool x_within_extrapolation_range(double x) const {
    double half = (covariate_summary.max - covariate_summary.min) / 2.0;
    double mid = (covariate_summary.max + covariate_summary.min) / 2.0;
    return std::abs(x - mid) <= 1.5 * half;
  }
};

namespace detail {

// Kronecker product; kron(C, W) pairs a μ index with a basis index in the
// same order as μ ⊗ π.
inline Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

inline Eigen::VectorXd kron_vec(const Eigen::VectorXd& mu,
                                const Eigen::VectorXd& pi) {
  if (mu.size() == 1) return mu(0) * pi;
  Eigen::VectorXd out(mu.size() * pi.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i)
    out.segment(i * pi.size(), pi.size()) = mu(i) * pi;
  return out;
}

// Shared state for the covariate-adjusted alternating regressions: the
// empirical inner product ⟨A,B⟩ = (1/N)Σ_i μ(X_i)ᵀAᵀWBμ(X_i) expressed as a
// Gram matrix M = C ⊗ W on vectorized coefficients.
struct CovWorkspace {
  const BasisSystem& basis;
  Eigen::VectorXd mus_flat;                // N×ℓ_x standardized μ values
  std::vector<Eigen::VectorXd> mu_i;       // per-subject μ(X_i)
  // Per-observation tensor design vectors μ(X_i)⊗π(T_ij); observation times
  // are fixed across iterations, so these are computed once per fit.
  std::vector<std::vector<Eigen::VectorXd>> design;
  Eigen::MatrixXd m;                       // empirical Gram on vec(A)
  Eigen::MatrixXd m_half;
  Eigen::MatrixXd m_half_inv;
  Eigen::VectorXd integral_vec;            // sign-convention functional

  CovWorkspace(const SparseDataset& data, const BasisSystem& basis_in,
               const MuSpec& mu, const CovariateSummary& summary)
      : basis(basis_in) {
    const auto n = static_cast<double>(data.subjects.size());
    const int lx = mu.dim();
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(lx, lx);
    Eigen::VectorXd mu_bar = Eigen::VectorXd::Zero(lx);
    for (const auto& s : data.subjects) {
      double x = 0.0;
      if (mu.degree > 0)
        x = (*s.covariate - summary.mean) / summary.scale;
      mu_i.push_back(mu.evaluate(x));
      c.noalias() += mu_i.back() * mu_i.back().transpose();
      mu_bar += mu_i.back();
      std::vector<Eigen::VectorXd> rows;
      rows.reserve(s.size());
      for (double t : s.times)
        rows.push_back(kron_vec(mu_i.back(), basis_in.evaluate(t)));
      design.push_back(std::move(rows));
    }
    c /= n;
    mu_bar /= n;
    m = kron(c, basis.gram());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.eigenvalues().minCoeff() <= 1e-12)
      throw DataError(
          "covariate fit: empirical inner product is degenerate in the "
          "covariate direction (constant covariate?)");
    Eigen::VectorXd sqrt_ev = es.eigenvalues().array().max(1e-12).sqrt();
    m_half = es.eigenvectors() * sqrt_ev.asDiagonal() *
             es.eigenvectors().transpose();
    m_half_inv = es.eigenvectors() * sqrt_ev.cwiseInverse().asDiagonal() *
                 es.eigenvectors().transpose();
    integral_vec = kron_vec(mu_bar, basis.basis_integral());
  }

  double norm(const Eigen::VectorXd& v) const { return std::sqrt(v.dot(m * v)); }

  Eigen::VectorXd orthogonalize(const Eigen::VectorXd& candidate,
                                const std::vector<Eigen::VectorXd>& previous) const {
    Eigen::VectorXd h = m_half * candidate;
    for (const auto& p : previous) {
      Eigen::VectorXd hp = m_half * p;
      h -= hp.dot(h) * hp;
    }
    double nrm = h.norm();
    if (nrm < 1e-12)
      throw DegeneracyError("covariate orthogonalize: candidate in span of "
                            "previous components");
    h /= nrm;
    return m_half_inv * h;
  }

  double convention_sign(const Eigen::VectorXd& v) const {
    double integral = integral_vec.dot(v);
    if (std::abs(integral) > 1e-12) return integral >= 0.0 ? 1.0 : -1.0;
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    return v(imax) >= 0.0 ? 1.0 : -1.0;
  }
};

inline Eigen::VectorXd cov_alpha_step(
    const SparseDataset& data, const CovWorkspace& ws,
    const Eigen::VectorXd& scores,
    const std::vector<Eigen::VectorXd>& previous = {}) {
  const auto p = static_cast<Eigen::Index>(ws.basis.dim()) *
                 static_cast<Eigen::Index>(ws.mu_i[0].size());
  Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd atb = Eigen::VectorXd::Zero(p);
  for (size_t i = 0; i < data.subjects.size(); ++i) {
    const Subject& s = data.subjects[i];
    const double r = scores(static_cast<Eigen::Index>(i));
    if (r == 0.0) continue;
    for (size_t j = 0; j < s.size(); ++j) {
      const Eigen::VectorXd& u = ws.design[i][j];
      ata.noalias() += (r * r) * u * u.transpose();
      atb += r * s.values[j] * u;
    }
  }
  if (!(ata.diagonal().maxCoeff() > 1e-10))
    throw DegeneracyError("covariate alpha step: normal matrix numerically zero");
  ata.diagonal().array() += 1e-10;
  Eigen::VectorXd v;
  if (previous.empty()) {
    v = Eigen::LDLT<Eigen::MatrixXd>(ata).solve(atb);
  } else {
    // Restrict the update to the subspace orthogonal (in the empirical inner
    // product) to the previous components, preserving objective descent.
    std::vector<Eigen::VectorXd> constraints;
    constraints.reserve(previous.size());
    for (const auto& a : previous) constraints.push_back(ws.m * a);
    v = fpscreen::detail::solve_with_constraints(ata, atb, constraints);
  }
  if (!v.allFinite())
    throw DegeneracyError("covariate alpha step: singular normal equations");
  return v;
}

inline Eigen::VectorXd cov_score_step(const SparseDataset& data,
                                      const CovWorkspace& ws,
                                      const Eigen::VectorXd& vec_alpha,
                                      std::vector<size_t>* degenerate = nullptr) {
  Eigen::VectorXd r(static_cast<Eigen::Index>(data.subjects.size()));
  for (size_t i = 0; i < data.subjects.size(); ++i) {
    const Subject& s = data.subjects[i];
    double num = 0.0, den = 0.0;
    for (size_t j = 0; j < s.size(); ++j) {
      double f = ws.design[i][j].dot(vec_alpha);
      num += s.values[j] * f;
      den += f * f;
    }
    if (den < 1e-12) {
      r(static_cast<Eigen::Index>(i)) = 0.0;
      if (degenerate) degenerate->push_back(i);
    } else {
      r(static_cast<Eigen::Index>(i)) = num / den;
    }
  }
  return r;
}

inline double cov_objective(const SparseDataset& data, const CovWorkspace& ws,
                            const Eigen::VectorXd& vec_alpha,
                            const Eigen::VectorXd& scores) {
  double ss = 0.0;
  size_t m_total = 0;
  for (size_t i = 0; i < data.subjects.size(); ++i) {
    const Subject& s = data.subjects[i];
    for (size_t j = 0; j < s.size(); ++j) {
      double resid = s.values[j] - scores(static_cast<Eigen::Index>(i)) *
                                       ws.design[i][j].dot(vec_alpha);
      ss += resid * resid;
    }
    m_total += s.size();
  }
  return ss / static_cast<double>(m_total);
}

// One component of the covariate-adjusted alternating regressions; parallel
// to fit_component with the empirical inner product in place of the gram one.
inline ComponentFit cov_fit_component(const SparseDataset& data,
                                      const CovWorkspace& ws,
                                      const std::vector<Eigen::VectorXd>& previous,
                                      const FitConfig& config,
                                      int component_index) {
  const size_t n = data.subjects.size();
  const size_t m_total = data.total_observations();
  const auto p = static_cast<Eigen::Index>(ws.basis.dim()) *
                 static_cast<Eigen::Index>(ws.mu_i[0].size());

  double total_ss = 0.0;
  for (const auto& s : data.subjects)
    for (double v : s.values) total_ss += v * v;

  auto degenerate_result = [&](std::vector<std::string> warnings) {
    ComponentFit out;
    for (Eigen::Index j = 0; j < p; ++j) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(p);
      e(j) = 1.0;
      try {
        out.alpha = ws.orthogonalize(e, previous);
        break;
      } catch (const DegeneracyError&) {
        continue;
      }
    }
    if (out.alpha.size() == 0)
      throw DegeneracyError("covariate fit: no orthogonal direction left");
    out.scores = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    out.log.component = component_index;
    out.log.objective = total_ss / static_cast<double>(m_total);
    warnings.push_back("degenerate_variation: zero scores returned");
    out.log.warnings = std::move(warnings);
    return out;
  };

  if (total_ss / static_cast<double>(m_total) < 1e-24)
    return degenerate_result({});

  std::optional<ComponentFit> best;
  int degenerate_restarts = 0;
  std::string last_failure;
  for (int restart = 0; restart < config.restarts; ++restart) {
    Rng rng = make_rng(config.seed, static_cast<std::uint64_t>(component_index),
                       static_cast<std::uint64_t>(restart));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::VectorXd scores(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < scores.size(); ++i) scores(i) = unif(rng);

    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(p);
    double prev_obj = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iterations = 0;
    std::vector<size_t> degenerate_subjects;
    try {
      for (int it = 1; it <= config.max_iter; ++it) {
        iterations = it;
        Eigen::VectorXd alpha_new = cov_alpha_step(data, ws, scores, previous);
        double nrm = ws.norm(alpha_new);
        if (nrm <= 1e-12)
          throw DegeneracyError("covariate fit: near-zero coefficient update");
        alpha_new /= nrm;
        alpha_new = ws.orthogonalize(alpha_new, previous);
        degenerate_subjects.clear();
        Eigen::VectorXd scores_new =
            cov_score_step(data, ws, alpha_new, &degenerate_subjects);
        double obj = cov_objective(data, ws, alpha_new, scores_new);
        if (obj > prev_obj * (1.0 + 1e-12) + 1e-300)
          throw NumericalError(
              "covariate fit: objective increased across an iteration");
        double param_change =
            std::max((scores_new - scores).cwiseAbs().maxCoeff(),
                     it > 1 ? (alpha_new - alpha).cwiseAbs().maxCoeff()
                            : std::numeric_limits<double>::infinity());
        double obj_change = prev_obj - obj;
        alpha = alpha_new;
        scores = scores_new;
        bool obj_ok =
            std::isfinite(prev_obj) && obj_change <= config.delta2 * (1.0 + obj);
        prev_obj = obj;
        if (param_change < config.delta1 && obj_ok) {
          converged = true;
          break;
        }
      }
    } catch (const DegeneracyError&) {
      ++degenerate_restarts;
      last_failure = "degeneracy";
      continue;
    }
    if (!converged) {
      last_failure = "max_iter exceeded";
      continue;
    }
    if (!best || prev_obj < best->log.objective) {
      ComponentFit fit;
      fit.alpha = alpha;
      fit.scores = scores;
      fit.log.component = component_index;
      fit.log.iterations = iterations;
      fit.log.objective = prev_obj;
      fit.log.restarts_used = restart + 1;
      fit.log.degenerate_subjects =
          static_cast<int>(degenerate_subjects.size());
      best = std::move(fit);
    }
  }
  if (!best) {
    if (degenerate_restarts == config.restarts)
      return degenerate_result({"all restarts degenerate"});
    throw ConvergenceError("covariate fit: no restart converged (" +
                           last_failure + ")");
  }
  double sign = ws.convention_sign(best->alpha);
  best->alpha *= sign;
  best->scores *= sign;
  return *best;
}

}  // namespace detail

// Covariate-adjusted fit: mean surface U(t,x) by least squares on the tensor
// design π(T_ij) ⊗ μ(X_i), then sequential component extraction under the
// empirical inner product averaged over observed covariates. With an
// intercept-only μ this reproduces fit() exactly at matched seeds.
// fixed_summary pins the covariate standardization (used by the bootstrap so
// replicate coefficients stay comparable).
inline CovariateModel fit_covariate(
    const SparseDataset& data, const BasisSystem& basis, const MuSpec& mu,
    const FitConfig& config,
    std::optional<CovariateSummary> fixed_summary = {}) {
  config.validate();
  data.validate();
  const size_t n = data.subjects.size();
  if (static_cast<int>(n) < 2 * mu.dim())
    throw DataError("fit_covariate: need at least 2*l_x subjects");

  CovariateSummary summary;
  if (mu.degree > 0) {
    if (!data.has_covariates())
      throw DataError("fit_covariate: every subject needs a covariate");
    if (fixed_summary) {
      summary = *fixed_summary;
    } else {
      double mean = 0.0;
      for (const auto& s : data.subjects) mean += *s.covariate;
      mean /= static_cast<double>(n);
      double var = 0.0;
      summary.min = summary.max = *data.subjects[0].covariate;
      for (const auto& s : data.subjects) {
        var += (*s.covariate - mean) * (*s.covariate - mean);
        summary.min = std::min(summary.min, *s.covariate);
        summary.max = std::max(summary.max, *s.covariate);
      }
      var /= static_cast<double>(n - 1);
      if (var <= 1e-24)
        throw DataError("fit_covariate: covariate is constant across subjects");
      summary.mean = mean;
      summary.scale = std::sqrt(var);
    }
  }

  detail::CovWorkspace ws(data, basis, mu, summary);
  const int p = basis.dim();
  const int lx = mu.dim();

  // Mean surface by pooled least squares on the tensor design.
  {
    if (data.total_observations() < static_cast<size_t>(p) * lx)
      throw DataError("fit_covariate: fewer observations than mean parameters");
  }
  Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(p * lx, p * lx);
  Eigen::VectorXd atb = Eigen::VectorXd::Zero(p * lx);
  for (size_t i = 0; i < n; ++i) {
    const Subject& s = data.subjects[i];
    for (size_t j = 0; j < s.size(); ++j) {
      const Eigen::VectorXd& u = ws.design[i][j];
      ata.noalias() += u * u.transpose();
      atb += s.values[j] * u;
    }
  }
  ata.diagonal().array() += 1e-10;
  Eigen::VectorXd mean_vec = Eigen::LDLT<Eigen::MatrixXd>(ata).solve(atb);
  if (!mean_vec.allFinite())
    throw DegeneracyError("fit_covariate: singular mean normal equations");

  CovariateModel model{basis, mu, Eigen::Map<Eigen::MatrixXd>(mean_vec.data(), p, lx),
                       {}, {}, {}, summary, {}, {}, config.seed, config};
  for (const auto& s : data.subjects) model.subject_ids.push_back(s.id);

  // Center by the fitted surface.
  SparseDataset centered = data;
  for (size_t i = 0; i < n; ++i) {
    Subject& s = centered.subjects[i];
    for (size_t j = 0; j < s.size(); ++j)
      s.values[j] -= ws.design[i][j].dot(mean_vec);
  }

  SparseDataset residual = centered;
  std::vector<Eigen::VectorXd> vec_alphas;
  model.scores.resize(static_cast<Eigen::Index>(n), 0);
  for (int k = 1; k <= config.max_components; ++k) {
    ComponentFit cf = detail::cov_fit_component(residual, ws, vec_alphas,
                                                config, k);
    vec_alphas.push_back(cf.alpha);
    model.alphas.emplace_back(
        Eigen::Map<Eigen::MatrixXd>(cf.alpha.data(), p, lx));
    model.scores.conservativeResize(Eigen::NoChange, k);
    model.scores.col(k - 1) = cf.scores;
    model.convergence_log.push_back(cf.log);

    // Residualize.
    for (size_t i = 0; i < n; ++i) {
      Subject& s = residual.subjects[i];
      for (size_t j = 0; j < s.size(); ++j)
        s.values[j] -=
            cf.scores(static_cast<Eigen::Index>(i)) * ws.design[i][j].dot(cf.alpha);
    }

    // R²(k) on the centered data.
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const Subject& s = centered.subjects[i];
      const Subject& res = residual.subjects[i];
      for (size_t j = 0; j < s.size(); ++j) {
        num += res.values[j] * res.values[j];
        double y = config.raw_r2_denominator ? data.subjects[i].values[j]
                                             : s.values[j];
        den += y * y;
      }
    }
    if (den <= 0.0) throw DataError("fit_covariate: zero total sum of squares");
    model.r_squared.push_back(1.0 - num / den);

    bool degenerate = cf.scores.cwiseAbs().maxCoeff() == 0.0;
    if (degenerate || model.r_squared.back() >= config.r2_target) break;
  }
  return model;
}

// Joint projection of a new subject's scores under a covariate model.
inline Eigen::VectorXd project_scores(const Subject& subject,
                                      const CovariateModel& model) {
  const int K = model.num_components();
  if (static_cast<int>(subject.size()) < K)
    throw InsufficientDataError("subject " + subject.id + " has " +
                                std::to_string(subject.size()) +
                                " observations; need at least " +
                                std::to_string(K));
  if (model.mu_spec.degree > 0 && !subject.covariate)
    throw DataError("subject " + subject.id + " has no covariate value");
  double x = model.mu_spec.degree > 0 ? *subject.covariate : 0.0;
  Eigen::MatrixXd design(static_cast<Eigen::Index>(subject.size()), K);
  Eigen::VectorXd y(static_cast<Eigen::Index>(subject.size()));
  for (size_t j = 0; j < subject.size(); ++j) {
    for (int k = 0; k < K; ++k)
      design(static_cast<Eigen::Index>(j), k) =
          model.component_value(k, subject.times[j], x);
    y(static_cast<Eigen::Index>(j)) =
        subject.values[j] - model.mean_value(subject.times[j], x);
  }
  Eigen::MatrixXd ata = design.transpose() * design;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ata);
  if (es.eigenvalues().minCoeff() <
      1e-12 * std::max(1.0, es.eigenvalues().maxCoeff()))
    throw DegeneracyError("project_scores: singular normal matrix for subject " +
                          subject.id);
  ata.diagonal().array() += 1e-10;
  return Eigen::LDLT<Eigen::MatrixXd>(ata).solve(design.transpose() * y);
}

// U(t,x) over a time grid at a raw covariate value. Returns the path; the
// caller can consult x_within_extrapolation_range for a warning.
inline std::vector<double> expected_path(const CovariateModel& model, double x,
                                         const std::vector<double>& grid) {
  std::vector<double> out;
  out.reserve(grid.size());
  for (double t : grid) {
    if (!model.basis.domain().contains(t))
      throw DomainError("expected_path: grid point outside the domain");
    out.push_back(model.mean_value(t, x));
  }
  return out;
}

enum class BootstrapTarget { kMeanCovariate, kComponentCovariate };

struct BootstrapTestResult {
  BootstrapTarget target = BootstrapTarget::kMeanCovariate;
  int component = 0;  // for kComponentCovariate, 0-based component index
  double statistic = 0.0;
  double p_value = 1.0;
  int replicates = 0;
};

namespace detail {

// Non-intercept columns of a coefficient matrix, stacked.
inline Eigen::VectorXd covariate_part(const Eigen::MatrixXd& coeffs) {
  const Eigen::Index p = coeffs.rows(), lx = coeffs.cols();
  Eigen::VectorXd out(p * (lx - 1));
  for (Eigen::Index c = 1; c < lx; ++c)
    out.segment((c - 1) * p, p) = coeffs.col(c);
  return out;
}

}  // namespace detail

// Case-resampling bootstrap test of whether a covariate-associated function
// (the x-part of the mean surface, or of component k) is zero: statistic
// T = max_j |ĉ_j|/ŝ_j with ŝ the bootstrap sd; the p-value is the fraction
// of replicates with max_j |ĉ*_j − ĉ_j|/ŝ_j ≥ T.
inline BootstrapTestResult bootstrap_test(const SparseDataset& data,
                                          const BasisSystem& basis,
                                          const MuSpec& mu,
                                          const FitConfig& config,
                                          BootstrapTarget target,
                                          int replicates, int component = 0) {
  if (replicates < 100)
    throw UsageError("bootstrap_test: need at least 100 replicates");
  if (mu.degree < 1)
    throw UsageError("bootstrap_test: needs a covariate-dependent mu");

  CovariateModel original = fit_covariate(data, basis, mu, config);
  if (target == BootstrapTarget::kComponentCovariate &&
      component >= original.num_components())
    throw UsageError("bootstrap_test: component index beyond fitted K");

  auto extract = [&](const CovariateModel& m) {
    return target == BootstrapTarget::kMeanCovariate
               ? detail::covariate_part(m.mean_coeffs)
               : detail::covariate_part(
                     m.alphas[static_cast<size_t>(component)]);
  };
  Eigen::VectorXd c_hat = extract(original);

  const size_t n = data.subjects.size();
  std::vector<Eigen::VectorXd> draws;
  int attempts = 0;
  const int max_attempts = 2 * replicates;
  int rep_index = 0;
  while (static_cast<int>(draws.size()) < replicates) {
    if (attempts >= max_attempts)
      throw ConvergenceError("bootstrap_test: too many failed replicates");
    ++attempts;
    Rng rng = make_rng(config.seed, 0xB007u, static_cast<std::uint64_t>(rep_index++));
    std::uniform_int_distribution<size_t> pick(0, n - 1);
    SparseDataset sample{{}, data.domain};
    for (size_t i = 0; i < n; ++i) {
      Subject s = data.subjects[pick(rng)];
      s.id = "b" + std::to_string(i);
      sample.subjects.push_back(std::move(s));
    }
    try {
      FitConfig rep_config = config;
      rep_config.seed = derive_seed(config.seed, 0xB007u + 1,
                                    static_cast<std::uint64_t>(rep_index));
      CovariateModel m =
          fit_covariate(sample, basis, mu, rep_config,
                        original.covariate_summary);
      if (target == BootstrapTarget::kComponentCovariate) {
        if (m.num_components() <= component) continue;
        // Sign-align the replicate component to the original fit.
        const Eigen::MatrixXd& a = m.alphas[static_cast<size_t>(component)];
        const Eigen::MatrixXd& a0 =
            original.alphas[static_cast<size_t>(component)];
        double inner = (a.array() * a0.array()).sum();
        draws.push_back(inner < 0 ? Eigen::VectorXd(-extract(m)) : extract(m));
      } else {
        draws.push_back(extract(m));
      }
    } catch (const NumericalError&) {
      continue;  // redraw
    }
  }

  const auto r = static_cast<Eigen::Index>(draws.size());
  Eigen::MatrixXd mat(r, c_hat.size());
  for (Eigen::Index i = 0; i < r; ++i) mat.row(i) = draws[static_cast<size_t>(i)];
  Eigen::VectorXd mean = mat.colwise().mean();
  Eigen::VectorXd sd(c_hat.size());
  for (Eigen::Index j = 0; j < c_hat.size(); ++j) {
    double ss = (mat.col(j).array() - mean(j)).square().sum() /
                static_cast<double>(r - 1);
    sd(j) = std::max(std::sqrt(ss), 1e-300);
  }

  double t_obs = (c_hat.cwiseAbs().array() / sd.array()).maxCoeff();
  int exceed = 0;
  for (Eigen::Index i = 0; i < r; ++i) {
    double t_star =
        ((mat.row(i).transpose() - c_hat).cwiseAbs().array() / sd.array())
            .maxCoeff();
    if (t_star >= t_obs) ++exceed;
  }

  BootstrapTestResult result;
  result.target = target;
  result.component = component;
  result.statistic = t_obs;
  result.p_value = static_cast<double>(exceed) / static_cast<double>(r);
  result.replicates = static_cast<int>(r);
  return result;
}

}  // namespace fpscreen

#endif  // FPSCREEN_COVARIATE_HPP_
