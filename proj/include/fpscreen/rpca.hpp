#ifndef FPSCREEN_RPCA_HPP_
#define FPSCREEN_RPCA_HPP_

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

namespace fpscreen {

struct FitConfig {
  double delta1 = 1e-6;     // max absolute parameter change
  double delta2 = 1e-9;     // relative objective change
  int max_iter = 500;
  int max_components = 4;
  double r2_target = 0.90;
  int restarts = 3;
  std::uint64_t seed = 0;
  // Use uncentered values in the R² denominator instead of the default
  // centered ones.
  bool raw_r2_denominator = false;

  void validate() const {
    if (delta1 <= 0 || delta2 <= 0) throw UsageError("tolerances must be positive");
    if (max_iter <= 0 || max_components <= 0 || restarts <= 0)
      throw UsageError("max_iter, max_components and restarts must be positive");
    if (r2_target <= 0 || r2_target > 1)
      throw UsageError("r2_target must lie in (0,1]");
  }
};

struct ComponentLog {
  int component = 0;
  int iterations = 0;
  double objective = 0.0;
  int restarts_used = 0;
  int degenerate_subjects = 0;
  std::vector<std::string> warnings;
};

struct ComponentModel {
  BasisSystem basis;
  MeanModel mean;
  std::vector<Eigen::VectorXd> alphas;  // K unit-gram-norm coefficient vectors
  Eigen::MatrixXd scores;               // N×K sequential fitted scores
  std::vector<std::string> subject_ids;
  std::vector<double> r_squared;        // R²(1..K)
  std::vector<ComponentLog> convergence_log;
  std::uint64_t seed = 0;
  FitConfig config;

  int num_components() const { return static_cast<int>(alphas.size()); }

  double component_value(int k, double t) const {
    return basis.evaluate(t).dot(alphas[static_cast<size_t>(k)]);
  }
};

// Working objective: mean squared residual over all observations for the
// current rank-one approximation.
inline double working_objective(const SparseDataset& data,
                                const BasisSystem& basis,
                                const Eigen::VectorXd& alpha,
                                const Eigen::VectorXd& scores) {
  double ss = 0.0;
  size_t m_total = 0;
  for (size_t i = 0; i < data.subjects.size(); ++i) {
    const Subject& s = data.subjects[i];
    for (size_t j = 0; j < s.size(); ++j) {
      double resid = s.values[j] - scores(static_cast<Eigen::Index>(i)) *
                                       basis.evaluate(s.times[j]).dot(alpha);
      ss += resid * resid;
    }
    m_total += s.size();
  }
  return ss / static_cast<double>(m_total);
}

// Least-squares update of the coefficient vector given fixed scores: per-row
// design r_i·π(T_ij), ridge jitter 1e-10. The result is NOT standardized.
inline Eigen::VectorXd alpha_step(const SparseDataset& data,
                                  const BasisSystem& basis,
                                  const Eigen::VectorXd& scores) {
  const int p = basis.dim();
  Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd atb = Eigen::VectorXd::Zero(p);
  for (size_t i = 0; i < data.subjects.size(); ++i) {
    const Subject& s = data.subjects[i];
    const double r = scores(static_cast<Eigen::Index>(i));
    if (r == 0.0) continue;
    for (size_t j = 0; j < s.size(); ++j) {
      Eigen::VectorXd pi = basis.evaluate(s.times[j]);
      ata.noalias() += (r * r) * pi * pi.transpose();
      atb += r * s.values[j] * pi;
    }
  }
  double scale = ata.diagonal().maxCoeff();
  if (!(scale > 1e-10))
    throw DegeneracyError("alpha_step: normal matrix is numerically zero");
  ata.diagonal().array() += 1e-10;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(ata);
  Eigen::VectorXd alpha = ldlt.solve(atb);
  if (!alpha.allFinite())
    throw DegeneracyError("alpha_step: singular normal equations");
  return alpha;
}

namespace detail {

// Minimize ½αᵀAα − bᵀα subject to cᵀα = 0 for each constraint column c, via
// the bordered KKT system [A C; Cᵀ 0][α; λ] = [b; 0].
inline Eigen::VectorXd solve_with_constraints(
    const Eigen::MatrixXd& ata, const Eigen::VectorXd& atb,
    const std::vector<Eigen::VectorXd>& constraints) {
  const Eigen::Index p = atb.size();
  const auto k = static_cast<Eigen::Index>(constraints.size());
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(p + k, p + k);
  kkt.topLeftCorner(p, p) = ata;
  for (Eigen::Index l = 0; l < k; ++l) {
    kkt.block(0, p + l, p, 1) = constraints[static_cast<size_t>(l)];
    kkt.block(p + l, 0, 1, p) =
        constraints[static_cast<size_t>(l)].transpose();
  }
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p + k);
  rhs.head(p) = atb;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
  if (!lu.isInvertible())
    throw DegeneracyError("constrained alpha step: singular KKT system");
  Eigen::VectorXd sol = lu.solve(rhs);
  if (!sol.allFinite())
    throw DegeneracyError("constrained alpha step: non-finite solution");
  return sol.head(p);
}

}  // namespace detail

// Alpha update restricted to the subspace gram-orthogonal to the previous
// component directions, so the update never increases the objective even when
// earlier components are held fixed. Reduces to the unconstrained update when
// `previous` is empty.
inline Eigen::VectorXd alpha_step(const SparseDataset& data,
                                  const BasisSystem& basis,
                                  const Eigen::VectorXd& scores,
                                  const std::vector<Eigen::VectorXd>& previous) {
  if (previous.empty()) return alpha_step(data, basis, scores);
  const int p = basis.dim();
  Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd atb = Eigen::VectorXd::Zero(p);
  for (size_t i = 0; i < data.subjects.size(); ++i) {
    const Subject& s = data.subjects[i];
    const double r = scores(static_cast<Eigen::Index>(i));
    if (r == 0.0) continue;
    for (size_t j = 0; j < s.size(); ++j) {
      Eigen::VectorXd pi = basis.evaluate(s.times[j]);
      ata.noalias() += (r * r) * pi * pi.transpose();
      atb += r * s.values[j] * pi;
    }
  }
  if (!(ata.diagonal().maxCoeff() > 1e-10))
    throw DegeneracyError("alpha_step: normal matrix is numerically zero");
  ata.diagonal().array() += 1e-10;
  std::vector<Eigen::VectorXd> constraints;
  constraints.reserve(previous.size());
  for (const auto& a : previous) constraints.push_back(basis.gram() * a);
  Eigen::VectorXd alpha = detail::solve_with_constraints(ata, atb, constraints);
  if (!alpha.allFinite())
    throw DegeneracyError("alpha_step: singular normal equations");
  return alpha;
}

// Rescale to unit gram-norm (‖πᵀα‖ = 1); direction preserved.
inline Eigen::VectorXd standardize(const BasisSystem& basis,
                                   const Eigen::VectorXd& alpha) {
  double norm = basis.gram_norm(alpha);
  if (norm <= 1e-12)
    throw DegeneracyError("standardize: coefficient vector has near-zero norm");
  return alpha / norm;
}

// N separate one-parameter regressions r_i = Σ_j Y_ij f(T_ij) / Σ_j f(T_ij)²
// with f = πᵀα. Subjects with near-zero regressor energy get score 0 and are
// reported through `degenerate` (never fatal).
inline Eigen::VectorXd score_step(const SparseDataset& data,
                                  const BasisSystem& basis,
                                  const Eigen::VectorXd& alpha,
                                  std::vector<size_t>* degenerate = nullptr) {
  Eigen::VectorXd r(static_cast<Eigen::Index>(data.subjects.size()));
  for (size_t i = 0; i < data.subjects.size(); ++i) {
    const Subject& s = data.subjects[i];
    double num = 0.0, den = 0.0;
    for (size_t j = 0; j < s.size(); ++j) {
      double f = basis.evaluate(s.times[j]).dot(alpha);
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

// ξ_ij = Y_ij − r_i π(T_ij)ᵀα.
inline SparseDataset residualize(const SparseDataset& data,
                                 const BasisSystem& basis,
                                 const Eigen::VectorXd& alpha,
                                 const Eigen::VectorXd& scores) {
  SparseDataset out = data;
  for (size_t i = 0; i < out.subjects.size(); ++i) {
    Subject& s = out.subjects[i];
    for (size_t j = 0; j < s.size(); ++j)
      s.values[j] -= scores(static_cast<Eigen::Index>(i)) *
                     basis.evaluate(s.times[j]).dot(alpha);
  }
  return out;
}

namespace detail {

// ∫φ dt ≥ 0; ties broken by the sign of the largest-magnitude coefficient.
inline double convention_sign(const BasisSystem& basis,
                              const Eigen::VectorXd& alpha) {
  double integral = basis.basis_integral().dot(alpha);
  if (std::abs(integral) > 1e-12) return integral >= 0.0 ? 1.0 : -1.0;
  Eigen::Index imax = 0;
  alpha.cwiseAbs().maxCoeff(&imax);
  return alpha(imax) >= 0.0 ? 1.0 : -1.0;
}

}  // namespace detail

struct ComponentFit {
  Eigen::VectorXd alpha;
  Eigen::VectorXd scores;
  ComponentLog log;
};

// One alternating-regressions extraction on residualized data: uniform(0,1)
// score initialization, then alpha_step → standardize → orthogonalize →
// score_step until both the parameter-change and objective-change conditions
// hold. Best of `config.restarts` seeded restarts by final objective.
inline ComponentFit fit_component(const SparseDataset& data,
                                  const BasisSystem& basis,
                                  const std::vector<Eigen::VectorXd>& previous,
                                  const FitConfig& config,
                                  int component_index = 1) {
  config.validate();
  const size_t n = data.subjects.size();
  const size_t m_total = data.total_observations();
  if (m_total < static_cast<size_t>(basis.dim()))
    throw DataError("fit_component: fewer observations than basis dimension");

  double total_ss = 0.0;
  for (const auto& s : data.subjects)
    for (double v : s.values) total_ss += v * v;

  auto degenerate_result = [&](std::vector<std::string> warnings) {
    // No usable variation: emit a valid unit-norm direction with zero scores.
    ComponentFit out;
    for (int j = 0; j < basis.dim(); ++j) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(basis.dim());
      e(j) = 1.0;
      try {
        out.alpha = basis.orthogonalize(e, previous);
        break;
      } catch (const DegeneracyError&) {
        continue;
      }
    }
    if (out.alpha.size() == 0)
      throw DegeneracyError("fit_component: no direction orthogonal to "
                            "previous components");
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

    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(basis.dim());
    double prev_obj = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iterations = 0;
    std::vector<size_t> degenerate_subjects;
    try {
      for (int it = 1; it <= config.max_iter; ++it) {
        iterations = it;
        Eigen::VectorXd alpha_new = alpha_step(data, basis, scores, previous);
        alpha_new = standardize(basis, alpha_new);
        alpha_new = basis.orthogonalize(alpha_new, previous);
        degenerate_subjects.clear();
        Eigen::VectorXd scores_new =
            score_step(data, basis, alpha_new, &degenerate_subjects);
        double obj = working_objective(data, basis, alpha_new, scores_new);
        if (obj > prev_obj * (1.0 + 1e-12) + 1e-300)
          throw NumericalError(
              "fit_component: objective increased across an iteration");

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
      last_failure = "max_iter " + std::to_string(config.max_iter) +
                     " exceeded (objective " + std::to_string(prev_obj) + ")";
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
      if (!degenerate_subjects.empty())
        fit.log.warnings.push_back(
            std::to_string(degenerate_subjects.size()) +
            " subject(s) with near-zero regressor energy scored 0");
      best = std::move(fit);
    }
  }

  if (!best) {
    if (degenerate_restarts == config.restarts)
      return degenerate_result({"all restarts degenerate"});
    throw ConvergenceError("fit_component: no restart converged (" +
                           last_failure + ")");
  }

  double sign = detail::convention_sign(basis, best->alpha);
  best->alpha *= sign;
  best->scores *= sign;
  return *best;
}

// R²(K) against the centered dataset: 1 − Σ(Y* − Σ_{k≤K} r̂_k πᵀα̂_k)² / ΣY*².
// With raw_denominator the denominator uses the uncentered values instead.
inline double r_squared(const SparseDataset& centered,
                        const BasisSystem& basis,
                        const std::vector<Eigen::VectorXd>& alphas,
                        const Eigen::MatrixXd& scores, int K,
                        const SparseDataset* raw = nullptr) {
  if (K < 0 || K > static_cast<int>(alphas.size()))
    throw UsageError("r_squared: K exceeds the number of fitted components");
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < centered.subjects.size(); ++i) {
    const Subject& s = centered.subjects[i];
    for (size_t j = 0; j < s.size(); ++j) {
      Eigen::VectorXd pi = basis.evaluate(s.times[j]);
      double recon = 0.0;
      for (int k = 0; k < K; ++k)
        recon += scores(static_cast<Eigen::Index>(i), k) *
                 pi.dot(alphas[static_cast<size_t>(k)]);
      double resid = s.values[j] - recon;
      num += resid * resid;
      double y = raw ? raw->subjects[i].values[j] : s.values[j];
      den += y * y;
    }
  }
  if (den <= 0.0) throw DataError("r_squared: zero total sum of squares");
  return 1.0 - num / den;
}

// Full sequential fit: center, then extract components until R²(K) reaches
// the target or max_components is hit. Deterministic given config.seed.
inline ComponentModel fit(const SparseDataset& data, const BasisSystem& basis,
                          const FitConfig& config,
                          std::optional<BasisSystem> mean_basis = {}) {
  config.validate();
  if (data.subjects.size() < 2) throw DataError("fit: need at least 2 subjects");
  data.validate();

  ComponentModel model{basis, fit_mean(data, mean_basis ? *mean_basis : basis),
                       {}, {}, {}, {}, {}, config.seed, config};
  for (const auto& s : data.subjects) model.subject_ids.push_back(s.id);

  SparseDataset centered = center(data, model.mean);
  SparseDataset residual = centered;
  const Eigen::Index n = static_cast<Eigen::Index>(data.subjects.size());
  model.scores.resize(n, 0);

  for (int k = 1; k <= config.max_components; ++k) {
    ComponentFit cf = fit_component(residual, basis, model.alphas, config, k);
    model.alphas.push_back(cf.alpha);
    model.scores.conservativeResize(n, k);
    model.scores.col(k - 1) = cf.scores;
    model.convergence_log.push_back(cf.log);
    residual = residualize(residual, basis, cf.alpha, cf.scores);
    model.r_squared.push_back(
        r_squared(centered, basis, model.alphas, model.scores, k,
                  config.raw_r2_denominator ? &data : nullptr));
    bool degenerate = cf.scores.cwiseAbs().maxCoeff() == 0.0;
    if (degenerate || model.r_squared.back() >= config.r2_target) break;
  }
  return model;
}

// New-subject score projection: joint least squares of the centered subject
// values on the K fitted component functions (K×K normal equations, 1e-10
// jitter).
inline Eigen::VectorXd project_scores(const Subject& subject,
                                      const ComponentModel& model) {
  const int K = model.num_components();
  if (static_cast<int>(subject.size()) < K)
    throw InsufficientDataError("subject " + subject.id + " has " +
                                std::to_string(subject.size()) +
                                " observations; need at least " +
                                std::to_string(K));
  Eigen::MatrixXd design(static_cast<Eigen::Index>(subject.size()), K);
  Eigen::VectorXd y(static_cast<Eigen::Index>(subject.size()));
  for (size_t j = 0; j < subject.size(); ++j) {
    Eigen::VectorXd pi = model.basis.evaluate(subject.times[j]);
    for (int k = 0; k < K; ++k)
      design(static_cast<Eigen::Index>(j), k) =
          pi.dot(model.alphas[static_cast<size_t>(k)]);
    y(static_cast<Eigen::Index>(j)) =
        subject.values[j] - pi.dot(model.mean.coefficients);
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

// 5-fold cross-validated (degree, num_interior) selection with the AIC-type
// criterion N·log((1/N)Σ_i (1/m_i)Σ_j(Y_ij−Ŷ_ij)²) + 2p on held-out subjects,
// p counting mean plus component basis coefficients.
inline std::pair<int, int> select_basis(const SparseDataset& data,
                                        const std::vector<int>& degrees,
                                        const std::vector<int>& knot_counts,
                                        const FitConfig& config) {
  if (degrees.empty() || knot_counts.empty())
    throw UsageError("select_basis: empty candidate list");
  const size_t n = data.subjects.size();
  const int folds = 5;

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = make_rng(config.seed, 0xF01Du);
  std::shuffle(order.begin(), order.end(), rng);

  struct Candidate {
    int degree, knots;
    double criterion;
  };
  std::vector<Candidate> results;
  for (int d : degrees)
    for (int q : knot_counts) {
      double pooled_sse = 0.0;
      size_t scored = 0;
      bool failed = false;
      int max_dim = 0;
      int max_k = 1;
      for (int f = 0; f < folds && !failed; ++f) {
        SparseDataset train{{}, data.domain};
        std::vector<const Subject*> held;
        for (size_t i = 0; i < n; ++i) {
          if (static_cast<int>(i % static_cast<size_t>(folds)) == f)
            held.push_back(&data.subjects[order[i]]);
          else
            train.subjects.push_back(data.subjects[order[i]]);
        }
        try {
          std::vector<double> pooled;
          for (const auto& s : train.subjects)
            pooled.insert(pooled.end(), s.times.begin(), s.times.end());
          BasisSystem basis = build_basis(data.domain, d, q, pooled);
          if (static_cast<size_t>(basis.dim()) > train.total_observations())
            throw DataError("basis larger than training data");
          max_dim = std::max(max_dim, basis.dim());
          ComponentModel model = fit(train, basis, config);
          max_k = std::max(max_k, model.num_components());
          for (const Subject* s : held) {
            if (static_cast<int>(s->size()) < model.num_components()) continue;
            Eigen::VectorXd r;
            try {
              r = project_scores(*s, model);
            } catch (const DegeneracyError&) {
              continue;
            }
            double sse = 0.0;
            for (size_t j = 0; j < s->size(); ++j) {
              double yhat = model.mean.evaluate(s->times[j]);
              for (int k = 0; k < model.num_components(); ++k)
                yhat += r(k) * model.component_value(k, s->times[j]);
              double e = s->values[j] - yhat;
              sse += e * e;
            }
            pooled_sse += sse / static_cast<double>(s->size());
            ++scored;
          }
        } catch (const std::runtime_error&) {
          failed = true;
        }
      }
      if (failed || scored == 0) continue;
      double mean_err = pooled_sse / static_cast<double>(scored);
      // p: mean coefficients plus K component coefficient vectors.
      double p = static_cast<double>(max_dim) * (max_k + 1);
      double crit =
          static_cast<double>(scored) * std::log(mean_err) + 2.0 * p;
      results.push_back({d, q, crit});
    }
  if (results.empty())
    throw NumericalError("select_basis: every candidate failed to fit");
  const Candidate* best = &results[0];
  for (const auto& c : results) {
    if (c.criterion < best->criterion ||
        (c.criterion == best->criterion &&
         (c.knots < best->knots ||
          (c.knots == best->knots && c.degree < best->degree))))
      best = &c;
  }
  return {best->degree, best->knots};
}

}  // namespace fpscreen

#endif  // FPSCREEN_RPCA_HPP_
