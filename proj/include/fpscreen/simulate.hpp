#ifndef FPSCREEN_SIMULATE_HPP_
#define FPSCREEN_SIMULATE_HPP_

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fpscreen/basis.hpp"
#include "fpscreen/contour.hpp"
#include "fpscreen/dataset.hpp"
#include "fpscreen/errors.hpp"
#include "fpscreen/rng.hpp"
#include "fpscreen/rpca.hpp"

namespace fpscreen {

struct NormalScoreLaw {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

struct EmpiricalScoreLaw {
  Eigen::MatrixXd table;  // rows resampled as score vectors
};

using ScoreLaw = std::variant<NormalScoreLaw, EmpiricalScoreLaw>;

// Y_ij = U(T_ij) + Σ_k r_ik φ_k(T_ij) + ε_ij with uniform observation times.
struct GeneratorSpec {
  std::function<double(double)> mean_fn;
  std::vector<std::function<double(double)>> component_fns;
  ScoreLaw score_law;
  double noise_sd = 1.0;
  int n_subjects = 500;
  int obs_per_subject = 6;
  Interval domain{9.0, 16.0};
  std::uint64_t seed = 0;
};

struct GroundTruth {
  Eigen::MatrixXd scores;  // N×K true scores
};

namespace detail {

inline Eigen::MatrixXd covariance_sqrt(const Eigen::MatrixXd& cov) {
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw UsageError("score covariance must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.eigenvalues().minCoeff() < -1e-12)
    throw UsageError("score covariance must be positive semidefinite");
  return es.eigenvectors() *
         es.eigenvalues().array().max(0.0).sqrt().matrix().asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace detail

inline std::pair<SparseDataset, GroundTruth> generate(const GeneratorSpec& spec) {
  if (spec.n_subjects < 1 || spec.obs_per_subject < 1)
    throw UsageError("generate: need positive subject and observation counts");
  if (spec.noise_sd < 0) throw UsageError("generate: noise_sd must be >= 0");
  const int k = static_cast<int>(spec.component_fns.size());

  Eigen::MatrixXd chol;
  const NormalScoreLaw* normal = std::get_if<NormalScoreLaw>(&spec.score_law);
  const EmpiricalScoreLaw* empirical =
      std::get_if<EmpiricalScoreLaw>(&spec.score_law);
  if (normal) {
    if (normal->mean.size() != k || normal->covariance.rows() != k)
      throw UsageError("generate: score law dimension mismatch");
    chol = detail::covariance_sqrt(normal->covariance);
  } else {
    if (empirical->table.rows() == 0)
      throw DataError("generate: empirical score table is empty");
    if (empirical->table.cols() != k)
      throw UsageError("generate: score table column count mismatch");
  }

  SparseDataset data;
  data.domain = spec.domain;
  GroundTruth truth;
  truth.scores.resize(spec.n_subjects, k);
  for (int i = 0; i < spec.n_subjects; ++i) {
    Rng rng = make_rng(spec.seed, 0xDA7Au, static_cast<std::uint64_t>(i));
    std::uniform_real_distribution<double> unif(spec.domain.lo, spec.domain.hi);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Subject s;
    s.id = "s" + std::to_string(i);
    s.times.resize(static_cast<size_t>(spec.obs_per_subject));
    for (auto& t : s.times) t = unif(rng);
    std::sort(s.times.begin(), s.times.end());

    Eigen::VectorXd r(k);
    if (normal) {
      Eigen::VectorXd z(k);
      for (int j = 0; j < k; ++j) z(j) = gauss(rng);
      r = normal->mean + chol * z;
    } else {
      std::uniform_int_distribution<Eigen::Index> pick(
          0, empirical->table.rows() - 1);
      r = empirical->table.row(pick(rng)).transpose();
    }
    truth.scores.row(i) = r.transpose();

    s.values.resize(s.times.size());
    for (size_t j = 0; j < s.times.size(); ++j) {
      double y = spec.mean_fn(s.times[j]);
      for (int c = 0; c < k; ++c) y += r(c) * spec.component_fns[static_cast<size_t>(c)](s.times[j]);
      if (spec.noise_sd > 0) y += spec.noise_sd * gauss(rng);
      s.values[j] = y;
    }
    data.subjects.push_back(std::move(s));
  }
  return {std::move(data), std::move(truth)};
}

// Linear drift contamination Z_i(t) = Y_i(t) + A(t − t0) + B.
struct ContaminationSpec {
  double slope = 0.0;      // A
  double shift = 0.0;      // B
  int n_curves = 100;
  double origin = 9.0;     // t0
};

inline SparseDataset contaminate(const SparseDataset& data,
                                 const GroundTruth& /*truth*/,
                                 const ContaminationSpec& spec) {
  if (spec.n_curves < 1) throw UsageError("contaminate: n_curves must be >= 1");
  SparseDataset out = data;
  for (auto& s : out.subjects)
    for (size_t j = 0; j < s.size(); ++j)
      s.values[j] += spec.slope * (s.times[j] - spec.origin) + spec.shift;
  return out;
}

// Relative integrated squared error ‖g−ĝ‖²/‖g‖² by left Riemann sum, after
// sign alignment of the estimate.
inline double rise(const std::function<double(double)>& truth,
                   const std::function<double(double)>& estimate,
                   Interval domain, int grid_size = 100) {
  if (grid_size < 2) throw UsageError("rise: grid_size must be >= 2");
  double h = domain.length() / grid_size;
  double num_plus = 0.0, num_minus = 0.0, den = 0.0;
  for (int i = 0; i < grid_size; ++i) {
    double t = domain.lo + i * h;
    double g = truth(t), e = estimate(t);
    num_plus += (g - e) * (g - e) * h;
    num_minus += (g + e) * (g + e) * h;
    den += g * g * h;
  }
  if (den <= 0.0) throw DataError("rise: target function has zero norm");
  return std::min(num_plus, num_minus) / den;
}

// Mean squared score error over the sample variance of the true scores,
// after global sign alignment.
inline double rmse_scores(const Eigen::VectorXd& truth,
                          const Eigen::VectorXd& estimate) {
  if (truth.size() != estimate.size() || truth.size() < 2)
    throw UsageError("rmse_scores: length mismatch");
  const auto n = static_cast<double>(truth.size());
  double mse = std::min((truth - estimate).squaredNorm(),
                        (truth + estimate).squaredNorm()) / n;
  double var = (truth.array() - truth.mean()).square().sum() / (n - 1.0);
  if (var <= 0.0) throw DataError("rmse_scores: zero score variance");
  return mse / var;
}

// Ground-truth functions shaped like the reference application: a slowly
// varying positive scale component and a sigmoidal velocity component, both
// expressed in a quadratic spline basis and orthonormalized there.
struct DefaultTruth {
  std::shared_ptr<BasisSystem> basis;
  Eigen::VectorXd mean_coeffs;
  Eigen::VectorXd alpha1;
  Eigen::VectorXd alpha2;

  GeneratorSpec make_spec(std::uint64_t seed, int n_subjects = 500,
                          int obs_per_subject = 6, double noise_sd = 1.0) const {
    GeneratorSpec spec;
    auto b = basis;
    Eigen::VectorXd mc = mean_coeffs, a1 = alpha1, a2 = alpha2;
    spec.mean_fn = [b, mc](double t) { return b->evaluate(t).dot(mc); };
    spec.component_fns = {
        [b, a1](double t) { return b->evaluate(t).dot(a1); },
        [b, a2](double t) { return b->evaluate(t).dot(a2); }};
    Eigen::VectorXd mean(2);
    mean << 0.0, 0.0;
    Eigen::MatrixXd cov(2, 2);
    cov << 100.0, 0.0, 0.0, 16.0;
    spec.score_law = NormalScoreLaw{mean, cov};
    spec.noise_sd = noise_sd;
    spec.n_subjects = n_subjects;
    spec.obs_per_subject = obs_per_subject;
    spec.domain = basis->domain();
    spec.seed = seed;
    return spec;
  }
};

inline DefaultTruth default_truth() {
  DefaultTruth truth;
  truth.basis = std::make_shared<BasisSystem>(
      Interval{9.0, 16.0}, 2,
      std::vector<double>{9.0 + 7.0 / 3.0, 9.0 + 14.0 / 3.0});
  // Coefficients chosen by shape; components are orthonormalized below.
  truth.mean_coeffs.resize(5);
  truth.mean_coeffs << 132.0, 138.5, 148.0, 159.0, 165.0;
  Eigen::VectorXd c1(5), c2(5);
  c1 << 1.0, 1.05, 1.15, 1.3, 1.4;              // overall scale, positive
  c2 << -0.6, -0.5, 0.2, 0.9, 1.0;              // pubertal velocity, sigmoidal
  truth.alpha1 = truth.basis->orthogonalize(c1, {});
  truth.alpha2 = truth.basis->orthogonalize(c2, {truth.alpha1});
  return truth;
}

// Per-cell screening-power summary over a contamination grid.
struct SimReport {
  struct Cell {
    double slope = 0.0;   // A
    double shift = 0.0;   // B
    double mean = 0.0;    // mean flagged fraction over replicates
    double sd = 0.0;
    int n_effective = 0;
  };
  std::vector<double> slopes;
  std::vector<double> shifts;
  std::vector<Cell> cells;  // row-major over (slopes × shifts)

  const Cell& at(double a, double b) const {
    for (const auto& c : cells)
      if (c.slope == a && c.shift == b) return c;
    throw UsageError("SimReport: no such cell");
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << "A,B,mean,sd,n_effective\n";
    for (const auto& c : cells)
      out << format_double(c.slope) << ',' << format_double(c.shift) << ','
          << format_double(c.mean) << ',' << format_double(c.sd) << ','
          << c.n_effective << '\n';
    return out.str();
  }

  static SimReport from_csv(const std::string& text) {
    SimReport report;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "A,B,mean,sd,n_effective")
      throw DataError("SimReport: bad header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      Cell c;
      std::istringstream row(line);
      std::string field;
      std::getline(row, field, ','); c.slope = std::stod(field);
      std::getline(row, field, ','); c.shift = std::stod(field);
      std::getline(row, field, ','); c.mean = std::stod(field);
      std::getline(row, field, ','); c.sd = std::stod(field);
      std::getline(row, field, ','); c.n_effective = std::stoi(field);
      report.cells.push_back(c);
      if (std::find(report.slopes.begin(), report.slopes.end(), c.slope) ==
          report.slopes.end())
        report.slopes.push_back(c.slope);
      if (std::find(report.shifts.begin(), report.shifts.end(), c.shift) ==
          report.shifts.end())
        report.shifts.push_back(c.shift);
    }
    return report;
  }

  // Text table with slope rows and shift columns (mean (sd) per cell).
  std::string to_table() const {
    std::ostringstream out;
    out << "Flagged fraction, mean (sd) over replicates\n";
    out << "A\\B";
    for (double b : shifts) out << '\t' << b;
    out << '\n';
    for (double a : slopes) {
      out << a;
      for (double b : shifts) {
        const Cell& c = at(a, b);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "\t%.3f (%.3f)", c.mean, c.sd);
        out << buf;
      }
      out << '\n';
    }
    return out.str();
  }
};

struct PowerStudyConfig {
  std::vector<double> slopes{-4, -2, -1, 0, 1, 2, 4};
  std::vector<double> shifts{-20, -12, -4, 0, 4, 12, 20};
  int n_outlying_curves = 100;
  double origin = 9.0;
  double level = 0.95;
  int replicates = 20;
  int basis_degree = 2;
  int basis_knots = 2;
  FitConfig fit;
};

// Per replicate: simulate reference data, fit, build the chart from the
// projected training scores, then screen freshly generated contaminated
// curves for every (A,B) cell. Replicates that fail to fit are dropped with
// reduced effective counts.
inline SimReport screening_power(const GeneratorSpec& reference,
                                 const PowerStudyConfig& cfg) {
  if (cfg.replicates < 1)
    throw UsageError("screening_power: replicates must be >= 1");
  const size_t n_cells = cfg.slopes.size() * cfg.shifts.size();
  std::vector<double> sum(n_cells, 0.0), sumsq(n_cells, 0.0);
  std::vector<int> count(n_cells, 0);

  for (int rep = 0; rep < cfg.replicates; ++rep) {
    GeneratorSpec ref_spec = reference;
    ref_spec.seed = derive_seed(reference.seed, 0x5EEDu,
                                static_cast<std::uint64_t>(rep));
    ComponentModel model = [&]() {
      auto [data, truth] = generate(ref_spec);
      std::vector<double> pooled;
      for (const auto& s : data.subjects)
        pooled.insert(pooled.end(), s.times.begin(), s.times.end());
      BasisSystem basis = build_basis(data.domain, cfg.basis_degree,
                                      cfg.basis_knots, pooled);
      FitConfig fit_cfg = cfg.fit;
      fit_cfg.seed = derive_seed(ref_spec.seed, 0xF17u);
      ComponentModel m = fit(data, basis, fit_cfg);
      if (m.num_components() < 2)
        throw ConvergenceError("screening_power: fewer than 2 components");
      // Chart reference: projected (joint) scores of the training subjects.
      Eigen::MatrixXd proj(data.subjects.size(), m.num_components());
      for (size_t i = 0; i < data.subjects.size(); ++i)
        proj.row(static_cast<Eigen::Index>(i)) =
            project_scores(data.subjects[i], m).transpose();
      m.scores = proj;
      return m;
    }();
    ContourChart chart = build_chart(model.scores);

    for (size_t ci = 0; ci < cfg.slopes.size(); ++ci)
      for (size_t cj = 0; cj < cfg.shifts.size(); ++cj) {
        size_t cell = ci * cfg.shifts.size() + cj;
        GeneratorSpec out_spec = ref_spec;
        out_spec.n_subjects = cfg.n_outlying_curves;
        out_spec.seed = derive_seed(reference.seed, 0xC0DEu,
                                    static_cast<std::uint64_t>(rep),
                                    static_cast<std::uint64_t>(cell));
        auto [clean, truth] = generate(out_spec);
        ContaminationSpec cs{cfg.slopes[ci], cfg.shifts[cj],
                             cfg.n_outlying_curves, cfg.origin};
        SparseDataset outlying = contaminate(clean, truth, cs);
        int flagged = 0, screened = 0;
        for (const auto& s : outlying.subjects) {
          try {
            if (screen_subject(s, model, chart, cfg.level).flagged) ++flagged;
            ++screened;
          } catch (const std::runtime_error&) {
            // Unscreenable curve; leave it out of the denominator.
          }
        }
        if (screened > 0) {
          double frac = static_cast<double>(flagged) / screened;
          sum[cell] += frac;
          sumsq[cell] += frac * frac;
          ++count[cell];
        }
      }
  }

  SimReport report;
  report.slopes = cfg.slopes;
  report.shifts = cfg.shifts;
  for (size_t ci = 0; ci < cfg.slopes.size(); ++ci)
    for (size_t cj = 0; cj < cfg.shifts.size(); ++cj) {
      size_t cell = ci * cfg.shifts.size() + cj;
      SimReport::Cell c;
      c.slope = cfg.slopes[ci];
      c.shift = cfg.shifts[cj];
      c.n_effective = count[cell];
      if (count[cell] > 0) {
        c.mean = sum[cell] / count[cell];
        if (count[cell] > 1) {
          double var = (sumsq[cell] - sum[cell] * sum[cell] / count[cell]) /
                       (count[cell] - 1);
          c.sd = std::sqrt(std::max(var, 0.0));
        }
      }
      report.cells.push_back(c);
    }
  return report;
}

// Estimation-quality study: per replicate RISE for both component functions
// and RMSE for both score vectors.
struct FitMetrics {
  double rise1 = 0.0, rise2 = 0.0;
  double rmse1 = 0.0, rmse2 = 0.0;
};

inline std::vector<FitMetrics> fit_metrics_study(const GeneratorSpec& reference,
                                                 int replicates,
                                                 int basis_degree,
                                                 int basis_knots,
                                                 const FitConfig& fit_cfg_in) {
  if (replicates < 1) throw UsageError("fit_metrics_study: replicates >= 1");
  if (reference.component_fns.size() < 2)
    throw UsageError("fit_metrics_study: needs two true components");
  std::vector<FitMetrics> out;
  for (int rep = 0; rep < replicates; ++rep) {
    GeneratorSpec spec = reference;
    spec.seed = derive_seed(reference.seed, 0x5EEDu,
                            static_cast<std::uint64_t>(rep));
    auto [data, truth] = generate(spec);
    std::vector<double> pooled;
    for (const auto& s : data.subjects)
      pooled.insert(pooled.end(), s.times.begin(), s.times.end());
    BasisSystem basis =
        build_basis(data.domain, basis_degree, basis_knots, pooled);
    FitConfig fit_cfg = fit_cfg_in;
    fit_cfg.seed = derive_seed(spec.seed, 0xF17u);
    ComponentModel model = fit(data, basis, fit_cfg);
    if (model.num_components() < 2)
      throw ConvergenceError("fit_metrics_study: fewer than 2 components");
    FitMetrics m;
    m.rise1 = rise(reference.component_fns[0],
                   [&](double t) { return model.component_value(0, t); },
                   data.domain);
    m.rise2 = rise(reference.component_fns[1],
                   [&](double t) { return model.component_value(1, t); },
                   data.domain);
    m.rmse1 = rmse_scores(truth.scores.col(0), model.scores.col(0));
    m.rmse2 = rmse_scores(truth.scores.col(1), model.scores.col(1));
    out.push_back(m);
  }
  return out;
}

}  // namespace fpscreen

#endif  // FPSCREEN_SIMULATE_HPP_
