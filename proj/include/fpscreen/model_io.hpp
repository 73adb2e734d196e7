#ifndef FPSCREEN_MODEL_IO_HPP_
#define FPSCREEN_MODEL_IO_HPP_

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpscreen/contour.hpp"
#include "fpscreen/covariate.hpp"
#include "fpscreen/rpca.hpp"

namespace fpscreen {

// ordered_json keeps subject order stable so identical fits serialize to
// byte-identical files.
using Json = nlohmann::ordered_json;

namespace detail {

inline Json vector_to_json(const Eigen::VectorXd& v) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

inline Eigen::VectorXd vector_from_json(const Json& arr) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
  for (size_t i = 0; i < arr.size(); ++i) v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
  return v;
}

inline Json basis_to_json(const BasisSystem& basis) {
  Json j;
  j["domain"] = {basis.domain().lo, basis.domain().hi};
  j["degree"] = basis.degree();
  j["interior_knots"] = basis.interior_knots();
  return j;
}

inline BasisSystem basis_from_json(const Json& j) {
  return BasisSystem(
      Interval{j.at("domain")[0].get<double>(), j.at("domain")[1].get<double>()},
      j.at("degree").get<int>(),
      j.at("interior_knots").get<std::vector<double>>());
}

inline Json config_to_json(const FitConfig& c) {
  Json j;
  j["delta1"] = c.delta1;
  j["delta2"] = c.delta2;
  j["max_iter"] = c.max_iter;
  j["max_components"] = c.max_components;
  j["r2_target"] = c.r2_target;
  j["restarts"] = c.restarts;
  j["seed"] = c.seed;
  j["raw_r2_denominator"] = c.raw_r2_denominator;
  return j;
}

inline FitConfig config_from_json(const Json& j) {
  FitConfig c;
  c.delta1 = j.at("delta1").get<double>();
  c.delta2 = j.at("delta2").get<double>();
  c.max_iter = j.at("max_iter").get<int>();
  c.max_components = j.at("max_components").get<int>();
  c.r2_target = j.at("r2_target").get<double>();
  c.restarts = j.at("restarts").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.raw_r2_denominator = j.at("raw_r2_denominator").get<bool>();
  return c;
}

inline Json scores_to_json(const std::vector<std::string>& ids,
                           const Eigen::MatrixXd& scores) {
  Json j = Json::object();
  for (size_t i = 0; i < ids.size(); ++i)
    j[ids[i]] = vector_to_json(scores.row(static_cast<Eigen::Index>(i)).transpose());
  return j;
}

}  // namespace detail

inline Json chart_to_json(const ContourChart& chart) {
  Json j;
  j["center"] = {chart.center().x(), chart.center().y()};
  j["tau_grid"] = chart.tau_grid();
  j["harmonics"] = chart.harmonics();
  Json models = Json::array();
  for (const auto& c : chart.angular_models())
    models.push_back(detail::vector_to_json(c));
  j["angular_models"] = models;
  j["reference_n"] = chart.reference_n();
  j["jittered_points"] = chart.jittered_points();
  return j;
}

inline ContourChart chart_from_json(const Json& j) {
  std::vector<Eigen::VectorXd> models;
  for (const auto& c : j.at("angular_models"))
    models.push_back(detail::vector_from_json(c));
  return ContourChart(
      Eigen::Vector2d(j.at("center")[0].get<double>(),
                      j.at("center")[1].get<double>()),
      j.at("tau_grid").get<std::vector<double>>(), j.at("harmonics").get<int>(),
      std::move(models), j.at("reference_n").get<int>(),
      j.at("jittered_points").get<int>());
}

inline Json model_to_json(const ComponentModel& model,
                          const ContourChart* chart = nullptr) {
  Json j;
  j["schema"] = "fpscreen-model-v1";
  j["basis"] = detail::basis_to_json(model.basis);
  j["mean_basis"] = detail::basis_to_json(model.mean.basis);
  j["mean_coefficients"] = detail::vector_to_json(model.mean.coefficients);
  j["num_components"] = model.num_components();
  Json alphas = Json::array();
  for (const auto& a : model.alphas) alphas.push_back(detail::vector_to_json(a));
  j["alphas"] = alphas;
  j["scores"] = detail::scores_to_json(model.subject_ids, model.scores);
  j["r_squared"] = model.r_squared;
  j["seed"] = model.seed;
  j["config"] = detail::config_to_json(model.config);
  Json log = Json::array();
  for (const auto& l : model.convergence_log) {
    Json e;
    e["component"] = l.component;
    e["iterations"] = l.iterations;
    e["objective"] = l.objective;
    e["restarts_used"] = l.restarts_used;
    e["degenerate_subjects"] = l.degenerate_subjects;
    e["warnings"] = l.warnings;
    log.push_back(e);
  }
  j["convergence_log"] = log;
  if (chart) j["chart"] = chart_to_json(*chart);
  return j;
}

inline ComponentModel model_from_json(const Json& j) {
  if (j.at("schema").get<std::string>() != "fpscreen-model-v1")
    throw DataError("unrecognized model schema: " +
                    j.at("schema").get<std::string>());
  BasisSystem basis = detail::basis_from_json(j.at("basis"));
  MeanModel mean{detail::basis_from_json(j.at("mean_basis")),
                 detail::vector_from_json(j.at("mean_coefficients"))};
  ComponentModel model{std::move(basis), std::move(mean), {}, {}, {}, {},
                       {}, j.at("seed").get<std::uint64_t>(),
                       detail::config_from_json(j.at("config"))};
  for (const auto& a : j.at("alphas"))
    model.alphas.push_back(detail::vector_from_json(a));
  const auto& scores = j.at("scores");
  model.scores.resize(static_cast<Eigen::Index>(scores.size()),
                      model.num_components());
  Eigen::Index row = 0;
  for (auto it = scores.begin(); it != scores.end(); ++it, ++row) {
    model.subject_ids.push_back(it.key());
    model.scores.row(row) = detail::vector_from_json(it.value()).transpose();
  }
  model.r_squared = j.at("r_squared").get<std::vector<double>>();
  for (const auto& e : j.at("convergence_log")) {
    ComponentLog l;
    l.component = e.at("component").get<int>();
    l.iterations = e.at("iterations").get<int>();
    l.objective = e.at("objective").get<double>();
    l.restarts_used = e.at("restarts_used").get<int>();
    l.degenerate_subjects = e.at("degenerate_subjects").get<int>();
    l.warnings = e.at("warnings").get<std::vector<std::string>>();
    model.convergence_log.push_back(std::move(l));
  }
  return model;
}

inline Json covariate_model_to_json(const CovariateModel& model,
                                    const ContourChart* chart = nullptr) {
  Json j;
  j["schema"] = "fpscreen-covmodel-v1";
  j["basis"] = detail::basis_to_json(model.basis);
  j["mu_degree"] = model.mu_spec.degree;
  Json mean = Json::array();
  for (Eigen::Index c = 0; c < model.mean_coeffs.cols(); ++c)
    mean.push_back(detail::vector_to_json(model.mean_coeffs.col(c)));
  j["mean_coefficients"] = mean;
  j["num_components"] = model.num_components();
  Json alphas = Json::array();
  for (const auto& a : model.alphas) {
    Json cols = Json::array();
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      cols.push_back(detail::vector_to_json(a.col(c)));
    alphas.push_back(cols);
  }
  j["alphas"] = alphas;
  j["scores"] = detail::scores_to_json(model.subject_ids, model.scores);
  j["covariate_summary"] = {{"mean", model.covariate_summary.mean},
                            {"scale", model.covariate_summary.scale},
                            {"min", model.covariate_summary.min},
                            {"max", model.covariate_summary.max}};
  j["r_squared"] = model.r_squared;
  j["seed"] = model.seed;
  j["config"] = detail::config_to_json(model.config);
  if (chart) j["chart"] = chart_to_json(*chart);
  return j;
}

inline CovariateModel covariate_model_from_json(const Json& j) {
  if (j.at("schema").get<std::string>() != "fpscreen-covmodel-v1")
    throw DataError("unrecognized model schema: " +
                    j.at("schema").get<std::string>());
  BasisSystem basis = detail::basis_from_json(j.at("basis"));
  MuSpec mu{j.at("mu_degree").get<int>()};
  const auto& mean_cols = j.at("mean_coefficients");
  Eigen::MatrixXd mean(basis.dim(), static_cast<Eigen::Index>(mean_cols.size()));
  for (size_t c = 0; c < mean_cols.size(); ++c)
    mean.col(static_cast<Eigen::Index>(c)) =
        detail::vector_from_json(mean_cols[c]);
  CovariateSummary summary;
  summary.mean = j.at("covariate_summary").at("mean").get<double>();
  summary.scale = j.at("covariate_summary").at("scale").get<double>();
  summary.min = j.at("covariate_summary").at("min").get<double>();
  summary.max = j.at("covariate_summary").at("max").get<double>();
  CovariateModel model{std::move(basis), mu, std::move(mean), {}, {}, {},
                       summary, {}, {}, j.at("seed").get<std::uint64_t>(),
                       detail::config_from_json(j.at("config"))};
  for (const auto& a : j.at("alphas")) {
    Eigen::MatrixXd mat(model.basis.dim(), static_cast<Eigen::Index>(a.size()));
    for (size_t c = 0; c < a.size(); ++c)
      mat.col(static_cast<Eigen::Index>(c)) = detail::vector_from_json(a[c]);
    model.alphas.push_back(std::move(mat));
  }
  const auto& scores = j.at("scores");
  model.scores.resize(static_cast<Eigen::Index>(scores.size()),
                      model.num_components());
  Eigen::Index row = 0;
  for (auto it = scores.begin(); it != scores.end(); ++it, ++row) {
    model.subject_ids.push_back(it.key());
    model.scores.row(row) = detail::vector_from_json(it.value()).transpose();
  }
  model.r_squared = j.at("r_squared").get<std::vector<double>>();
  return model;
}

inline void write_json_file(const Json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open output file: " + path);
  out << j.dump(2) << '\n';
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input file: " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed JSON in " + path + ": " + e.what());
  }
}

// Contour polylines as CSV rows (tau, theta, radius, x, y) on a regular
// angular grid.
inline std::string chart_polylines_csv(const ContourChart& chart,
                                       int angular_points = 360) {
  std::ostringstream out;
  out << "tau,theta,radius,x,y\n";
  for (int a = 0; a < angular_points; ++a) {
    double theta = 2.0 * std::numbers::pi * a / angular_points -
                   std::numbers::pi;
    std::vector<double> radii = chart.radii_at(theta);
    for (size_t k = 0; k < radii.size(); ++k) {
      double x = chart.center().x() + radii[k] * std::cos(theta);
      double y = chart.center().y() + radii[k] * std::sin(theta);
      out << format_double(chart.tau_grid()[k]) << ',' << format_double(theta)
          << ',' << format_double(radii[k]) << ',' << format_double(x) << ','
          << format_double(y) << '\n';
    }
  }
  return out.str();
}

}  // namespace fpscreen

#endif  // FPSCREEN_MODEL_IO_HPP_
