// Command-line front end: fit / screen / simulate / plot.
//
// Exit codes: 0 success, 1 usage, 2 data, 3 numerical failure. Failures
// print a single machine-parsable line `ERROR <code>: <message>` and remove
// partial outputs. Every run writes a `<output>.config.json` echo so results
// are reproducible from their artifacts alone.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fpscreen/contour.hpp"
#include "fpscreen/covariate.hpp"
#include "fpscreen/dataset.hpp"
#include "fpscreen/model_io.hpp"
#include "fpscreen/rpca.hpp"
#include "fpscreen/simulate.hpp"
#include "fpscreen/svg.hpp"

namespace {

using fpscreen::Json;

std::vector<std::string> g_outputs;  // removed on failure

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw fpscreen::DataError("cannot open output file: " + path);
  g_outputs.push_back(path);
  return out;
}

void track_output(const std::string& path) { g_outputs.push_back(path); }

void write_config_echo(const std::string& primary_output, const Json& echo) {
  std::ofstream out = open_output(primary_output + ".config.json");
  out << echo.dump(2) << '\n';
}

struct FitFlags {
  std::string input, output;
  int degree = -1;
  int knots = -1;
  fpscreen::FitConfig config;
  bool covariate = false;
  int mu_degree = 1;
  double r2_arg = 0.90;

  Json echo(const std::string& command) const {
    Json j;
    j["command"] = command;
    j["input"] = input;
    j["output"] = output;
    j["degree"] = degree;
    j["knots"] = knots;
    j["covariate"] = covariate;
    j["mu_degree"] = mu_degree;
    j["delta1"] = config.delta1;
    j["delta2"] = config.delta2;
    j["max_iter"] = config.max_iter;
    j["max_components"] = config.max_components;
    j["r2_target"] = config.r2_target;
    j["restarts"] = config.restarts;
    j["seed"] = config.seed;
    j["raw_r2_denominator"] = config.raw_r2_denominator;
    return j;
  }
};

void add_fit_config_flags(CLI::App* cmd, fpscreen::FitConfig& config) {
  cmd->add_option("--seed", config.seed, "RNG seed");
  cmd->add_option("--delta1", config.delta1, "parameter-change tolerance");
  cmd->add_option("--delta2", config.delta2, "objective-change tolerance");
  cmd->add_option("--max-iter", config.max_iter, "iteration cap per restart");
  cmd->add_option("--max-components", config.max_components,
                  "maximum number of components");
  cmd->add_option("--r2-target", config.r2_target, "R2 stopping target");
  cmd->add_option("--restarts", config.restarts, "random restarts");
  cmd->add_flag("--raw-r2-denominator", config.raw_r2_denominator,
                "use uncentered values in the R2 denominator");
}

int run_fit(const FitFlags& flags) {
  fpscreen::SparseDataset data = fpscreen::read_csv(flags.input);
  int degree = flags.degree, knots = flags.knots;
  std::string selection_note;
  if (degree < 0 || knots < 0) {
    std::vector<int> degrees = degree < 0 ? std::vector<int>{1, 2, 3}
                                          : std::vector<int>{degree};
    std::vector<int> counts = knots < 0 ? std::vector<int>{0, 1, 2, 4, 6}
                                        : std::vector<int>{knots};
    auto [d, q] = fpscreen::select_basis(data, degrees, counts, flags.config);
    degree = d;
    knots = q;
    selection_note = "selected by 5-fold cross-validation";
  }
  std::vector<double> pooled;
  for (const auto& s : data.subjects)
    pooled.insert(pooled.end(), s.times.begin(), s.times.end());
  fpscreen::BasisSystem basis =
      fpscreen::build_basis(data.domain, degree, knots, pooled);

  Json model_json;
  std::vector<double> r2;
  std::vector<fpscreen::ComponentLog> log;
  int k = 0;
  if (flags.covariate) {
    if (!data.has_covariates())
      throw fpscreen::DataError("--covariate requires a covariate column");
    fpscreen::CovariateModel model = fpscreen::fit_covariate(
        data, basis, fpscreen::MuSpec{flags.mu_degree}, flags.config);
    model_json = fpscreen::covariate_model_to_json(model);
    r2 = model.r_squared;
    log = model.convergence_log;
    k = model.num_components();
  } else {
    fpscreen::ComponentModel model =
        fpscreen::fit(data, basis, flags.config);
    model_json = fpscreen::model_to_json(model);
    r2 = model.r_squared;
    log = model.convergence_log;
    k = model.num_components();
  }

  open_output(flags.output) << model_json.dump(2) << '\n';
  {
    std::ofstream report = open_output(flags.output + ".report.txt");
    report << "subjects: " << data.subjects.size() << '\n'
           << "observations: " << data.total_observations() << '\n'
           << "basis: degree " << degree << ", " << knots
           << " interior knots " << selection_note << '\n'
           << "components: " << k << '\n';
    for (size_t i = 0; i < r2.size(); ++i)
      report << "R2(" << i + 1 << ") = " << fpscreen::format_double(r2[i])
             << '\n';
    for (const auto& l : log) {
      report << "component " << l.component << ": " << l.iterations
             << " iterations, objective "
             << fpscreen::format_double(l.objective) << '\n';
      for (const auto& w : l.warnings) report << "  warning: " << w << '\n';
    }
  }
  write_config_echo(flags.output, flags.echo("fit"));
  return 0;
}

struct ScreenFlags {
  std::string model_path, input, output;
  double level = 0.95;
  int harmonics = 3;
};

int run_screen(const ScreenFlags& flags) {
  Json mj = fpscreen::read_json_file(flags.model_path);
  std::string schema = mj.at("schema").get<std::string>();
  std::optional<fpscreen::ComponentModel> plain;
  std::optional<fpscreen::CovariateModel> cov;
  Eigen::MatrixXd train_scores;
  if (schema == "fpscreen-model-v1") {
    plain = fpscreen::model_from_json(mj);
    train_scores = plain->scores;
  } else {
    cov = fpscreen::covariate_model_from_json(mj);
    train_scores = cov->scores;
  }
  fpscreen::ContourChart chart =
      mj.contains("chart")
          ? fpscreen::chart_from_json(mj.at("chart"))
          : fpscreen::build_chart(train_scores, fpscreen::default_tau_grid(),
                                  flags.harmonics);

  fpscreen::SparseDataset subjects = fpscreen::read_csv(
      flags.input, plain ? plain->basis.domain() : cov->basis.domain());

  std::ofstream out = open_output(flags.output);
  out << "id,scores,rank,beyond_top,flagged,error\n";
  for (const auto& s : subjects.subjects) {
    try {
      fpscreen::ScreeningResult r =
          plain ? fpscreen::screen_subject(s, *plain, chart, flags.level)
                : fpscreen::screen_subject(s, *cov, chart, flags.level);
      out << s.id << ',';
      for (Eigen::Index j = 0; j < r.scores.size(); ++j)
        out << (j ? ";" : "") << fpscreen::format_double(r.scores(j));
      out << ',' << fpscreen::format_double(r.rank.tau) << ','
          << (r.rank.beyond_top ? 1 : 0) << ',' << (r.flagged ? 1 : 0)
          << ",\n";
    } catch (const fpscreen::InsufficientDataError&) {
      out << s.id << ",,,,,insufficient_data\n";
    } catch (const fpscreen::DegeneracyError&) {
      out << s.id << ",,,,,degenerate\n";
    } catch (const fpscreen::DataError&) {
      out << s.id << ",,,,,data_error\n";
    }
  }
  Json echo;
  echo["command"] = "screen";
  echo["model"] = flags.model_path;
  echo["input"] = flags.input;
  echo["output"] = flags.output;
  echo["level"] = flags.level;
  echo["harmonics"] = flags.harmonics;
  write_config_echo(flags.output, echo);
  return 0;
}

struct SimulateFlags {
  std::string output = "simreport";
  std::string setting = "normal";
  bool power_grid = false;
  bool small_grid = false;
  int replicates = 20;
  int n_subjects = 500;
  int obs_per_subject = 6;
  double noise_sd = 1.0;
  int degree = 2;
  int knots = 2;
  double level = 0.95;
  std::uint64_t seed = 0;
  fpscreen::FitConfig config;
};

int run_simulate(const SimulateFlags& flags) {
  if (flags.replicates < 1)
    throw fpscreen::UsageError("--replicates must be >= 1");
  fpscreen::DefaultTruth truth = fpscreen::default_truth();
  fpscreen::GeneratorSpec spec =
      truth.make_spec(flags.seed, flags.n_subjects, flags.obs_per_subject,
                      flags.noise_sd);
  fpscreen::FitConfig fit_cfg = flags.config;
  fit_cfg.max_components = 2;
  fit_cfg.r2_target = 1.0;

  Json echo;
  echo["command"] = "simulate";
  echo["setting"] = flags.setting;
  echo["power_grid"] = flags.power_grid;
  echo["small_grid"] = flags.small_grid;
  echo["replicates"] = flags.replicates;
  echo["n_subjects"] = flags.n_subjects;
  echo["obs_per_subject"] = flags.obs_per_subject;
  echo["noise_sd"] = flags.noise_sd;
  echo["degree"] = flags.degree;
  echo["knots"] = flags.knots;
  echo["level"] = flags.level;
  echo["seed"] = flags.seed;

  if (flags.power_grid) {
    fpscreen::PowerStudyConfig cfg;
    cfg.replicates = flags.replicates;
    cfg.level = flags.level;
    cfg.basis_degree = flags.degree;
    cfg.basis_knots = flags.knots;
    cfg.fit = fit_cfg;
    if (flags.small_grid) {
      cfg.slopes = {-4.0, -2.0, 0.0};
      cfg.shifts = {-20.0, -4.0, 0.0};
    }
    fpscreen::SimReport report = fpscreen::screening_power(spec, cfg);
    open_output(flags.output + ".csv") << report.to_csv();
    open_output(flags.output + ".txt") << report.to_table();
    write_config_echo(flags.output + ".csv", echo);
    return 0;
  }

  std::vector<fpscreen::FitMetrics> metrics = fpscreen::fit_metrics_study(
      spec, flags.replicates, flags.degree, flags.knots, fit_cfg);
  {
    std::ofstream csv = open_output(flags.output + ".csv");
    csv << "replicate,rise1,rise2,rmse1,rmse2\n";
    for (size_t i = 0; i < metrics.size(); ++i)
      csv << i << ',' << fpscreen::format_double(metrics[i].rise1) << ','
          << fpscreen::format_double(metrics[i].rise2) << ','
          << fpscreen::format_double(metrics[i].rmse1) << ','
          << fpscreen::format_double(metrics[i].rmse2) << '\n';
  }
  {
    auto mean_sd = [&](auto get) {
      double m = 0, ss = 0;
      for (const auto& x : metrics) m += get(x);
      m /= static_cast<double>(metrics.size());
      for (const auto& x : metrics) ss += (get(x) - m) * (get(x) - m);
      double sd = metrics.size() > 1
                      ? std::sqrt(ss / static_cast<double>(metrics.size() - 1))
                      : 0.0;
      return std::pair<double, double>{m, sd};
    };
    std::ofstream table = open_output(flags.output + ".txt");
    table << "Means (standard deviations) over " << metrics.size()
          << " replicates\n";
    auto [r1, r1sd] = mean_sd([](const auto& x) { return x.rise1; });
    auto [r2, r2sd] = mean_sd([](const auto& x) { return x.rise2; });
    auto [m1, m1sd] = mean_sd([](const auto& x) { return x.rmse1; });
    auto [m2, m2sd] = mean_sd([](const auto& x) { return x.rmse2; });
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "RISE of component 1\t%.4f (%.4f)\n"
                  "RISE of component 2\t%.4f (%.4f)\n"
                  "RMSE of scores 1\t%.4f (%.4f)\n"
                  "RMSE of scores 2\t%.4f (%.4f)\n",
                  r1, r1sd, r2, r2sd, m1, m1sd, m2, m2sd);
    table << buf;
  }
  write_config_echo(flags.output + ".csv", echo);
  return 0;
}

struct PlotFlags {
  std::string input, output, kind, highlight;
};

int run_plot(const PlotFlags& flags) {
  if (flags.kind == "components") {
    fpscreen::ComponentModel model =
        fpscreen::model_from_json(fpscreen::read_json_file(flags.input));
    track_output(flags.output);
    fpscreen::plot_components(model, flags.output);
  } else if (flags.kind == "chart") {
    Json mj = fpscreen::read_json_file(flags.input);
    fpscreen::ComponentModel model = fpscreen::model_from_json(mj);
    fpscreen::ContourChart chart =
        mj.contains("chart")
            ? fpscreen::chart_from_json(mj.at("chart"))
            : fpscreen::build_chart(model.scores,
                                    std::vector<double>{0.5, 0.75, 0.95});
    track_output(flags.output);
    fpscreen::plot_chart(chart, model.scores, flags.output);
  } else if (flags.kind == "paths") {
    fpscreen::SparseDataset data = fpscreen::read_csv(flags.input);
    track_output(flags.output);
    fpscreen::plot_paths(data, flags.highlight, flags.output);
  } else {
    throw fpscreen::UsageError("unknown plot kind: " + flags.kind);
  }
  Json echo;
  echo["command"] = "plot";
  echo["input"] = flags.input;
  echo["output"] = flags.output;
  echo["kind"] = flags.kind;
  echo["highlight"] = flags.highlight;
  write_config_echo(flags.output, echo);
  return 0;
}

int fail(int code, const std::string& kind, const std::string& msg) {
  for (const auto& path : g_outputs) {
    std::error_code ec;
    std::filesystem::remove(path, ec);
  }
  std::cerr << "ERROR " << kind << ": " << msg << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-curve principal component screening toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads,
                 "worker-thread cap (does not affect results)");

  FitFlags fit_flags;
  CLI::App* fit_cmd = app.add_subcommand("fit", "fit a component model");
  fit_cmd->add_option("--input", fit_flags.input, "input CSV")->required();
  fit_cmd->add_option("--output", fit_flags.output, "model JSON path")->required();
  fit_cmd->add_option("--degree", fit_flags.degree, "B-spline degree");
  fit_cmd->add_option("--knots", fit_flags.knots, "number of interior knots");
  fit_cmd->add_flag("--covariate", fit_flags.covariate,
                    "fit the covariate-adjusted model");
  fit_cmd->add_option("--mu-degree", fit_flags.mu_degree,
                      "covariate polynomial degree");
  add_fit_config_flags(fit_cmd, fit_flags.config);

  ScreenFlags screen_flags;
  CLI::App* screen_cmd = app.add_subcommand("screen", "rank and flag subjects");
  screen_cmd->add_option("--model", screen_flags.model_path, "model JSON")
      ->required();
  screen_cmd->add_option("--input", screen_flags.input, "subjects CSV")
      ->required();
  screen_cmd->add_option("--output", screen_flags.output, "ranks CSV")
      ->required();
  screen_cmd->add_option("--level", screen_flags.level, "screening level");
  screen_cmd->add_option("--harmonics", screen_flags.harmonics,
                         "trigonometric harmonics for the chart");

  SimulateFlags sim_flags;
  CLI::App* sim_cmd = app.add_subcommand("simulate", "synthetic-data studies");
  sim_cmd->add_option("--output", sim_flags.output, "output path prefix");
  sim_cmd->add_option("--setting", sim_flags.setting, "score setting (normal)");
  sim_cmd->add_flag("--power-grid", sim_flags.power_grid,
                    "run the screening-power contamination grid");
  sim_cmd->add_flag("--small-grid", sim_flags.small_grid,
                    "subsample the grid to 3x3 for quick runs");
  sim_cmd->add_option("--replicates", sim_flags.replicates, "Monte Carlo size");
  sim_cmd->add_option("--n-subjects", sim_flags.n_subjects, "curves per sample");
  sim_cmd->add_option("--obs-per-subject", sim_flags.obs_per_subject,
                      "observations per curve");
  sim_cmd->add_option("--noise-sd", sim_flags.noise_sd, "noise sd");
  sim_cmd->add_option("--degree", sim_flags.degree, "fit basis degree");
  sim_cmd->add_option("--knots", sim_flags.knots, "fit basis interior knots");
  sim_cmd->add_option("--level", sim_flags.level, "screening level");
  sim_cmd->add_option("--seed", sim_flags.seed, "RNG seed");

  PlotFlags plot_flags;
  CLI::App* plot_cmd = app.add_subcommand("plot", "emit a figure as SVG");
  plot_cmd->add_option("--input", plot_flags.input, "model JSON or data CSV")
      ->required();
  plot_cmd->add_option("--output", plot_flags.output, "SVG path")->required();
  plot_cmd
      ->add_option("--kind", plot_flags.kind,
                   "figure kind: components, chart, paths")
      ->required();
  plot_cmd->add_option("--highlight", plot_flags.highlight,
                       "subject id to highlight (paths)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    return fail(1, "usage", e.what());
  }

  try {
    if (*fit_cmd) return run_fit(fit_flags);
    if (*screen_cmd) return run_screen(screen_flags);
    if (*sim_cmd) return run_simulate(sim_flags);
    return run_plot(plot_flags);
  } catch (const fpscreen::UsageError& e) {
    return fail(1, "usage", e.what());
  } catch (const fpscreen::DataError& e) {
    return fail(2, "data", e.what());
  } catch (const fpscreen::NumericalError& e) {
    return fail(3, "numerical", e.what());
  } catch (const std::exception& e) {
    return fail(3, "numerical", e.what());
  }
}
