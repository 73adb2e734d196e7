#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "fpscreen/contour.hpp"
#include "fpscreen/model_io.hpp"
#include "fpscreen/simulate.hpp"
#include "fpscreen/svg.hpp"

using fpscreen::GeneratorSpec;
using fpscreen::Interval;

TEST_CASE("generate is deterministic and has the right shape") {
  fpscreen::DefaultTruth truth = fpscreen::default_truth();
  GeneratorSpec spec = truth.make_spec(7, 500, 6, 1.0);
  auto [d1, t1] = fpscreen::generate(spec);
  auto [d2, t2] = fpscreen::generate(spec);
  REQUIRE(d1.subjects.size() == 500);
  CHECK(d1.total_observations() == 3000);
  CHECK(t1.scores.rows() == 500);
  CHECK(t1.scores.cols() == 2);
  for (size_t i = 0; i < d1.subjects.size(); ++i) {
    CHECK(d1.subjects[i].times == d2.subjects[i].times);
    CHECK(d1.subjects[i].values == d2.subjects[i].values);
  }
  CHECK((t1.scores - t2.scores).cwiseAbs().maxCoeff() == 0.0);
  for (const auto& s : d1.subjects)
    for (double t : s.times) {
      CHECK(t >= 9.0);
      CHECK(t <= 16.0);
    }
}

TEST_CASE("generate with zero noise and zero scores is the mean") {
  fpscreen::DefaultTruth truth = fpscreen::default_truth();
  GeneratorSpec spec = truth.make_spec(3, 20, 5, 0.0);
  Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(1, 2);
  spec.score_law = fpscreen::EmpiricalScoreLaw{zeros};
  auto [d, t] = fpscreen::generate(spec);
  for (const auto& s : d.subjects)
    for (size_t j = 0; j < s.size(); ++j)
      CHECK(s.values[j] == Catch::Approx(spec.mean_fn(s.times[j])).margin(1e-12));
}

TEST_CASE("empirical score law resamples rows of the table") {
  fpscreen::DefaultTruth truth = fpscreen::default_truth();
  GeneratorSpec spec = truth.make_spec(11, 200, 4, 0.0);
  Eigen::MatrixXd table(2, 2);
  table << 5.0, -1.0, -3.0, 2.0;
  spec.score_law = fpscreen::EmpiricalScoreLaw{table};
  auto [d, t] = fpscreen::generate(spec);
  for (int i = 0; i < t.scores.rows(); ++i) {
    bool row0 = t.scores(i, 0) == 5.0 && t.scores(i, 1) == -1.0;
    bool row1 = t.scores(i, 0) == -3.0 && t.scores(i, 1) == 2.0;
    CHECK((row0 || row1));
  }
  fpscreen::EmpiricalScoreLaw empty;
  spec.score_law = empty;
  CHECK_THROWS_AS(fpscreen::generate(spec), fpscreen::DataError);
}

TEST_CASE("contaminate arithmetic") {
  fpscreen::SparseDataset d;
  d.domain = Interval{9.0, 16.0};
  fpscreen::Subject s;
  s.id = "a";
  s.times = {9.0, 12.0, 16.0};
  s.values = {1.0, 2.0, 3.0};
  d.subjects.push_back(s);

  fpscreen::SparseDataset same =
      fpscreen::contaminate(d, fpscreen::GroundTruth{}, fpscreen::ContaminationSpec{0.0, 0.0, 1});
  CHECK(same.subjects[0].values == d.subjects[0].values);

  fpscreen::SparseDataset shifted =
      fpscreen::contaminate(d, fpscreen::GroundTruth{}, fpscreen::ContaminationSpec{0.0, 20.0, 1});
  for (size_t j = 0; j < 3; ++j)
    CHECK(shifted.subjects[0].values[j] ==
          Catch::Approx(d.subjects[0].values[j] + 20.0));

  fpscreen::SparseDataset sloped =
      fpscreen::contaminate(d, fpscreen::GroundTruth{}, fpscreen::ContaminationSpec{1.0, 0.0, 1});
  CHECK(sloped.subjects[0].values[2] == Catch::Approx(3.0 + 7.0));
}

TEST_CASE("rise endpoints and sign invariance") {
  auto g = [](double t) { return std::sin(t); };
  Interval dom{0.0, 3.0};
  CHECK(fpscreen::rise(g, g, dom) == Catch::Approx(0.0).margin(1e-15));
  CHECK(fpscreen::rise(g, [](double) { return 0.0; }, dom) ==
        Catch::Approx(1.0).margin(1e-12));
  CHECK(fpscreen::rise(g, [&](double t) { return 2.0 * g(t); }, dom) ==
        Catch::Approx(1.0).margin(1e-12));
  CHECK(fpscreen::rise(g, [&](double t) { return -g(t); }, dom) ==
        Catch::Approx(0.0).margin(1e-15));
  CHECK_THROWS_AS(
      fpscreen::rise([](double) { return 0.0; }, g, dom),
      fpscreen::DataError);
}

TEST_CASE("rmse_scores endpoints") {
  Eigen::VectorXd truth = Eigen::VectorXd::LinSpaced(50, -2.0, 2.0);
  CHECK(fpscreen::rmse_scores(truth, truth) == Catch::Approx(0.0).margin(1e-15));
  CHECK(fpscreen::rmse_scores(truth, -truth) ==
        Catch::Approx(0.0).margin(1e-15));
  Eigen::VectorXd constant =
      Eigen::VectorXd::Constant(50, truth.mean());
  double v = fpscreen::rmse_scores(truth, constant);
  CHECK(v == Catch::Approx(1.0).margin(0.03));  // N/(N-1) convention slack
  CHECK_THROWS_AS(
      fpscreen::rmse_scores(Eigen::VectorXd::Zero(50), constant),
      fpscreen::DataError);
}

TEST_CASE("sim report round-trips through CSV") {
  fpscreen::SimReport rep;
  rep.slopes = {-1.0, 0.0};
  rep.shifts = {0.0, 4.0};
  double v = 0.1;
  for (double a : rep.slopes)
    for (double b : rep.shifts) {
      fpscreen::SimReport::Cell c;
      c.slope = a;
      c.shift = b;
      c.mean = v;
      c.sd = v / 10.0;
      c.n_effective = 5;
      rep.cells.push_back(c);
      v += 0.1;
    }
  std::string csv = rep.to_csv();
  fpscreen::SimReport back = fpscreen::SimReport::from_csv(csv);
  CHECK(back.slopes == rep.slopes);
  CHECK(back.shifts == rep.shifts);
  REQUIRE(back.cells.size() == rep.cells.size());
  for (size_t i = 0; i < rep.cells.size(); ++i) {
    CHECK(back.cells[i].mean == rep.cells[i].mean);
    CHECK(back.cells[i].sd == rep.cells[i].sd);
    CHECK(back.cells[i].n_effective == rep.cells[i].n_effective);
  }
  CHECK(back.at(-1.0, 4.0).mean == rep.cells[1].mean);
}

TEST_CASE("model JSON round-trip is exact") {
  fpscreen::DefaultTruth truth = fpscreen::default_truth();
  GeneratorSpec spec = truth.make_spec(19, 120, 6, 1.0);
  auto [data, gt] = fpscreen::generate(spec);
  std::vector<double> pooled;
  for (const auto& s : data.subjects)
    pooled.insert(pooled.end(), s.times.begin(), s.times.end());
  fpscreen::BasisSystem basis = fpscreen::build_basis(data.domain, 2, 2, pooled);
  fpscreen::FitConfig cfg;
  cfg.seed = 23;
  cfg.max_components = 2;
  cfg.r2_target = 1.0;
  fpscreen::ComponentModel model = fpscreen::fit(data, basis, cfg);
  fpscreen::ContourChart chart = fpscreen::build_chart(model.scores);

  fpscreen::Json j = fpscreen::model_to_json(model, &chart);
  std::string path = "tmp_model_rt.json";
  fpscreen::write_json_file(j, path);
  fpscreen::Json j2 = fpscreen::read_json_file(path);
  fpscreen::ComponentModel back = fpscreen::model_from_json(j2);

  CHECK(back.num_components() == model.num_components());
  for (size_t k = 0; k < model.alphas.size(); ++k)
    CHECK((back.alphas[k] - model.alphas[k]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.scores - model.scores).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.mean.coefficients - model.mean.coefficients)
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK(back.subject_ids == model.subject_ids);
  CHECK(back.r_squared == model.r_squared);
  CHECK(back.seed == model.seed);
  CHECK(back.basis.knots() == model.basis.knots());

  fpscreen::ContourChart chart2 = fpscreen::chart_from_json(j2.at("chart"));
  CHECK((chart2.center() - chart.center()).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(chart2.angular_models().size() == chart.angular_models().size());
  for (size_t k = 0; k < chart.angular_models().size(); ++k)
    CHECK((chart2.angular_models()[k] - chart.angular_models()[k])
              .cwiseAbs()
              .maxCoeff() == 0.0);

  // Serializing the reloaded model reproduces the file byte for byte.
  std::string path2 = "tmp_model_rt2.json";
  fpscreen::write_json_file(fpscreen::model_to_json(back, &chart2), path2);
  std::ifstream f1(path), f2(path2);
  std::string c1((std::istreambuf_iterator<char>(f1)), {});
  std::string c2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(c1 == c2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("screening power on a tiny grid behaves sanely") {
  fpscreen::DefaultTruth truth = fpscreen::default_truth();
  GeneratorSpec spec = truth.make_spec(41, 150, 6, 1.0);
  fpscreen::PowerStudyConfig cfg;
  cfg.slopes = {-4.0, 0.0};
  cfg.shifts = {-20.0, 0.0};
  cfg.n_outlying_curves = 40;
  cfg.replicates = 2;
  cfg.fit.max_components = 2;
  cfg.fit.r2_target = 1.0;
  cfg.fit.seed = 1;
  fpscreen::SimReport rep = fpscreen::screening_power(spec, cfg);
  REQUIRE(rep.cells.size() == 4);
  for (const auto& c : rep.cells) {
    CHECK(c.mean >= 0.0);
    CHECK(c.mean <= 1.0);
    CHECK(c.n_effective == 2);
  }
  CHECK(rep.at(-4.0, -20.0).mean > rep.at(0.0, 0.0).mean);
  CHECK(rep.at(0.0, 0.0).mean < 0.25);
  // Determinism of the whole study.
  fpscreen::SimReport rep2 = fpscreen::screening_power(spec, cfg);
  CHECK(rep.to_csv() == rep2.to_csv());
}

TEST_CASE("SVG plots are deterministic and well formed") {
  fpscreen::DefaultTruth truth = fpscreen::default_truth();
  GeneratorSpec spec = truth.make_spec(5, 120, 6, 1.0);
  auto [data, gt] = fpscreen::generate(spec);
  std::vector<double> pooled;
  for (const auto& s : data.subjects)
    pooled.insert(pooled.end(), s.times.begin(), s.times.end());
  fpscreen::BasisSystem basis = fpscreen::build_basis(data.domain, 2, 2, pooled);
  fpscreen::FitConfig cfg;
  cfg.seed = 2;
  cfg.max_components = 2;
  cfg.r2_target = 1.0;
  fpscreen::ComponentModel model = fpscreen::fit(data, basis, cfg);
  fpscreen::ContourChart chart =
      fpscreen::build_chart(model.scores, {0.5, 0.75, 0.95});

  auto slurp = [](const std::string& p) {
    std::ifstream f(p);
    return std::string((std::istreambuf_iterator<char>(f)), {});
  };

  fpscreen::plot_components(model, "tmp_plot1.svg");
  fpscreen::plot_components(model, "tmp_plot2.svg");
  std::string s1 = slurp("tmp_plot1.svg");
  CHECK(s1 == slurp("tmp_plot2.svg"));
  CHECK(s1.find("<svg") != std::string::npos);
  CHECK(s1.find("</svg>") != std::string::npos);

  fpscreen::plot_chart(chart, model.scores, "tmp_plot3.svg");
  std::string s3 = slurp("tmp_plot3.svg");
  // One closed polygon per tau level.
  size_t count = 0;
  for (size_t pos = s3.find("<polygon"); pos != std::string::npos;
       pos = s3.find("<polygon", pos + 1))
    ++count;
  CHECK(count == 3);

  fpscreen::plot_paths(data, data.subjects.front().id, "tmp_plot4.svg");
  CHECK(slurp("tmp_plot4.svg").find("</svg>") != std::string::npos);
  CHECK_THROWS_AS(fpscreen::plot_paths(data, "no-such-id", "tmp_plot5.svg"),
                  fpscreen::DataError);
  for (const char* p :
       {"tmp_plot1.svg", "tmp_plot2.svg", "tmp_plot3.svg", "tmp_plot4.svg"})
    std::remove(p);
}
