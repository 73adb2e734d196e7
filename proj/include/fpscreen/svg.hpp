#ifndef FPSCREEN_SVG_HPP_
#define FPSCREEN_SVG_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "fpscreen/contour.hpp"
#include "fpscreen/dataset.hpp"
#include "fpscreen/errors.hpp"
#include "fpscreen/rpca.hpp"

namespace fpscreen {
namespace svg {

// Deterministic text output: fixed precision, no locale dependence.
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

constexpr double kWidth = 720.0;
constexpr double kHeight = 520.0;
constexpr double kMargin = 56.0;

struct Frame {
  double xmin, xmax, ymin, ymax;

  double sx(double x) const {
    return kMargin + (x - xmin) / (xmax - xmin) * (kWidth - 2 * kMargin);
  }
  double sy(double y) const {
    return kHeight - kMargin -
           (y - ymin) / (ymax - ymin) * (kHeight - 2 * kMargin);
  }

  static Frame around(double xmin, double xmax, double ymin, double ymax) {
    double dx = (xmax - xmin) * 0.05 + 1e-12;
    double dy = (ymax - ymin) * 0.05 + 1e-12;
    return Frame{xmin - dx, xmax + dx, ymin - dy, ymax + dy};
  }
};

class Document {
 public:
  Document() {
    body_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
          << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << ' '
          << kHeight << "\">\n";
    body_ << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }

  void axes(const Frame& f, const std::string& xlabel,
            const std::string& ylabel) {
    line(f.sx(f.xmin), f.sy(f.ymin), f.sx(f.xmax), f.sy(f.ymin), "black", 1.0);
    line(f.sx(f.xmin), f.sy(f.ymin), f.sx(f.xmin), f.sy(f.ymax), "black", 1.0);
    text(kWidth / 2, kHeight - 12, xlabel, "middle");
    body_ << "<text x=\"14\" y=\"" << num(kHeight / 2)
          << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 14 "
          << num(kHeight / 2) << ")\">" << ylabel << "</text>\n";
  }

  void line(double x1, double y1, double x2, double y2,
            const std::string& color, double width) {
    body_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\""
          << num(x2) << "\" y2=\"" << num(y2) << "\" stroke=\"" << color
          << "\" stroke-width=\"" << num(width) << "\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts,
                const std::string& color, double width, bool closed = false) {
    body_ << (closed ? "<polygon" : "<polyline") << " points=\"";
    for (const auto& [x, y] : pts) body_ << num(x) << ',' << num(y) << ' ';
    body_ << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\""
          << num(width) << "\"/>\n";
  }

  void circle(double x, double y, double r, const std::string& color) {
    body_ << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\""
          << num(r) << "\" fill=\"" << color << "\"/>\n";
  }

  void text(double x, double y, const std::string& s,
            const std::string& anchor = "start") {
    body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y)
          << "\" text-anchor=\"" << anchor << "\" font-size=\"13\">" << s
          << "</text>\n";
  }

  void write(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open output file: " + path);
    out << body_.str() << "</svg>\n";
  }

 private:
  std::ostringstream body_;
};

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> colors{"#1f77b4", "#d62728", "#2ca02c",
                                               "#9467bd", "#ff7f0e"};
  return colors;
}

}  // namespace svg

// Component-function curves over the model domain.
inline void plot_components(const ComponentModel& model,
                            const std::string& path, int grid = 200) {
  const Interval dom = model.basis.domain();
  double ymin = 0.0, ymax = 0.0;
  std::vector<std::vector<std::pair<double, double>>> curves(
      static_cast<size_t>(model.num_components()));
  for (int g = 0; g <= grid; ++g) {
    double t = dom.lo + dom.length() * g / grid;
    for (int k = 0; k < model.num_components(); ++k) {
      double v = model.component_value(k, t);
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
      curves[static_cast<size_t>(k)].push_back({t, v});
    }
  }
  svg::Frame f = svg::Frame::around(dom.lo, dom.hi, ymin, ymax);
  svg::Document doc;
  doc.axes(f, "t", "component value");
  for (size_t k = 0; k < curves.size(); ++k) {
    std::vector<std::pair<double, double>> pts;
    for (auto& [t, v] : curves[k]) pts.push_back({f.sx(t), f.sy(v)});
    const std::string& color = svg::palette()[k % svg::palette().size()];
    doc.polyline(pts, color, 1.5);
    doc.text(svg::kWidth - svg::kMargin - 80,
             svg::kMargin + 18.0 * static_cast<double>(k + 1),
             "component " + std::to_string(k + 1) + " (" + color + ")");
  }
  doc.write(path);
}

// Score scatter with the chart's nested contour polylines.
inline void plot_chart(const ContourChart& chart, const Eigen::MatrixXd& scores,
                       const std::string& path, int angular_points = 180) {
  double xmin = chart.center().x(), xmax = xmin;
  double ymin = chart.center().y(), ymax = ymin;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    xmin = std::min(xmin, scores(i, 0));
    xmax = std::max(xmax, scores(i, 0));
    ymin = std::min(ymin, scores(i, 1));
    ymax = std::max(ymax, scores(i, 1));
  }
  svg::Frame f = svg::Frame::around(xmin, xmax, ymin, ymax);
  svg::Document doc;
  doc.axes(f, "first component score", "second component score");
  for (Eigen::Index i = 0; i < scores.rows(); ++i)
    doc.circle(f.sx(scores(i, 0)), f.sy(scores(i, 1)), 1.5, "#888888");
  for (size_t k = 0; k < chart.tau_grid().size(); ++k) {
    std::vector<std::pair<double, double>> pts;
    for (int a = 0; a < angular_points; ++a) {
      double theta =
          2.0 * std::numbers::pi * a / angular_points - std::numbers::pi;
      double r = chart.radii_at(theta)[k];
      pts.push_back({f.sx(chart.center().x() + r * std::cos(theta)),
                     f.sy(chart.center().y() + r * std::sin(theta))});
    }
    const std::string& color = svg::palette()[k % svg::palette().size()];
    doc.polyline(pts, color, 1.5, /*closed=*/true);
    doc.text(svg::kWidth - svg::kMargin - 80,
             svg::kMargin + 18.0 * static_cast<double>(k + 1),
             "tau " + svg::num(chart.tau_grid()[k]));
  }
  doc.write(path);
}

// Spaghetti plot of observed growth paths, optionally highlighting one id.
inline void plot_paths(const SparseDataset& data, const std::string& highlight,
                       const std::string& path) {
  double ymin = data.subjects[0].values[0], ymax = ymin;
  for (const auto& s : data.subjects)
    for (double v : s.values) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  svg::Frame f = svg::Frame::around(data.domain.lo, data.domain.hi, ymin, ymax);
  svg::Document doc;
  doc.axes(f, "t", "value");
  const Subject* chosen = nullptr;
  for (const auto& s : data.subjects) {
    if (s.id == highlight) {
      chosen = &s;
      continue;
    }
    std::vector<std::pair<double, double>> pts;
    for (size_t j = 0; j < s.size(); ++j)
      pts.push_back({f.sx(s.times[j]), f.sy(s.values[j])});
    doc.polyline(pts, "#bbbbbb", 0.8);
  }
  if (chosen) {
    std::vector<std::pair<double, double>> pts;
    for (size_t j = 0; j < chosen->size(); ++j)
      pts.push_back({f.sx(chosen->times[j]), f.sy(chosen->values[j])});
    doc.polyline(pts, "#d62728", 2.0);
    for (auto& [x, y] : pts) doc.circle(x, y, 3.0, "#d62728");
  } else if (!highlight.empty()) {
    throw DataError("plot_paths: no subject with id " + highlight);
  }
  doc.write(path);
}

}  // namespace fpscreen

#endif  // FPSCREEN_SVG_HPP_
