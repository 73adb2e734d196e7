#ifndef FPSCREEN_DATASET_HPP_
#define FPSCREEN_DATASET_HPP_

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fpscreen/basis.hpp"
#include "fpscreen/errors.hpp"

namespace fpscreen {

struct Subject {
  std::string id;
  std::vector<double> times;   // nondecreasing
  std::vector<double> values;  // same length as times
  std::optional<double> covariate;

  size_t size() const { return times.size(); }

  void sort_by_time() {
    std::vector<size_t> idx(times.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return times[a] < times[b]; });
    std::vector<double> ts(times.size()), vs(values.size());
    for (size_t i = 0; i < idx.size(); ++i) {
      ts[i] = times[idx[i]];
      vs[i] = values[idx[i]];
    }
    times = std::move(ts);
    values = std::move(vs);
  }
};

struct SparseDataset {
  std::vector<Subject> subjects;
  Interval domain;

  size_t total_observations() const {
    size_t n = 0;
    for (const auto& s : subjects) n += s.size();
    return n;
  }

  bool has_covariates() const {
    return !subjects.empty() &&
           std::all_of(subjects.begin(), subjects.end(),
                       [](const Subject& s) { return s.covariate.has_value(); });
  }

  void validate() const {
    std::map<std::string, int> seen;
    for (const auto& s : subjects) {
      if (s.times.empty()) throw DataError("subject " + s.id + " has no observations");
      if (s.times.size() != s.values.size())
        throw DataError("subject " + s.id + ": times/values length mismatch");
      if (++seen[s.id] > 1) throw DataError("duplicate subject id " + s.id);
      for (size_t j = 0; j < s.times.size(); ++j) {
        if (!domain.contains(s.times[j]))
          throw DataError("subject " + s.id + ": time outside the domain");
        if (j > 0 && s.times[j] < s.times[j - 1])
          throw DataError("subject " + s.id + ": times not sorted");
      }
    }
  }
};

// Shortest textual form that round-trips a double exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline double parse_number(const std::string& s, const std::string& what) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size()) throw DataError("");
    return v;
  } catch (...) {
    throw DataError("non-numeric " + what + " value: '" + s + "'");
  }
}

}  // namespace detail

// Long-format CSV: header `id,time,value[,covariate]`. Rows are grouped by
// id (first-appearance order) and sorted by time within each subject.
inline SparseDataset read_csv(const std::string& path,
                              std::optional<Interval> domain_override = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "time" ||
      header[2] != "value")
    throw DataError("expected header id,time,value[,covariate]");
  bool has_cov = header.size() >= 4 && header[3] == "covariate";
  if (header.size() > (has_cov ? 4u : 3u))
    throw DataError("unexpected extra columns in header");

  std::vector<Subject> subjects;
  std::map<std::string, size_t> index;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != (has_cov ? 4u : 3u))
      throw DataError("row with wrong number of fields: " + line);
    double t = detail::parse_number(fields[1], "time");
    double v = detail::parse_number(fields[2], "value");
    std::optional<double> cov;
    if (has_cov) cov = detail::parse_number(fields[3], "covariate");

    auto it = index.find(fields[0]);
    if (it == index.end()) {
      index.emplace(fields[0], subjects.size());
      subjects.push_back(Subject{fields[0], {t}, {v}, cov});
    } else {
      Subject& s = subjects[it->second];
      if (s.covariate != cov)
        throw DataError("subject " + s.id +
                        " has inconsistent covariate values across rows");
      s.times.push_back(t);
      s.values.push_back(v);
    }
  }
  if (subjects.empty()) throw DataError("no data rows in " + path);
  for (auto& s : subjects) s.sort_by_time();

  SparseDataset data;
  data.subjects = std::move(subjects);
  if (domain_override) {
    data.domain = *domain_override;
  } else {
    double lo = data.subjects[0].times.front(), hi = lo;
    for (const auto& s : data.subjects) {
      lo = std::min(lo, s.times.front());
      hi = std::max(hi, s.times.back());
    }
    data.domain = Interval{lo, hi};
  }
  data.validate();
  return data;
}

inline void write_csv(const SparseDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open output file: " + path);
  bool has_cov = data.has_covariates();
  out << (has_cov ? "id,time,value,covariate\n" : "id,time,value\n");
  for (const auto& s : data.subjects)
    for (size_t j = 0; j < s.size(); ++j) {
      out << s.id << ',' << format_double(s.times[j]) << ','
          << format_double(s.values[j]);
      if (has_cov) out << ',' << format_double(*s.covariate);
      out << '\n';
    }
}

// Nonparametric mean estimate Û(t) = π(t)ᵀ coefficients.
struct MeanModel {
  BasisSystem basis;
  Eigen::VectorXd coefficients;

  double evaluate(double t) const {
    return basis.evaluate(t).dot(coefficients);
  }
};

// Pooled B-spline least squares for the mean function. Normal equations get
// a 1e-10 ridge on the diagonal for conditioning.
inline MeanModel fit_mean(const SparseDataset& data, const BasisSystem& basis) {
  const int p = basis.dim();
  if (static_cast<int>(data.total_observations()) < p)
    throw DataError("fit_mean: fewer observations (" +
                    std::to_string(data.total_observations()) +
                    ") than basis dimension (" + std::to_string(p) + ")");
  Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd atb = Eigen::VectorXd::Zero(p);
  for (const auto& s : data.subjects)
    for (size_t j = 0; j < s.size(); ++j) {
      Eigen::VectorXd pi = basis.evaluate(s.times[j]);
      ata.noalias() += pi * pi.transpose();
      atb += s.values[j] * pi;
    }
  ata.diagonal().array() += 1e-10;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(ata);
  if (ldlt.info() != Eigen::Success)
    throw DegeneracyError("fit_mean: singular normal equations with basis "
                          "dimension " + std::to_string(p));
  return MeanModel{basis, ldlt.solve(atb)};
}

// Y*_ij = Y_ij − Û(T_ij); everything else preserved.
inline SparseDataset center(const SparseDataset& data, const MeanModel& mean) {
  SparseDataset out = data;
  for (auto& s : out.subjects)
    for (size_t j = 0; j < s.size(); ++j)
      s.values[j] -= mean.evaluate(s.times[j]);
  return out;
}

}  // namespace fpscreen

#endif  // FPSCREEN_DATASET_HPP_
