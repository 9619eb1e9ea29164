#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "relprune/error.hpp"
#include "relprune/metrics.hpp"

namespace relprune {

// Trajectory CSV schema:
//   strategy,seed,rate,overall_acc,harmonic_mean,acc_class_0,...,wall_time_s
// One row per accepted pruning state. Everything except wall_time_s is
// deterministic for a fixed seed.

inline std::string trajectory_csv_header(std::size_t num_classes) {
  std::string h = "strategy,seed,rate,overall_acc,harmonic_mean";
  for (std::size_t c = 0; c < num_classes; ++c) h += ",acc_class_" + std::to_string(c);
  h += ",wall_time_s";
  return h;
}

namespace csv_detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

}  // namespace csv_detail

inline void write_trajectory_csv(std::ostream& os, const std::vector<CurveRecord>& records) {
  if (records.empty()) throw std::invalid_argument("write_trajectory_csv: no records");
  const std::size_t classes = records.front().per_class.num_classes();
  os << trajectory_csv_header(classes) << "\n";
  for (const CurveRecord& r : records) {
    if (r.per_class.num_classes() != classes)
      throw std::invalid_argument("write_trajectory_csv: records disagree on the class count");
    os << r.strategy << "," << r.seed << "," << r.rate.to_string() << ","
       << csv_detail::fmt(r.overall_accuracy) << "," << csv_detail::fmt(r.harmonic_mean);
    for (std::size_t c = 0; c < classes; ++c)
      os << "," << (r.per_class.present(c) ? csv_detail::fmt(r.per_class.accuracy(c)) : "nan");
    os << "," << csv_detail::fmt(r.wall_time_seconds) << "\n";
  }
}

struct CsvRow {
  std::string strategy;
  std::uint64_t seed = 0;
  double rate = 0.0;
  double overall_acc = 0.0;
  double harmonic_mean = 0.0;
  std::vector<double> class_acc;
  double wall_time_s = 0.0;

  double min_class_acc() const {
    double m = 1.0;
    for (double a : class_acc) m = a < m ? a : m;
    return m;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

// Reads a trajectory CSV produced by write_trajectory_csv. The number of
// acc_class_<i> columns is returned through num_classes.
inline std::vector<CsvRow> read_trajectory_csv(std::istream& is, std::size_t& num_classes) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("trajectory csv: missing header");
  const std::vector<std::string> header = split_csv_line(line);
  std::size_t classes = 0;
  for (const std::string& h : header)
    if (h.rfind("acc_class_", 0) == 0) ++classes;
  if (header.size() != 6 + classes || header[0] != "strategy" || header[2] != "rate")
    throw IoError("trajectory csv: unexpected header '" + line + "'");
  num_classes = classes;

  std::vector<CsvRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != header.size())
      throw IoError("trajectory csv: row " + std::to_string(lineno) + " has " +
                    std::to_string(f.size()) + " fields, header has " +
                    std::to_string(header.size()));
    CsvRow r;
    r.strategy = f[0];
    r.seed = static_cast<std::uint64_t>(std::stoull(f[1]));
    r.rate = std::stod(f[2]);
    r.overall_acc = std::stod(f[3]);
    r.harmonic_mean = std::stod(f[4]);
    for (std::size_t c = 0; c < classes; ++c) r.class_acc.push_back(std::stod(f[5 + c]));
    r.wall_time_s = std::stod(f[5 + classes]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace relprune
