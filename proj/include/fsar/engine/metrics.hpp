#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "fsar/engine/train.hpp"

namespace fsar {

inline constexpr const char* kMetricsHeader = "episode,L_CE,L_H,L_S,total,accuracy";

inline std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

inline void write_metrics(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write metrics '" + path + "'");
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.episode << ',' << format_number(r.l_ce) << ',' << format_number(r.l_h) << ',' << format_number(r.l_s)
        << ',' << format_number(r.total) << ',' << format_number(r.accuracy) << '\n';
  }
}

inline double parse_number(const std::string& field, const std::string& path, std::size_t line) {
  if (field == "NA") return std::nan("");
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw DataError("'" + path + "' line " + std::to_string(line) + ": bad number '" + field + "'");
  }
}

inline std::vector<MetricsRow> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open metrics '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("metrics '" + path + "' is empty");
  if (line != kMetricsHeader) throw DataError("metrics '" + path + "' has an unexpected header: " + line);
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw DataError("'" + path + "' line " + std::to_string(lineno) + ": expected 6 fields");
    MetricsRow r;
    r.episode = static_cast<std::size_t>(parse_number(f[0], path, lineno));
    r.l_ce = parse_number(f[1], path, lineno);
    r.l_h = parse_number(f[2], path, lineno);
    r.l_s = parse_number(f[3], path, lineno);
    r.total = parse_number(f[4], path, lineno);
    r.accuracy = parse_number(f[5], path, lineno);
    rows.push_back(r);
  }
  if (rows.empty()) throw DataError("metrics '" + path + "' has no rows");
  return rows;
}

}  // namespace fsar
