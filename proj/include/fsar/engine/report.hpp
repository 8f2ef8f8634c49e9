#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fsar/engine/metrics.hpp"

namespace fsar {

struct RunSummary {
  std::string name;
  std::size_t episodes = 0;
  std::size_t skipped = 0;
  double first_loss = 0.0;     // mean total loss over the first window
  double final_loss = 0.0;     // mean total loss over the last window
  double final_accuracy = 0.0; // mean accuracy over the last window
};

/// Trailing moving average that ignores NaN entries.
inline std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
  std::vector<double> out(v.size(), std::nan(""));
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isnan(v[i])) sum += v[i], ++count;
    if (i >= window && !std::isnan(v[i - window])) sum -= v[i - window], --count;
    if (count > 0) out[i] = sum / static_cast<double>(count);
  }
  return out;
}

inline RunSummary summarize_run(const std::string& name, const std::vector<MetricsRow>& rows, std::size_t window = 50) {
  RunSummary s;
  s.name = name;
  s.episodes = rows.size();
  auto window_mean = [&](std::size_t begin, std::size_t end, auto field) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = begin; i < end; ++i) {
      const double v = rows[i].*field;
      if (!std::isnan(v)) sum += v, ++n;
    }
    return n ? sum / static_cast<double>(n) : std::nan("");
  };
  const std::size_t w = std::min(window, rows.size());
  s.first_loss = window_mean(0, w, &MetricsRow::total);
  s.final_loss = window_mean(rows.size() - w, rows.size(), &MetricsRow::total);
  s.final_accuracy = window_mean(rows.size() - w, rows.size(), &MetricsRow::accuracy);
  for (const auto& r : rows) s.skipped += std::isnan(r.total);
  return s;
}

namespace detail {

inline std::string polyline(const std::vector<double>& ys, double x0, double y0, double w, double h, double lo,
                            double hi, const char* colour) {
  std::ostringstream os;
  os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
  const double span = hi > lo ? hi - lo : 1.0;
  const double n = static_cast<double>(std::max<std::size_t>(ys.size(), 2) - 1);
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (std::isnan(ys[i])) continue;
    const double x = x0 + w * static_cast<double>(i) / n;
    const double y = y0 + h - h * (ys[i] - lo) / span;
    os << x << ',' << y << ' ';
  }
  os << "\"/>\n";
  return os.str();
}

inline std::string panel(const std::string& title, const std::vector<std::vector<double>>& series,
                         const std::vector<std::string>& labels, double x0, double y0, double w, double h) {
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  double lo = 1e300, hi = -1e300;
  for (const auto& s : series)
    for (double v : s)
      if (!std::isnan(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  if (lo > hi) lo = 0.0, hi = 1.0;
  std::ostringstream os;
  os << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << w << "\" height=\"" << h
     << "\" fill=\"none\" stroke=\"#888\"/>\n";
  os << "<text x=\"" << x0 << "\" y=\"" << y0 - 8 << "\" font-size=\"14\">" << title << "</text>\n";
  os << "<text x=\"" << x0 - 6 << "\" y=\"" << y0 + 10 << "\" font-size=\"10\" text-anchor=\"end\">"
     << format_number(hi) << "</text>\n";
  os << "<text x=\"" << x0 - 6 << "\" y=\"" << y0 + h << "\" font-size=\"10\" text-anchor=\"end\">"
     << format_number(lo) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* c = colours[i % 6];
    os << polyline(series[i], x0, y0, w, h, lo, hi, c);
    os << "<text x=\"" << x0 + w + 8 << "\" y=\"" << y0 + 14 * (i + 1) << "\" font-size=\"11\" fill=\"" << c << "\">"
       << labels[i] << "</text>\n";
  }
  return os.str();
}

}  // namespace detail

/// Two stacked panels (smoothed total loss, smoothed accuracy), one line per run.
inline std::string render_svg(const std::vector<std::pair<std::string, std::vector<MetricsRow>>>& runs,
                              std::size_t window = 50) {
  std::vector<std::vector<double>> loss, acc;
  std::vector<std::string> labels;
  for (const auto& [name, rows] : runs) {
    std::vector<double> l, a;
    for (const auto& r : rows) l.push_back(r.total), a.push_back(r.accuracy);
    loss.push_back(moving_average(l, window));
    acc.push_back(moving_average(a, window));
    labels.push_back(name);
  }
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"820\" height=\"620\" font-family=\"sans-serif\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << detail::panel("total loss (moving average)", loss, labels, 70, 40, 560, 230);
  os << detail::panel("episode accuracy (moving average)", acc, labels, 70, 340, 560, 230);
  os << "<text x=\"350\" y=\"605\" font-size=\"12\">episode</text>\n";
  os << "</svg>\n";
  return os.str();
}

inline std::string summary_table(const std::vector<RunSummary>& runs) {
  std::ostringstream os;
  os << "run,episodes,skipped,first_loss,final_loss,final_accuracy\n";
  for (const auto& s : runs) {
    os << s.name << ',' << s.episodes << ',' << s.skipped << ',' << format_number(s.first_loss) << ','
       << format_number(s.final_loss) << ',' << format_number(s.final_accuracy) << '\n';
  }
  return os.str();
}

}  // namespace fsar
