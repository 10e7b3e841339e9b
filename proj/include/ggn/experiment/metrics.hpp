#pragma once

// Per-agent metric rows and their CSV form. Numbers are written with %.17g so
// files are bit-reproducible; a metric that was not recorded is an empty field.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ggn/errors.hpp"

namespace ggn::experiment {

inline constexpr double kNotRecorded = std::numeric_limits<double>::quiet_NaN();

struct MetricsRow {
  std::string run_id;
  int snapshot = 0;
  int update = 0;
  /// Cumulative gossip exchanges since the start of the run.
  long exchange = 0;
  /// 1-based agent number.
  int agent = 1;
  double val = 0.0;
  double grad = 0.0;
  double mse_v = 0.0;
  double mse_theta = 0.0;
  double max_disagreement = 0.0;
  double descent_discrepancy = kNotRecorded;
  double error_to_reference = 0.0;
};

inline const char* const kCsvHeader =
    "run_id,snapshot,update,exchange,agent,val,grad,mse_v,mse_theta,max_disagreement,"
    "descent_discrepancy,error_to_reference";

/// RFC 4180 field quoting.
[[nodiscard]] inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

[[nodiscard]] inline std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[nodiscard]] inline std::string to_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : rows) {
    out += csv_field(r.run_id);
    out += ',' + std::to_string(r.snapshot) + ',' + std::to_string(r.update) + ',' +
           std::to_string(r.exchange) + ',' + std::to_string(r.agent);
    for (double v : {r.val, r.grad, r.mse_v, r.mse_theta, r.max_disagreement, r.descent_discrepancy,
                     r.error_to_reference})
      out += ',' + csv_number(v);
    out += '\n';
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << text;
  if (!f) throw IoError("write failed for '" + path + "'");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, int line_no) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", line_no);
  cells.push_back(cur);
  return cells;
}

inline double cell_number(const std::string& s, int line_no) {
  if (s.empty()) return kNotRecorded;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw ParseError("malformed number '" + s + "'", line_no);
  return v;
}

}  // namespace detail

/// Reads a metrics CSV written by to_csv.
[[nodiscard]] inline std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != kCsvHeader) throw ParseError("unexpected metrics header", line_no);
      continue;
    }
    if (line.empty()) continue;
    const auto c = detail::split_csv_line(line, line_no);
    if (c.size() != 12) throw ParseError("expected 12 columns", line_no);
    MetricsRow r;
    r.run_id = c[0];
    r.snapshot = static_cast<int>(detail::cell_number(c[1], line_no));
    r.update = static_cast<int>(detail::cell_number(c[2], line_no));
    r.exchange = static_cast<long>(detail::cell_number(c[3], line_no));
    r.agent = static_cast<int>(detail::cell_number(c[4], line_no));
    double* fields[] = {&r.val, &r.grad, &r.mse_v, &r.mse_theta, &r.max_disagreement,
                        &r.descent_discrepancy, &r.error_to_reference};
    for (int k = 0; k < 7; ++k) *fields[k] = detail::cell_number(c[5 + k], line_no);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace ggn::experiment
