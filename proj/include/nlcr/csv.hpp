#pragma once

// Minimal CSV I/O: comma separated, header row, '.' decimals, no quoting.

#include <Eigen/Dense>

#include <charconv>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "nlcr/evalstats.hpp"

namespace nlcr {

class CsvError : public std::runtime_error {
 public:
  CsvError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t comma = line.find(',', start);
    out.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double parse_number(std::string_view s, std::size_t line) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size())
    throw CsvError(line, "not a number: '" + std::string(s) + "'");
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // source line of each row

  std::size_t column(std::string_view name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return j;
    throw CsvError(1, "missing column '" + std::string(name) + "'");
  }
};

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  std::size_t no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++no;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size())
      throw CsvError(no, "expected " + std::to_string(t.header.size()) + " fields, found " +
                             std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
    t.lines.push_back(no);
  }
  if (!have_header) throw CsvError(no == 0 ? 1 : no, "missing header row");
  return t;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return read_csv(in);
}

/// Numeric columns `cols` of every row as a matrix.
inline Eigen::MatrixXd numeric_block(const CsvTable& t, const std::vector<std::size_t>& cols) {
  Eigen::MatrixXd M(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t j = 0; j < cols.size(); ++j)
      M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = parse_number(t.rows[r][cols[j]], t.lines[r]);
  return M;
}

/// 17 significant digits: reads back to the same double.
inline std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// Long panel file with columns series,horizon,origin,value.
struct LongRecord {
  std::string series;
  int horizon = 0;
  int origin = 0;
  double value = 0.0;
};

inline std::vector<LongRecord> read_long_csv(std::istream& in) {
  CsvTable t = read_csv(in);
  const std::size_t cs = t.column("series"), ch = t.column("horizon"), co = t.column("origin"),
                    cv = t.column("value");
  std::vector<LongRecord> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    auto as_int = [&](std::size_t j) {
      double v = parse_number(row[j], t.lines[r]);
      if (v != static_cast<double>(static_cast<int>(v))) throw CsvError(t.lines[r], "expected an integer: '" + row[j] + "'");
      return static_cast<int>(v);
    };
    if (row[cs].empty()) throw CsvError(t.lines[r], "empty series name");
    out.push_back({row[cs], as_int(ch), as_int(co), parse_number(row[cv], t.lines[r])});
  }
  return out;
}

/// Joins forecasts with actuals on (series, horizon, origin).
inline ForecastPanel make_panel(const std::vector<LongRecord>& forecasts, const std::vector<LongRecord>& actuals) {
  std::map<std::tuple<std::string, int, int>, double> act;
  for (const auto& a : actuals) act[{a.series, a.horizon, a.origin}] = a.value;
  ForecastPanel p;
  for (const auto& f : forecasts) {
    auto it = act.find({f.series, f.horizon, f.origin});
    if (it == act.end())
      throw std::invalid_argument("no actual for " + f.series + " h=" + std::to_string(f.horizon) +
                                  " origin=" + std::to_string(f.origin));
    p.add(f.series, f.horizon, f.origin, f.value, it->second);
  }
  return p;
}

}  // namespace nlcr
