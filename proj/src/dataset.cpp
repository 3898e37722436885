#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "gploo/error.hpp"
#include "gploo/model.hpp"

namespace gploo {
namespace csv {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\"");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\"");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& cell, std::size_t line) {
  if (cell.empty() || cell == "NA" || cell == "nan" || cell == "NaN")
    fail(line, "missing value");
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) fail(line, "cannot parse '" + cell + "' as a number");
  if (!std::isfinite(v)) fail(line, "non-finite value");
  return v;
}

}  // namespace

void fail(std::size_t line, const std::string& what) {
  throw Error(ErrorKind::InvalidInput, "line " + std::to_string(line) + ": " + what);
}

Table parse(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  Table t;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) {
      t.header = split(line);
      t.header_line = lineno;
      break;
    }
  }
  if (t.header.empty()) fail(1, "empty file, expected a header row");
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() != t.header.size())
      fail(lineno, "expected " + std::to_string(t.header.size()) + " fields, found " +
                       std::to_string(cells.size()));
    std::vector<double> row;
    row.reserve(cells.size());
    for (const std::string& c : cells) row.push_back(parse_number(c, lineno));
    t.rows.push_back(std::move(row));
    t.lines.push_back(lineno);
  }
  if (t.rows.empty()) fail(lineno, "no data rows");
  return t;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::InvalidInput, "cannot open '" + path + "'");
  std::stringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

}  // namespace csv

Dataset parse_csv(const std::string& text) {
  const csv::Table t = csv::parse(text);
  std::vector<int> xcols;
  int ycol = -1;
  int ccol = -1;
  for (int c = 0; c < static_cast<int>(t.header.size()); ++c) {
    const std::string& h = t.header[c];
    if (h == "y") {
      ycol = c;
    } else if (h == "cens") {
      ccol = c;
    } else if (h.size() > 1 && h[0] == 'x') {
      xcols.push_back(c);
    } else {
      csv::fail(t.header_line, "unexpected column '" + h + "' (expected x1..xd, y, optional cens)");
    }
  }
  if (ycol < 0) csv::fail(t.header_line, "header has no 'y' column");
  if (xcols.empty()) csv::fail(t.header_line, "header has no covariate columns");

  const auto n = static_cast<Eigen::Index>(t.rows.size());
  Dataset data;
  data.x.resize(n, static_cast<Eigen::Index>(xcols.size()));
  data.y.resize(n);
  std::vector<bool> cens;
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = t.rows[r];
    for (std::size_t c = 0; c < xcols.size(); ++c) data.x(r, c) = row[xcols[c]];
    data.y(r) = row[ycol];
    if (ccol >= 0) {
      const double c = row[ccol];
      if (c != 0.0 && c != 1.0) csv::fail(t.lines[r], "cens must be 0 or 1");
      cens.push_back(c == 1.0);
    }
  }
  if (ccol >= 0) data.censored = std::move(cens);
  return data;
}

Dataset load_csv(const std::string& path) { return parse_csv(csv::read_file(path)); }

}  // namespace gploo
