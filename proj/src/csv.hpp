#pragma once

#include <string>
#include <vector>

namespace gploo::csv {

/// Numeric CSV with a header row. Every data cell must parse as a finite
/// number; errors name the 1-based line.
struct Table {
  std::vector<std::string> header;
  std::size_t header_line = 0;
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> lines;  // source line of each row
};

Table parse(const std::string& text);
std::string read_file(const std::string& path);
[[noreturn]] void fail(std::size_t line, const std::string& what);

}  // namespace gploo::csv
