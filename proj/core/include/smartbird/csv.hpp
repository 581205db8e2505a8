#pragma once

#include <string>
#include <vector>

namespace smartbird {

// Minimal CSV table with a one-line JSON metadata header comment:
//   # {...}
//   col_a,col_b
//   1,2
// Cells containing separators are quoted; parse(emit(t)) reproduces t.
struct CsvTable {
  std::string meta;  // JSON text placed after "# " on the first line
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> cells);
  int column_index(const std::string& name) const;  // -1 when absent

  std::string emit() const;
  static CsvTable parse(const std::string& text);

  void write_file(const std::string& path) const;
  static CsvTable read_file(const std::string& path);
};

// Fixed-format float helpers (deterministic output).
std::string fmt_fixed(double v, int decimals);
std::string fmt_general(double v);  // %.12g
std::string fmt_u64(uint64_t v);

}  // namespace smartbird
