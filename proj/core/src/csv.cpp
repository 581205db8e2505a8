#include "smartbird/csv.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace smartbird {

void CsvTable::add_row(std::vector<std::string> cells) {
  if (cells.size() != columns.size()) {
    throw std::invalid_argument("csv row has " + std::to_string(cells.size()) +
                                " cells, expected " +
                                std::to_string(columns.size()));
  }
  rows.push_back(std::move(cells));
}

int CsvTable::column_index(const std::string& name) const {
  for (size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<int>(i);
  return -1;
}

static bool needs_quoting(const std::string& s) {
  return s.find_first_of(",\"\n") != std::string::npos;
}

static void emit_cell(std::string& out, const std::string& cell) {
  if (!needs_quoting(cell)) {
    out += cell;
    return;
  }
  out += '"';
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
}

static void emit_row(std::string& out, const std::vector<std::string>& row) {
  for (size_t i = 0; i < row.size(); ++i) {
    if (i) out += ',';
    emit_cell(out, row[i]);
  }
  out += '\n';
}

std::string CsvTable::emit() const {
  std::string out;
  if (!meta.empty()) {
    out += "# ";
    out += meta;
    out += '\n';
  }
  emit_row(out, columns);
  for (const auto& r : rows) emit_row(out, r);
  return out;
}

static std::vector<std::string> parse_line(const std::string& text,
                                           size_t& pos) {
  std::vector<std::string> cells;
  std::string cur;
  bool in_quotes = false;
  while (pos < text.size()) {
    const char c = text[pos];
    if (in_quotes) {
      if (c == '"') {
        if (pos + 1 < text.size() && text[pos + 1] == '"') {
          cur += '"';
          ++pos;
        } else {
          in_quotes = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c == '\n') {
      ++pos;
      cells.push_back(cur);
      return cells;
    } else {
      cur += c;
    }
    ++pos;
  }
  cells.push_back(cur);
  return cells;
}

CsvTable CsvTable::parse(const std::string& text) {
  CsvTable t;
  size_t pos = 0;
  if (text.size() >= 2 && text[0] == '#') {
    size_t nl = text.find('\n');
    if (nl == std::string::npos) nl = text.size();
    size_t start = 1;
    while (start < nl && text[start] == ' ') ++start;
    t.meta = text.substr(start, nl - start);
    pos = (nl == text.size()) ? nl : nl + 1;
  }
  if (pos >= text.size()) throw std::invalid_argument("csv has no header row");
  t.columns = parse_line(text, pos);
  while (pos < text.size()) {
    t.rows.push_back(parse_line(text, pos));
  }
  return t;
}

void CsvTable::write_file(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  const std::string body = emit();
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

CsvTable CsvTable::read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string fmt_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string fmt_general(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string fmt_u64(uint64_t v) { return std::to_string(v); }

}  // namespace smartbird
