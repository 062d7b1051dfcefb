#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vve/errors.hpp"

namespace vve {

/// Doubles are printed with 17 significant digits so that a value written
/// by one process and re-read by another survives the round trip bit-exactly
/// (two cooperating runs can be compared byte for byte).
inline std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Minimal streaming CSV writer: one header, then append-only rows.
class CsvWriter {
public:
  CsvWriter() = default;
  CsvWriter(const std::string& path, const std::vector<std::string>& header) {
    open(path, header);
  }

  void open(const std::string& path, const std::vector<std::string>& header) {
    out_.open(path, std::ios::trunc);
    if (!out_) throw IoError("cannot open for writing: " + path);
    columns_ = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i) out_ << ',';
      out_ << header[i];
    }
    out_ << '\n';
  }

  bool is_open() const { return out_.is_open(); }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_)
      throw IoError("csv row width mismatch: expected " +
                    std::to_string(columns_) + ", got " +
                    std::to_string(cells.size()));
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  void flush() { out_.flush(); }

private:
  std::ofstream out_;
  std::size_t columns_ = 0;
};

/// Split one CSV line on commas (no quoting in any of our formats).
inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

/// Read a whole CSV file, verifying the expected header.
/// Returns data rows (header excluded).  Line numbers in errors are 1-based.
inline std::vector<std::vector<std::string>>
read_csv(const std::string& path, const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IngestError("empty file: " + path, 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto head = csv_split(line);
  if (head != header) throw IngestError("unexpected header in " + path, 1);
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = csv_split(line);
    if (cells.size() != header.size())
      throw IngestError("row width mismatch in " + path, lineno);
    rows.push_back(std::move(cells));
  }
  return rows;
}

} // namespace vve
