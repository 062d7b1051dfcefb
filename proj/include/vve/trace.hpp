#pragma once

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

#include "vve/csv.hpp"
#include "vve/errors.hpp"

namespace vve {

/// One recorded pose sample of the physical vehicle.
struct TraceRow {
  std::uint64_t t_us = 0;
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0;
  double v = 0.0;

  bool operator==(const TraceRow&) const = default;
};

inline const std::vector<std::string>& trace_header() {
  static const std::vector<std::string> h = {"t_us", "x", "y", "psi", "v"};
  return h;
}

namespace detail {

inline std::uint64_t parse_u64(const std::string& s, std::size_t line) {
  if (s.empty() || s[0] == '-')
    throw IngestError("timestamp must be a non-negative integer", line);
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (errno != 0 || end == s.c_str() || *end != '\0')
    throw IngestError("bad timestamp '" + s + "'", line);
  return v;
}

inline double parse_finite(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw IngestError("bad numeric field '" + s + "'", line);
  if (!std::isfinite(v))
    throw IngestError("field must be finite, got '" + s + "'", line);
  return v;
}

} // namespace detail

/// Load and validate a pose trace: exact header, numeric finite fields,
/// timestamps nondecreasing.  Errors carry the 1-based file line.
inline std::vector<TraceRow> read_trace(const std::string& path) {
  const auto raw = read_csv(path, trace_header());
  std::vector<TraceRow> rows;
  rows.reserve(raw.size());
  std::size_t line = 1; // header was line 1
  for (const auto& cells : raw) {
    ++line;
    TraceRow r;
    r.t_us = detail::parse_u64(cells[0], line);
    r.x = detail::parse_finite(cells[1], line);
    r.y = detail::parse_finite(cells[2], line);
    r.psi = detail::parse_finite(cells[3], line);
    r.v = detail::parse_finite(cells[4], line);
    if (!rows.empty() && r.t_us < rows.back().t_us)
      throw IngestError("timestamps must be nondecreasing", line);
    rows.push_back(r);
  }
  return rows;
}

inline void write_trace(const std::string& path,
                        const std::vector<TraceRow>& rows) {
  CsvWriter w(path, trace_header());
  for (const TraceRow& r : rows)
    w.row({std::to_string(r.t_us), csv_double(r.x), csv_double(r.y),
           csv_double(r.psi), csv_double(r.v)});
  w.flush();
}

} // namespace vve
