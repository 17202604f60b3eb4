#pragma once

// Minimal CSV helpers for the fixed-schema files this project reads and writes.

#include <charconv>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "flowctl/error.hpp"

namespace flowctl::csv {

/// 17 significant digits: enough for an exact binary64 round trip.
inline std::string format_double(double x)
{
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline std::string_view trim(std::string_view s)
{
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) { s.remove_suffix(1); }
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) { s.remove_prefix(1); }
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',')
{
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) { break; }
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view s, const std::string & where)
{
  double x = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    fail(ErrorKind::Parse, where + ": '" + std::string(s) + "' is not a number");
  }
  return x;
}

inline std::size_t parse_size(std::string_view s, const std::string & where)
{
  std::size_t x = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    fail(ErrorKind::Parse, where + ": '" + std::string(s) + "' is not an index");
  }
  return x;
}

}  // namespace flowctl::csv
