#pragma once

// Minimal CSV helpers shared by the file readers. Fields never contain commas
// or quotes in any format this library writes, so no quoting is supported.

#include <charconv>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace dk::csv {

inline std::vector<std::string_view> split(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

/// Shortest text that reads back to the same double.
inline std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view text, const std::string& context) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty())
    throw std::runtime_error(context + ": not a number: '" + std::string(text) + "'");
  return value;
}

inline long long parse_int(std::string_view text, const std::string& context) {
  long long value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty())
    throw std::runtime_error(context + ": not an integer: '" + std::string(text) + "'");
  return value;
}

}  // namespace dk::csv
