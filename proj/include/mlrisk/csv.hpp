#pragma once

// Small CSV and number-formatting helpers shared by the exporters.

#include <cstdio>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "mlrisk/error.hpp"

namespace mlrisk::csv {

/// 12 significant digits; the precision all CSV outputs use.
inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline bool needs_quotes(std::string_view field) {
  return field.find_first_of(",\"\r\n") != std::string_view::npos;
}

inline std::string escape(std::string_view field) {
  if (!needs_quotes(field)) return std::string(field);
  std::string out;
  out.reserve(field.size() + 2);
  out.push_back('"');
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

/// Splits one record. Handles RFC 4180 quoting within a single line.
inline std::vector<std::string> split_line(std::string_view line, std::size_t line_no) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"' && cur.empty() && !was_quoted) {
      quoted = true;
      was_quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
      was_quoted = false;
    } else {
      if (was_quoted) {
        throw ValidationError("line " + std::to_string(line_no) +
                              ": unexpected character after closing quote");
      }
      cur.push_back(c);
    }
  }
  if (quoted) {
    throw ValidationError("line " + std::to_string(line_no) + ": unterminated quoted field");
  }
  fields.push_back(std::move(cur));
  return fields;
}

template <typename... Fields>
std::string join(const Fields&... fields) {
  std::string out;
  bool first = true;
  ((out += (first ? "" : ","), out += escape(fields), first = false), ...);
  return out;
}

}  // namespace mlrisk::csv
