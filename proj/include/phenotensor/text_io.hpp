#pragma once

// Delimited-text and calendar-date helpers shared by the ingest and CLI code.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "common.hpp"

namespace phenotensor {

/// Days since 1970-01-01. Strong type so dates never mix with counts.
struct Date {
  std::int32_t days = 0;
  friend auto operator<=>(const Date&, const Date&) = default;
};

inline std::optional<Date> parse_date(std::string_view s) {
  // YYYY-MM-DD
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  auto num = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, v);
    if (ec != std::errc{} || p != s.data() + pos + len) return std::nullopt;
    return v;
  };
  auto y = num(0, 4), m = num(5, 2), d = num(8, 2);
  if (!y || !m || !d) return std::nullopt;
  std::chrono::year_month_day ymd{std::chrono::year{*y}, std::chrono::month{static_cast<unsigned>(*m)},
                                  std::chrono::day{static_cast<unsigned>(*d)}};
  if (!ymd.ok()) return std::nullopt;
  return Date{static_cast<std::int32_t>(std::chrono::sys_days{ymd}.time_since_epoch().count())};
}

inline std::string format_date(Date d) {
  std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{d.days}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

inline Date add_days(Date d, std::int32_t n) { return Date{d.days + n}; }

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string to_upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

inline std::vector<std::string> split(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    double v = std::stod(t, &used);
    if (used != t.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& part : split(s, ',')) {
    if (trim(part).empty()) continue;
    auto v = parse_double(part);
    if (!v) throw InputError("bad number list: " + s);
    out.push_back(*v);
  }
  return out;
}

/// A comma-separated table with a header row. Quoting is not supported:
/// every input format in this library is plain codes, ids and numbers.
class CsvTable {
 public:
  static CsvTable read(const std::string& path, const std::vector<std::string>& required) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open file: " + path);
    CsvTable t;
    t.path_ = path;
    std::string line;
    if (!std::getline(in, line)) throw InputError(path + ": empty file, expected a header row");
    auto header = split(line, ',');
    for (std::size_t c = 0; c < header.size(); ++c) t.columns_[trim(header[c])] = c;
    for (const auto& name : required) {
      if (!t.columns_.count(name)) throw InputError(path + ": missing mandatory column '" + name + "'");
    }
    t.width_ = header.size();
    std::size_t row_number = 1;
    while (std::getline(in, line)) {
      ++row_number;
      if (trim(line).empty()) continue;
      auto cells = split(line, ',');
      for (auto& c : cells) c = trim(c);
      t.rows_.push_back({row_number, std::move(cells)});
    }
    return t;
  }

  struct Row {
    std::size_t line = 0;  // 1-based line number in the file
    std::vector<std::string> cells;
  };

  const std::vector<Row>& rows() const { return rows_; }
  const std::string& path() const { return path_; }

  /// Cell value by column name; empty string when the row is short.
  const std::string& get(const Row& row, const std::string& column) const {
    static const std::string empty;
    auto idx = columns_.at(column);
    return idx < row.cells.size() ? row.cells[idx] : empty;
  }

 private:
  std::string path_;
  std::unordered_map<std::string, std::size_t> columns_;
  std::size_t width_ = 0;
  std::vector<Row> rows_;
};

/// Lines of a plain list file, trimmed, skipping blanks and '#' comments.
inline std::vector<std::string> read_list_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open file: " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    out.push_back(t);
  }
  return out;
}

/// Case-insensitive glob where '*' matches any (possibly empty) substring.
inline bool glob_match(std::string_view pattern, std::string_view text) {
  std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
  auto eq = [](char a, char b) {
    return std::toupper(static_cast<unsigned char>(a)) == std::toupper(static_cast<unsigned char>(b));
  };
  while (t < text.size()) {
    if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (p < pattern.size() && eq(pattern[p], text[t])) {
      ++p;
      ++t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

/// Parses `key = value` lines ('#' comments allowed) into a map.
inline std::unordered_map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open file: " + path);
  std::unordered_map<std::string, std::string> kv;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) throw InputError(path + ":" + std::to_string(n) + ": expected key = value");
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

}  // namespace phenotensor
