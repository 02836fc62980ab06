#pragma once

#include <charconv>
#include <deque>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ypbp/dataset.hpp"
#include "ypbp/errors.hpp"

namespace ypbp {

inline constexpr const char* kVersion = "0.1.0";

// Shortest form is not used: every value carries 17 significant digits so
// reports diff cleanly and round-trip exactly.
inline std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof buffer, value, std::chars_format::general, 17);
  return std::string(buffer, result.ptr);
}

inline std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r");
  return std::string(text.substr(first, last - first + 1));
}

inline std::vector<std::string> split(std::string_view text, char delimiter) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(delimiter, start);
    out.push_back(trim(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Locale-independent: '.' decimal point only, no grouping, no leading '+'.
inline std::optional<double> parse_double(std::string_view text) {
  if (text.empty()) return std::nullopt;
  double value = 0.0;
  const auto result = std::from_chars(text.data(), text.data() + text.size(), value);
  if (result.ec != std::errc() || result.ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

/// Comma-separated values such as "1,0,0.5".
inline std::vector<double> parse_value_list(std::string_view text, const std::string& what) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  for (const auto& cell : split(text, ',')) {
    const auto v = parse_double(cell);
    if (!v || !std::isfinite(*v)) throw ConfigError(what + ": '" + cell + "' is not a number");
    out.push_back(*v);
  }
  return out;
}

/// Reads a dataset table: header row with `time`, `status`, and covariate
/// columns prefixed `z_` or `x_`. `source` names the input in error messages.
inline SurvivalDataset parse_dataset_text(std::string_view text, const std::string& source) {
  std::vector<std::string> lines;
  {
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto pos = text.find('\n', start);
      lines.emplace_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw ParseError(source, 1, "", "empty file: a header row is required");
  if (lines.front().starts_with("\xEF\xBB\xBF")) lines.front().erase(0, 3);

  const std::vector<std::string> header = split(lines.front(), ',');
  int time_col = -1, status_col = -1;
  std::vector<int> z_cols, x_cols;
  std::vector<std::string> z_names, x_names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& name = header[c];
    const int col = static_cast<int>(c);
    auto claim = [&](int& slot) {
      if (slot >= 0) throw ParseError(source, 1, name, "duplicate column");
      slot = col;
    };
    if (name == "time") {
      claim(time_col);
    } else if (name == "status") {
      claim(status_col);
    } else if (name.size() > 2 && name.starts_with("z_")) {
      z_cols.push_back(col);
      z_names.push_back(name.substr(2));
    } else if (name.size() > 2 && name.starts_with("x_")) {
      x_cols.push_back(col);
      x_names.push_back(name.substr(2));
    } else {
      throw ParseError(source, 1, name, "unrecognized column (expected time, status, z_* or x_*)");
    }
  }
  if (time_col < 0) throw ParseError(source, 1, "time", "missing required column");
  if (status_col < 0) throw ParseError(source, 1, "status", "missing required column");
  if (z_cols.empty()) throw ParseError(source, 1, "z_", "at least one z_ covariate column is required");

  const auto rows = static_cast<Eigen::Index>(lines.size() - 1);
  if (rows == 0) throw ParseError(source, 2, "", "no data rows");
  std::vector<double> time(static_cast<std::size_t>(rows));
  std::vector<int> status(static_cast<std::size_t>(rows));
  Eigen::MatrixXd z(rows, static_cast<Eigen::Index>(z_cols.size()));
  Eigen::MatrixXd x(rows, static_cast<Eigen::Index>(x_cols.size()));
  for (Eigen::Index i = 0; i < rows; ++i) {
    const std::size_t line = static_cast<std::size_t>(i) + 2;
    const std::vector<std::string> cells = split(lines[static_cast<std::size_t>(i) + 1], ',');
    if (cells.size() != header.size()) {
      throw ParseError(source, line, "", "expected " + std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()));
    }
    auto number = [&](int col) {
      const std::string& cell = cells[static_cast<std::size_t>(col)];
      const std::string& name = header[static_cast<std::size_t>(col)];
      if (cell.empty()) throw ParseError(source, line, name, "missing value");
      const auto v = parse_double(cell);
      if (!v || !std::isfinite(*v)) throw ParseError(source, line, name, "'" + cell + "' is not a finite number");
      return *v;
    };
    const double t = number(time_col);
    if (!(t > 0.0)) throw ParseError(source, line, "time", "time must be positive");
    const double s = number(status_col);
    if (s != 0.0 && s != 1.0) throw ParseError(source, line, "status", "status must be 0 or 1");
    time[static_cast<std::size_t>(i)] = t;
    status[static_cast<std::size_t>(i)] = static_cast<int>(s);
    for (std::size_t j = 0; j < z_cols.size(); ++j) z(i, static_cast<Eigen::Index>(j)) = number(z_cols[j]);
    for (std::size_t j = 0; j < x_cols.size(); ++j) x(i, static_cast<Eigen::Index>(j)) = number(x_cols[j]);
  }
  return SurvivalDataset(std::move(time), std::move(status), std::move(z), std::move(x), std::move(z_names), std::move(x_names));
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "", "cannot open file");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline SurvivalDataset parse_dataset(const std::string& path) { return parse_dataset_text(read_file(path), path); }

inline std::string dataset_text(const SurvivalDataset& data) {
  std::string out = "time,status";
  for (const auto& name : data.z_names()) out += ",z_" + name;
  for (const auto& name : data.x_names()) out += ",x_" + name;
  out += '\n';
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out += format_number(data.time()[i]);
    out += data.status()[i] == 1 ? ",1" : ",0";
    for (Eigen::Index j = 0; j < data.q(); ++j) out += "," + format_number(data.z()(r, j));
    for (Eigen::Index j = 0; j < data.p(); ++j) out += "," + format_number(data.x()(r, j));
    out += '\n';
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
  if (!out) throw ConfigError("write to '" + path + "' failed");
}

inline void write_dataset(const std::string& path, const SurvivalDataset& data) { write_text(path, dataset_text(data)); }

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

inline std::string hex64(std::uint64_t value) {
  char buffer[17];
  const auto result = std::to_chars(buffer, buffer + sizeof buffer, value, 16);
  std::string digits(buffer, result.ptr);
  return std::string(16 - digits.size(), '0') + digits;
}

/// Structured text document made of named sections. A section holds
/// `key = value` fields and optionally one table (a `columns = ...` line
/// followed by whitespace-separated rows).
class Report {
 public:
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> fields;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    Section& set(const std::string& key, const std::string& value) {
      for (auto& [k, v] : fields) {
        if (k == key) {
          v = value;
          return *this;
        }
      }
      fields.emplace_back(key, value);
      return *this;
    }
    Section& set(const std::string& key, const char* value) { return set(key, std::string(value)); }
    Section& set(const std::string& key, double value) { return set(key, format_number(value)); }
    Section& set(const std::string& key, int value) { return set(key, std::to_string(value)); }
    Section& set(const std::string& key, std::size_t value) { return set(key, std::to_string(value)); }
    Section& set(const std::string& key, bool value) { return set(key, value ? "true" : "false"); }

    const std::string* get(const std::string& key) const {
      for (const auto& [k, v] : fields) {
        if (k == key) return &v;
      }
      return nullptr;
    }
  };

  Section& section(const std::string& name) {
    for (auto& s : sections_) {
      if (s.name == name) return s;
    }
    return sections_.emplace_back(Section{name, {}, {}, {}});
  }

  const Section* find(const std::string& name) const {
    for (const auto& s : sections_) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }

  const std::deque<Section>& sections() const { return sections_; }
  bool has_error() const { return find("error") != nullptr; }

  std::string render() const {
    std::string out = "# ypbp report\n";
    for (const auto& s : sections_) {
      out += "\n[" + s.name + "]\n";
      for (const auto& [k, v] : s.fields) out += k + " = " + v + "\n";
      if (!s.columns.empty()) {
        out += "columns =";
        for (const auto& c : s.columns) out += " " + c;
        out += "\n";
        for (const auto& row : s.rows) {
          for (std::size_t j = 0; j < row.size(); ++j) out += (j ? " " : "") + row[j];
          out += "\n";
        }
      }
    }
    return out;
  }

  /// Inverse of render(); used to replay a report's embedded configuration.
  static Report parse(std::string_view text, const std::string& source = "report") {
    Report report;
    Section* current = nullptr;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
      const auto pos = text.find('\n', start);
      const std::string line(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
      start = pos == std::string_view::npos ? text.size() : pos + 1;
      ++line_no;
      if (line.empty() || line.front() == '#') continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ParseError(source, line_no, "", "malformed section header");
        current = &report.section(line.substr(1, line.size() - 2));
        continue;
      }
      if (!current) throw ParseError(source, line_no, "", "content before the first section");
      const auto eq = line.find(" = ");
      if (current->columns.empty() && eq != std::string::npos) {
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 3);
        if (key == "columns") {
          std::istringstream cols(value);
          for (std::string c; cols >> c;) current->columns.push_back(c);
        } else {
          current->fields.emplace_back(key, value);
        }
        continue;
      }
      if (line == "columns =") continue;
      if (current->columns.empty()) throw ParseError(source, line_no, "", "expected 'key = value'");
      std::istringstream cells(line);
      std::vector<std::string> row;
      for (std::string c; cells >> c;) row.push_back(c);
      current->rows.push_back(std::move(row));
    }
    return report;
  }

 private:
  std::deque<Section> sections_;  // stable references across section()
};

}  // namespace ypbp
