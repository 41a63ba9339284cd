#pragma once

// Tabular CSV ingestion into client datasets.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fairfl/data.hpp"
#include "fairfl/errors.hpp"

namespace fairfl {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// 1-based source line of each row, for error messages.
  std::vector<std::size_t> lines;

  std::size_t column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError(1, "missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Splits one line on commas; double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (quoted) throw ParseError(line_no, "unterminated quoted field");
  out.push_back(trim(cur));
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads a header row and data rows; blank lines are skipped, ragged rows rejected.
inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line, line_no);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw ParseError(line_no, "expected " + std::to_string(t.header.size()) + " fields, found " +
                                    std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.lines.push_back(line_no);
  }
  if (t.header.empty()) throw ParseError(1, "missing header row");
  return t;
}

struct CsvSchema {
  std::string label_column = "label";
  std::string group_column = "group";
  std::optional<std::string> client_column;
  /// Raw group value -> group. Required: every group value must be mapped.
  std::map<std::string, Group> group_value_map;
  /// Raw label value -> {0,1}. When empty, labels must read as 0 or 1.
  std::map<std::string, int> label_value_map;
};

/// Numeric feature columns are z-scored over the whole file (centered only when constant);
/// other feature columns are one-hot encoded with levels in lexicographic order. Features keep
/// header order. Without a client column a single client 0 is produced; otherwise one client
/// per distinct value, in ascending value order (numeric values become the client id).
inline std::vector<ClientDataset> load_csv_dataset(std::istream& in, const CsvSchema& schema) {
  const CsvTable t = read_csv(in);
  if (t.rows.empty()) throw ParseError(1, "no data rows");
  if (schema.group_value_map.empty()) throw ValidationError("group_value_map must not be empty");
  const std::size_t label_col = t.column(schema.label_column);
  const std::size_t group_col = t.column(schema.group_column);
  std::optional<std::size_t> client_col;
  if (schema.client_column) client_col = t.column(*schema.client_column);

  struct FeatureColumn {
    std::size_t index;
    bool numeric;
    double mean = 0.0, scale = 1.0;
    std::vector<std::string> levels;
  };
  std::vector<FeatureColumn> features;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (c == label_col || c == group_col || (client_col && c == *client_col)) continue;
    FeatureColumn f{c, true, 0.0, 1.0, {}};
    for (const auto& row : t.rows)
      if (!detail::parse_double(row[c])) f.numeric = false;
    if (f.numeric) {
      double sum = 0.0;
      for (const auto& row : t.rows) sum += *detail::parse_double(row[c]);
      f.mean = sum / static_cast<double>(t.rows.size());
      double var = 0.0;
      for (const auto& row : t.rows) {
        const double d = *detail::parse_double(row[c]) - f.mean;
        var += d * d;
      }
      const double sd = std::sqrt(var / static_cast<double>(t.rows.size()));
      f.scale = sd > 0.0 ? sd : 1.0;
    } else {
      std::set<std::string> levels;
      for (const auto& row : t.rows) levels.insert(row[c]);
      f.levels.assign(levels.begin(), levels.end());
    }
    features.push_back(std::move(f));
  }
  if (features.empty()) throw ParseError(1, "no feature columns");

  std::map<std::string, std::vector<Sample>> by_client;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::size_t line = t.lines[r];
    Sample s;
    const auto g = schema.group_value_map.find(row[group_col]);
    if (g == schema.group_value_map.end()) throw ParseError(line, "unmapped group value '" + row[group_col] + "'");
    s.group = g->second;
    if (schema.label_value_map.empty()) {
      if (row[label_col] == "0") s.label = 0;
      else if (row[label_col] == "1") s.label = 1;
      else throw ParseError(line, "label '" + row[label_col] + "' is not 0 or 1");
    } else {
      const auto l = schema.label_value_map.find(row[label_col]);
      if (l == schema.label_value_map.end()) throw ParseError(line, "unmapped label value '" + row[label_col] + "'");
      if (l->second != 0 && l->second != 1) throw ValidationError("label_value_map targets must be 0 or 1");
      s.label = l->second;
    }
    for (const auto& f : features) {
      if (f.numeric) {
        s.features.push_back((*detail::parse_double(row[f.index]) - f.mean) / f.scale);
      } else {
        for (const auto& level : f.levels) s.features.push_back(row[f.index] == level ? 1.0 : 0.0);
      }
    }
    by_client[client_col ? row[*client_col] : std::string("0")].push_back(std::move(s));
  }

  bool numeric_ids = true;
  for (const auto& [key, _] : by_client) {
    const auto v = detail::parse_double(key);
    if (!v || *v != std::floor(*v)) numeric_ids = false;
  }
  std::vector<std::pair<double, std::string>> keys;
  for (const auto& [key, _] : by_client) keys.emplace_back(numeric_ids ? *detail::parse_double(key) : 0.0, key);
  if (numeric_ids) std::sort(keys.begin(), keys.end());

  std::vector<ClientDataset> out;
  for (std::size_t k = 0; k < keys.size(); ++k) {
    const int id = numeric_ids ? static_cast<int>(keys[k].first) : static_cast<int>(k);
    out.emplace_back(id, std::move(by_client[keys[k].second]));
  }
  return out;
}

inline std::vector<ClientDataset> load_csv_dataset(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return load_csv_dataset(in, schema);
}

}  // namespace fairfl
