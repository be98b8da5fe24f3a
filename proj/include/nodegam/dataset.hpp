#pragma once

#include <optional>
#include <string>
#include <vector>

namespace nodegam {

/// Parsed CSV contents (header required, RFC-4180 style quoting).
struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t num_rows() const { return rows.size(); }
  std::size_t num_cols() const { return header.size(); }
  std::optional<std::size_t> column_index(const std::string& name) const;
};

RawTable read_csv(const std::string& path);
RawTable parse_csv(const std::string& text);

/// True for the cell encodings treated as missing values.
bool is_missing_cell(const std::string& cell);

/// Strict numeric parse; throws schema_error naming the column on failure.
double parse_numeric_cell(const std::string& cell, const std::string& column);

enum class ColumnKind { numeric, categorical, target };

/// Column-role declarations, one `name = numeric|categorical|target` line
/// per column. Exactly one target.
struct Schema {
  struct Entry {
    std::string name;
    ColumnKind kind;
  };
  std::vector<Entry> columns;

  static Schema parse(const std::string& text);
  static Schema load(const std::string& path);
  std::string to_text() const;

  const Entry* find(const std::string& name) const;
  std::string target_name() const;  // throws schema_error if absent
  std::vector<std::string> feature_names() const;
};

}  // namespace nodegam
