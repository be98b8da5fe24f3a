#include "nodegam/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "nodegam/errors.hpp"

namespace nodegam {
namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

// One CSV record, honoring quotes; advances pos past the record terminator.
std::vector<std::string> parse_record(const std::string& text, std::size_t& pos) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  while (pos < text.size()) {
    const char c = text[pos];
    if (quoted) {
      if (c == '"') {
        if (pos + 1 < text.size() && text[pos + 1] == '"') {
          field.push_back('"');
          pos += 2;
        } else {
          quoted = false;
          ++pos;
        }
      } else {
        field.push_back(c);
        ++pos;
      }
      continue;
    }
    if (c == '"' && field.empty()) {
      quoted = true;
      ++pos;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
      ++pos;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && pos + 1 < text.size() && text[pos + 1] == '\n') ++pos;
      ++pos;
      fields.push_back(std::move(field));
      return fields;
    } else {
      field.push_back(c);
      ++pos;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

}  // namespace

std::optional<std::size_t> RawTable::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  return std::nullopt;
}

RawTable parse_csv(const std::string& text) {
  RawTable table;
  std::size_t pos = 0;
  if (text.empty()) throw schema_error("csv: empty file (header required)");
  table.header = parse_record(text, pos);
  for (std::string& h : table.header) h = trim(h);
  while (pos < text.size()) {
    // Skip blank lines.
    if (text[pos] == '\n' || text[pos] == '\r') {
      ++pos;
      continue;
    }
    std::vector<std::string> row = parse_record(text, pos);
    if (row.size() != table.header.size())
      throw schema_error("csv: row " + std::to_string(table.rows.size() + 2) + " has " +
                         std::to_string(row.size()) + " fields, header has " +
                         std::to_string(table.header.size()));
    table.rows.push_back(std::move(row));
  }
  return table;
}

RawTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw schema_error("csv: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str());
}

bool is_missing_cell(const std::string& cell) {
  if (cell.empty()) return true;
  const std::string l = lower(trim(cell));
  return l.empty() || l == "na" || l == "nan" || l == "null";
}

double parse_numeric_cell(const std::string& cell, const std::string& column) {
  const std::string t = trim(cell);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc{} || ptr != t.data() + t.size())
    throw schema_error("column '" + column + "': cannot parse '" + cell + "' as numeric");
  return value;
}

Schema Schema::parse(const std::string& text) {
  Schema schema;
  std::istringstream in(text);
  std::string line;
  std::size_t targets = 0;
  while (std::getline(in, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw schema_error("schema: expected 'name = kind', got '" + line + "'");
    const std::string name = trim(line.substr(0, eq));
    const std::string kind = lower(trim(line.substr(eq + 1)));
    if (name.empty()) throw schema_error("schema: empty column name");
    if (schema.find(name)) throw schema_error("schema: duplicate column '" + name + "'");
    Entry entry{name, ColumnKind::numeric};
    if (kind == "numeric") {
      entry.kind = ColumnKind::numeric;
    } else if (kind == "categorical") {
      entry.kind = ColumnKind::categorical;
    } else if (kind == "target") {
      entry.kind = ColumnKind::target;
      ++targets;
    } else {
      throw schema_error("schema: unknown kind '" + kind + "' for column '" + name + "'");
    }
    schema.columns.push_back(std::move(entry));
  }
  if (schema.columns.empty()) throw schema_error("schema: no columns declared");
  if (targets > 1) throw schema_error("schema: more than one target column");
  return schema;
}

Schema Schema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw schema_error("schema: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string Schema::to_text() const {
  std::ostringstream out;
  for (const Entry& e : columns) {
    out << e.name << " = ";
    switch (e.kind) {
      case ColumnKind::numeric: out << "numeric"; break;
      case ColumnKind::categorical: out << "categorical"; break;
      case ColumnKind::target: out << "target"; break;
    }
    out << "\n";
  }
  return out.str();
}

const Schema::Entry* Schema::find(const std::string& name) const {
  for (const Entry& e : columns)
    if (e.name == name) return &e;
  return nullptr;
}

std::string Schema::target_name() const {
  for (const Entry& e : columns)
    if (e.kind == ColumnKind::target) return e.name;
  throw schema_error("schema: no target column declared");
}

std::vector<std::string> Schema::feature_names() const {
  std::vector<std::string> names;
  for (const Entry& e : columns)
    if (e.kind != ColumnKind::target) names.push_back(e.name);
  return names;
}

}  // namespace nodegam
