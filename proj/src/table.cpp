#include "flatmatch/table.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <utility>

#include <json.hpp>

#include "flatmatch/errors.hpp"

namespace flatmatch {

namespace {

bool parse_integer(std::string_view field, std::int64_t& out) {
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, out, 10);
  return ec == std::errc{} && ptr == last;
}

bool parse_real(std::string_view field, double& out) {
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, out, std::chars_format::general);
  return ec == std::errc{} && ptr == last && std::isfinite(out);
}

std::string real_to_string(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

bool needs_quoting(std::string_view field) {
  return field.find_first_of(",\"\r\n") != std::string_view::npos;
}

std::string quote_field(std::string_view field) {
  std::string out;
  out.reserve(field.size() + 2);
  out.push_back('"');
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

bool cell_less(const Cell& a, const Cell& b) { return a.value < b.value; }

struct RowLess {
  bool operator()(const std::vector<Cell>& a, const std::vector<Cell>& b) const {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(),
                                        cell_less);
  }
};

}  // namespace

Cell Cell::parse(std::string_view field) {
  std::int64_t i = 0;
  if (parse_integer(field, i)) return Cell::integer(i);
  double d = 0.0;
  if (parse_real(field, d)) return Cell::real(d);
  if (field.empty()) return Cell::missing();
  return Cell::text(std::string(field));
}

std::string Cell::to_string() const {
  switch (kind()) {
    case Kind::Missing:
      return std::string();
    case Kind::Integer:
      return std::to_string(as_integer());
    case Kind::Real:
      return real_to_string(as_real());
    case Kind::Text:
      return as_text();
  }
  return std::string();
}

std::optional<std::size_t> Table::attribute_index(std::string_view attr) const {
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    if (attributes[i] == attr) return i;
  }
  return std::nullopt;
}

std::string Table::description_for(std::string_view attr) const {
  auto it = descriptions.find(std::string(attr));
  return it == descriptions.end() ? std::string() : it->second;
}

void Table::validate() const {
  std::set<std::string_view> seen;
  for (const auto& attr : attributes) {
    if (attr.empty()) {
      throw TableError("table '" + name + "' has an empty attribute name");
    }
    if (!seen.insert(attr).second) {
      throw DuplicateAttributeError("table '" + name +
                                    "' has duplicate attribute '" + attr + "'");
    }
  }
  for (std::size_t r = 0; r < records.size(); ++r) {
    if (records[r].size() != attributes.size()) {
      throw RaggedRowError("table '" + name + "' row " + std::to_string(r) +
                           " has " + std::to_string(records[r].size()) +
                           " cells, expected " +
                           std::to_string(attributes.size()));
    }
  }
  for (const auto& [key, _] : descriptions) {
    if (!has_attribute(key)) {
      throw UnknownAttributeError("table '" + name +
                                  "' describes unknown attribute '" + key + "'");
    }
  }
}

UnpivotOperator UnpivotOperator::make(std::vector<std::string> set,
                                      std::string var, std::string value) {
  std::sort(set.begin(), set.end());
  set.erase(std::unique(set.begin(), set.end()), set.end());
  return UnpivotOperator{std::move(set), std::move(var), std::move(value)};
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;  // true once the current row has any content
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = true;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
    field_started = false;
  };
  while (i < n) {
    char ch = text[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < n && text[i + 1] == '"') {
          field.push_back('"');
          i += 2;
        } else {
          in_quotes = false;
          ++i;
        }
      } else {
        field.push_back(ch);
        ++i;
      }
      continue;
    }
    switch (ch) {
      case '"':
        in_quotes = true;
        ++i;
        break;
      case ',':
        end_field();
        ++i;
        break;
      case '\r':
        if (i + 1 < n && text[i + 1] == '\n') ++i;
        end_row();
        ++i;
        break;
      case '\n':
        end_row();
        ++i;
        break;
      default:
        field.push_back(ch);
        ++i;
        break;
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted CSV field");
  if (!field.empty() || !row.empty() || field_started) end_row();
  return rows;
}

std::string write_csv(const Table& t) {
  std::string out;
  auto append_row = [&out](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i > 0) out.push_back(',');
      out += needs_quoting(fields[i]) ? quote_field(fields[i]) : fields[i];
    }
    out.push_back('\n');
  };
  append_row(t.attributes);
  std::vector<std::string> fields;
  for (const auto& record : t.records) {
    fields.clear();
    for (const auto& cell : record) fields.push_back(cell.to_string());
    append_row(fields);
  }
  return out;
}

Table load_table(std::string_view csv_text,
                 std::optional<std::string_view> descriptions_json,
                 std::string name) {
  auto rows = parse_csv(csv_text);
  if (rows.empty()) {
    throw ParseError("table '" + name + "': CSV has no header row");
  }
  Table t;
  t.name = std::move(name);
  t.attributes = rows.front();
  t.records.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    std::vector<Cell> record;
    record.reserve(rows[r].size());
    for (const auto& field : rows[r]) record.push_back(Cell::parse(field));
    t.records.push_back(std::move(record));
  }
  if (descriptions_json.has_value()) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(*descriptions_json);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("table '" + t.name + "': malformed description JSON: " +
                       e.what());
    }
    if (!doc.is_object()) {
      throw ParseError("table '" + t.name +
                       "': description JSON must be an object");
    }
    for (const auto& [key, value] : doc.items()) {
      if (!value.is_string()) {
        throw ParseError("table '" + t.name + "': description for '" + key +
                         "' must be a string");
      }
      t.descriptions[key] = value.get<std::string>();
    }
  }
  t.validate();
  return t;
}

Table apply_unpivot(const Table& t, const UnpivotOperator& op) {
  t.validate();
  if (op.unpivot_set.empty()) return t;

  std::vector<std::size_t> unpivot_idx;  // in t's attribute order
  std::set<std::string_view> unpivot_names(op.unpivot_set.begin(),
                                           op.unpivot_set.end());
  for (const auto& attr : op.unpivot_set) {
    if (!t.has_attribute(attr)) {
      throw UnknownAttributeError("unpivot set names unknown attribute '" +
                                  attr + "' of table '" + t.name + "'");
    }
  }
  std::vector<std::size_t> retained_idx;
  for (std::size_t i = 0; i < t.attributes.size(); ++i) {
    if (unpivot_names.count(t.attributes[i])) {
      unpivot_idx.push_back(i);
    } else {
      retained_idx.push_back(i);
    }
  }

  if (op.var_name == op.value_name) {
    throw NameCollisionError("var and value columns share the name '" +
                             op.var_name + "'");
  }
  for (std::size_t i : retained_idx) {
    if (t.attributes[i] == op.var_name || t.attributes[i] == op.value_name) {
      throw NameCollisionError("generated column '" + t.attributes[i] +
                               "' collides with a retained attribute");
    }
  }

  Table out;
  out.name = t.name;
  for (std::size_t i : retained_idx) {
    out.attributes.push_back(t.attributes[i]);
    auto it = t.descriptions.find(t.attributes[i]);
    if (it != t.descriptions.end()) out.descriptions[it->first] = it->second;
  }
  out.attributes.push_back(op.var_name);
  out.attributes.push_back(op.value_name);

  out.records.reserve(t.records.size() * unpivot_idx.size());
  for (const auto& record : t.records) {
    for (std::size_t u : unpivot_idx) {
      std::vector<Cell> row;
      row.reserve(retained_idx.size() + 2);
      for (std::size_t i : retained_idx) row.push_back(record[i]);
      row.push_back(Cell::text(t.attributes[u]));
      row.push_back(record[u]);
      out.records.push_back(std::move(row));
    }
  }
  return out;
}

Table apply_pivot(const Table& t, const std::string& var_name,
                  const std::string& value_name) {
  t.validate();
  auto var_idx = t.attribute_index(var_name);
  auto value_idx = t.attribute_index(value_name);
  if (!var_idx) {
    throw UnknownAttributeError("pivot var attribute '" + var_name +
                                "' not in table '" + t.name + "'");
  }
  if (!value_idx) {
    throw UnknownAttributeError("pivot value attribute '" + value_name +
                                "' not in table '" + t.name + "'");
  }
  if (*var_idx == *value_idx) {
    throw NameCollisionError("pivot var and value must be distinct attributes");
  }

  std::vector<std::size_t> retained_idx;
  for (std::size_t i = 0; i < t.attributes.size(); ++i) {
    if (i != *var_idx && i != *value_idx) retained_idx.push_back(i);
  }

  Table out;
  out.name = t.name;
  for (std::size_t i : retained_idx) {
    out.attributes.push_back(t.attributes[i]);
    auto it = t.descriptions.find(t.attributes[i]);
    if (it != t.descriptions.end()) out.descriptions[it->first] = it->second;
  }

  // Group rows by retained cells, keeping first-appearance order for both
  // groups and spread columns.
  std::map<std::vector<Cell>, std::size_t, RowLess> group_of;
  std::vector<std::vector<Cell>> group_keys;
  std::map<std::string, std::size_t> spread_of;
  std::vector<std::string> spread_names;
  // cells[group][spread]
  std::vector<std::map<std::size_t, Cell>> cells;

  for (std::size_t r = 0; r < t.records.size(); ++r) {
    const auto& record = t.records[r];
    std::vector<Cell> key;
    key.reserve(retained_idx.size());
    for (std::size_t i : retained_idx) key.push_back(record[i]);

    auto [git, inserted] = group_of.try_emplace(key, group_keys.size());
    if (inserted) {
      group_keys.push_back(key);
      cells.emplace_back();
    }
    std::size_t g = git->second;

    const Cell& var_cell = record[*var_idx];
    if (var_cell.is_missing()) {
      throw TableError("pivot: row " + std::to_string(r) +
                       " has a Missing var value");
    }
    std::string spread = var_cell.to_string();
    auto [sit, new_spread] = spread_of.try_emplace(spread, spread_names.size());
    if (new_spread) spread_names.push_back(spread);
    std::size_t s = sit->second;

    if (!cells[g].emplace(s, record[*value_idx]).second) {
      throw DuplicateSpreadError("pivot: duplicate (group, var) combination for var '" +
                                 spread + "' in row " + std::to_string(r));
    }
  }

  for (const auto& spread : spread_names) out.attributes.push_back(spread);

  out.records.reserve(group_keys.size());
  for (std::size_t g = 0; g < group_keys.size(); ++g) {
    std::vector<Cell> row = group_keys[g];
    row.reserve(retained_idx.size() + spread_names.size());
    for (std::size_t s = 0; s < spread_names.size(); ++s) {
      auto it = cells[g].find(s);
      row.push_back(it == cells[g].end() ? Cell::missing() : it->second);
    }
    out.records.push_back(std::move(row));
  }
  out.validate();
  return out;
}

}  // namespace flatmatch
