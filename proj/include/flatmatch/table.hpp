#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace flatmatch {

// One typed value. Missing is the absence of a value, distinct from empty text.
struct Cell {
  enum class Kind { Missing, Integer, Real, Text };

  std::variant<std::monostate, std::int64_t, double, std::string> value;

  Cell() : value(std::monostate{}) {}

  static Cell missing() { return Cell{}; }
  static Cell integer(std::int64_t v) {
    Cell c;
    c.value = v;
    return c;
  }
  static Cell real(double v) {
    Cell c;
    c.value = v;
    return c;
  }
  static Cell text(std::string v) {
    Cell c;
    c.value = std::move(v);
    return c;
  }

  // Deterministic typing of a raw CSV field: Integer if the whole field is a
  // base-10 integer, else Real if a finite decimal/scientific number, else
  // Missing if empty, else Text.
  static Cell parse(std::string_view field);

  Kind kind() const { return static_cast<Kind>(value.index()); }
  bool is_missing() const { return kind() == Kind::Missing; }
  bool is_integer() const { return kind() == Kind::Integer; }

  std::int64_t as_integer() const { return std::get<std::int64_t>(value); }
  double as_real() const { return std::get<double>(value); }
  const std::string& as_text() const { return std::get<std::string>(value); }

  // Canonical rendering: Missing -> "", Integer -> decimal digits,
  // Real -> shortest round-trip form, Text -> the text itself.
  std::string to_string() const;

  bool operator==(const Cell& other) const { return value == other.value; }
};

// Immutable-by-convention relational table. All mutation happens by building
// new Table values; the operators below never modify their inputs.
struct Table {
  std::string name;
  std::vector<std::string> attributes;
  std::map<std::string, std::string> descriptions;  // keys subset of attributes
  std::vector<std::vector<Cell>> records;           // each row matches attributes

  std::optional<std::size_t> attribute_index(std::string_view attr) const;
  bool has_attribute(std::string_view attr) const {
    return attribute_index(attr).has_value();
  }
  std::string description_for(std::string_view attr) const;

  // Throws TableError subclasses when structural invariants are violated.
  void validate() const;
};

// The unpivot (melt) operator: which attributes to fold, plus the names of
// the generated variable and value columns.
struct UnpivotOperator {
  std::vector<std::string> unpivot_set;  // kept sorted + deduplicated
  std::string var_name;
  std::string value_name;

  // Canonicalizes (sorts + dedups) the set.
  static UnpivotOperator make(std::vector<std::string> set, std::string var,
                              std::string value);
};

// RFC 4180 CSV: quoted fields, doubled quotes, CRLF or LF row breaks.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);
std::string write_csv(const Table& t);

// Builds a table from CSV text (header row required) and an optional JSON
// object of attribute descriptions. Throws DuplicateAttributeError,
// RaggedRowError, UnknownAttributeError (description key not an attribute)
// or ParseError (malformed JSON / missing header).
Table load_table(std::string_view csv_text,
                 std::optional<std::string_view> descriptions_json,
                 std::string name);

// Folds op.unpivot_set into (var_name, value_name) pairs. Retained attributes
// keep their original order; output rows are emitted row-major in the source
// row order crossed with the source attribute order of the unpivoted set.
// An empty unpivot set returns the table unchanged.
Table apply_unpivot(const Table& t, const UnpivotOperator& op);

// Inverse of apply_unpivot: groups rows by the retained attributes and
// spreads (var, value) pairs back into columns, ordered by first appearance
// of each var value. Missing combinations become Missing cells; a repeated
// (group, var) combination raises DuplicateSpreadError.
Table apply_pivot(const Table& t, const std::string& var_name,
                  const std::string& value_name);

}  // namespace flatmatch
