#pragma once

// Shared test data: a football-statistics pivot/standard table pair small
// enough to hand-trace, plus helpers for building variants.

#include <cstdint>
#include <string>
#include <vector>

#include "flatmatch/table.hpp"

namespace fixtures {

inline flatmatch::Table football_source() {
  using flatmatch::Cell;
  flatmatch::Table t;
  t.name = "matches_wide";
  t.attributes = {"Div", "Date", "HS", "AS", "HST", "AST"};
  t.descriptions = {
      {"Div",
       "League division abbreviation (e.g., 'E0' for English Premier League)"},
      {"Date", "Match date (format: DD/MM/YY)"},
      {"HS", "Home Shots (total shots attempted by the home team)"},
      {"AS", "Away Shots (total shots attempted by the away team)"},
      {"HST", "Home Shots on Target (shots on goal by the home team)"},
      {"AST", "Away Shots on Target (shots on goal by the away team)"},
  };
  t.records = {
      {Cell::text("E0"), Cell::text("13/08/23"), Cell::integer(14),
       Cell::integer(11), Cell::integer(6), Cell::integer(5)},
      {Cell::text("E0"), Cell::text("14/08/23"), Cell::integer(9),
       Cell::integer(13), Cell::integer(4), Cell::integer(7)},
  };
  return t;
}

inline flatmatch::Table football_target() {
  using flatmatch::Cell;
  flatmatch::Table t;
  t.name = "matches_long";
  t.attributes = {"Div", "Date", "Metric", "Value"};
  t.records = {
      {Cell::text("E0"), Cell::text("13/08/23"), Cell::text("HS"),
       Cell::integer(14)},
      {Cell::text("E0"), Cell::text("13/08/23"), Cell::text("AS"),
       Cell::integer(11)},
      {Cell::text("E0"), Cell::text("14/08/23"), Cell::text("HS"),
       Cell::integer(9)},
  };
  return t;
}

// Tidy description-free table whose generated instance rewards the exact
// unpivot set with similarity 1.0 on every matched pair: attribute names
// align and the two metrics live in disjoint integer ranges.
inline flatmatch::Table clean_tidy_table() {
  using flatmatch::Cell;
  flatmatch::Table t;
  t.name = "tidy";
  t.attributes = {"Div", "Date", "Metric", "Value"};
  const char* dates[] = {"13/08/23", "14/08/23", "15/08/23"};
  std::int64_t home[] = {14, 9, 12};
  std::int64_t away[] = {1011, 1013, 1008};
  for (int i = 0; i < 3; ++i) {
    t.records.push_back({Cell::text("E0"), Cell::text(dates[i]),
                         Cell::text("HS"), Cell::integer(home[i])});
    t.records.push_back({Cell::text("E0"), Cell::text(dates[i]),
                         Cell::text("AS"), Cell::integer(away[i])});
  }
  return t;
}

inline std::string proposal_reply(const std::vector<std::string>& columns) {
  std::string reply = "{\"unpivot_columns\": [";
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i > 0) reply += ", ";
    reply += "\"" + columns[i] + "\"";
  }
  reply += "]}";
  return reply;
}

inline std::string naming_reply(const std::string& var,
                                const std::string& value) {
  return "{\"var_name\": \"" + var + "\", \"value_name\": \"" + value + "\"}";
}

}  // namespace fixtures
