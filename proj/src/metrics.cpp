#include "flatmatch/metrics.hpp"

#include <algorithm>
#include <cassert>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

#include "flatmatch/detail/hash.hpp"
#include "flatmatch/errors.hpp"

namespace flatmatch {

namespace {

std::vector<std::string> canonical_set(std::vector<std::string> names) {
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  return names;
}

bool contains(const std::vector<std::string>& sorted_set,
              const std::string& name) {
  return std::binary_search(sorted_set.begin(), sorted_set.end(), name);
}

void require_attribute(const Table& t, const std::string& name,
                       const std::string& what) {
  if (!t.has_attribute(name)) {
    throw UnknownAttributeError(what + " references unknown attribute '" +
                                name + "' of table '" + t.name + "'");
  }
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("failed while writing " + path.string());
}

std::string descriptions_to_json(const Table& t) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& attr : t.attributes) {
    auto it = t.descriptions.find(attr);
    if (it != t.descriptions.end()) doc[attr] = it->second;
  }
  return doc.dump(2) + "\n";
}

}  // namespace

GroundTruth parse_ground_truth(const std::string& json_text) {
  auto doc = nlohmann::json::parse(json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw ParseError("ground truth is not a JSON object", json_text);
  }
  GroundTruth gt;
  if (!doc.contains("unpivot_set") || !doc["unpivot_set"].is_array()) {
    throw ParseError("ground truth lacks an unpivot_set array", json_text);
  }
  std::vector<std::string> set;
  for (const auto& item : doc["unpivot_set"]) {
    if (!item.is_string()) {
      throw ParseError("unpivot_set entries must be strings", json_text);
    }
    set.push_back(item.get<std::string>());
  }
  gt.unpivot_set = canonical_set(std::move(set));

  if (doc.contains("generated_targets") &&
      !doc["generated_targets"].is_null()) {
    const auto& targets = doc["generated_targets"];
    if (!targets.is_object() || !targets.contains("var") ||
        !targets.contains("value") || !targets["var"].is_string() ||
        !targets["value"].is_string()) {
      throw ParseError(
          "generated_targets must be {\"var\": name, \"value\": name}",
          json_text);
    }
    gt.generated_targets = {targets["var"].get<std::string>(),
                            targets["value"].get<std::string>()};
  }

  if (doc.contains("retained_matching") &&
      !doc["retained_matching"].is_null()) {
    const auto& matching = doc["retained_matching"];
    if (!matching.is_object()) {
      throw ParseError("retained_matching must be an object", json_text);
    }
    for (const auto& [key, value] : matching.items()) {
      if (value.is_null()) {
        gt.retained_matching[key] = std::nullopt;
      } else if (value.is_string()) {
        gt.retained_matching[key] = value.get<std::string>();
      } else {
        throw ParseError("retained_matching values must be names or null",
                         json_text);
      }
    }
  }
  return gt;
}

std::string ground_truth_to_json(const GroundTruth& gt) {
  nlohmann::ordered_json doc;
  doc["unpivot_set"] = gt.unpivot_set;
  if (gt.generated_targets) {
    doc["generated_targets"] = {{"var", gt.generated_targets->first},
                                {"value", gt.generated_targets->second}};
  }
  nlohmann::ordered_json matching = nlohmann::ordered_json::object();
  for (const auto& [attr, target] : gt.retained_matching) {
    if (target) {
      matching[attr] = *target;
    } else {
      matching[attr] = nullptr;
    }
  }
  doc["retained_matching"] = std::move(matching);
  return doc.dump(2) + "\n";
}

void validate_ground_truth(const GroundTruth& gt, const Table& source,
                           const Table& target) {
  for (const auto& attr : gt.unpivot_set) {
    require_attribute(source, attr, "unpivot_set");
  }
  std::set<std::string> used_targets;
  auto claim_target = [&](const std::string& name, const std::string& what) {
    require_attribute(target, name, what);
    if (!used_targets.insert(name).second) {
      throw TableError("ground truth maps two attributes to target '" + name +
                       "'");
    }
  };
  if (gt.generated_targets) {
    if (gt.unpivot_set.empty()) {
      throw TableError(
          "ground truth defines generated targets without an unpivot set");
    }
    claim_target(gt.generated_targets->first, "generated_targets.var");
    claim_target(gt.generated_targets->second, "generated_targets.value");
  }
  for (const auto& [attr, matched] : gt.retained_matching) {
    require_attribute(source, attr, "retained_matching");
    if (contains(gt.unpivot_set, attr)) {
      throw TableError("retained_matching lists unpivoted attribute '" + attr +
                       "'");
    }
    if (matched) claim_target(*matched, "retained_matching");
  }
}

MetricsReport score(
    const GroundTruth& gt, const UnpivotOperator& op,
    const std::map<std::string, std::optional<std::string>>& predicted_matches,
    const Table& source, const Table& target) {
  validate_ground_truth(gt, source, target);
  for (const auto& attr : op.unpivot_set) {
    require_attribute(source, attr, "predicted unpivot set");
  }

  const bool exact_set = op.unpivot_set == gt.unpivot_set;

  // Ground-truth matching for a reference-retained attribute; attributes
  // absent from the map are matched to nothing.
  auto reference_target =
      [&gt](const std::string& attr) -> std::optional<std::string> {
    auto it = gt.retained_matching.find(attr);
    return it == gt.retained_matching.end() ? std::nullopt : it->second;
  };
  auto predicted_target = [&predicted_matches](const std::string& attr)
      -> const std::optional<std::string>* {
    auto it = predicted_matches.find(attr);
    return it == predicted_matches.end() ? nullptr : &it->second;
  };

  MetricsReport report;
  report.attr_denominator = source.attributes.size() + target.attributes.size();

  // --- End-to-end accuracy -------------------------------------------------
  std::size_t e2e_correct = 0;
  for (const auto& attr : source.attributes) {
    if (contains(op.unpivot_set, attr)) continue;  // not in the reshaped table
    if (contains(gt.unpivot_set, attr)) continue;  // no reference target
    auto reference = reference_target(attr);
    if (!reference) continue;  // null reference targets are out of scope here
    ++report.e2e_denominator;
    const auto* predicted = predicted_target(attr);
    if (predicted != nullptr && *predicted == reference) ++e2e_correct;
  }
  if (gt.generated_targets) {
    report.e2e_denominator += 2;
    if (exact_set) {
      const auto* var_match = predicted_target(op.var_name);
      if (var_match != nullptr && *var_match &&
          **var_match == gt.generated_targets->first) {
        ++e2e_correct;
      }
      const auto* value_match = predicted_target(op.value_name);
      if (value_match != nullptr && *value_match &&
          **value_match == gt.generated_targets->second) {
        ++e2e_correct;
      }
    }
  }
  report.acc_e2e = report.e2e_denominator == 0
                       ? 1.0
                       : static_cast<double>(e2e_correct) /
                             static_cast<double>(report.e2e_denominator);

  // --- Per-attribute accuracy ----------------------------------------------
  std::set<std::string> correct_sources;  // reference-retained, match agrees
  std::set<std::string> hit_targets;      // targets of correct non-null matches
  for (const auto& attr : source.attributes) {
    if (contains(gt.unpivot_set, attr)) continue;
    auto reference = reference_target(attr);
    const auto* predicted = predicted_target(attr);
    if (predicted == nullptr || *predicted != reference) continue;
    correct_sources.insert(attr);
    if (reference) hit_targets.insert(*reference);
  }
  if (exact_set && gt.generated_targets) {
    const auto* var_match = predicted_target(op.var_name);
    if (var_match != nullptr && *var_match &&
        **var_match == gt.generated_targets->first) {
      hit_targets.insert(gt.generated_targets->first);
    }
    const auto* value_match = predicted_target(op.value_name);
    if (value_match != nullptr && *value_match &&
        **value_match == gt.generated_targets->second) {
      hit_targets.insert(gt.generated_targets->second);
    }
  }
  std::vector<std::string> set_overlap;
  std::set_intersection(gt.unpivot_set.begin(), gt.unpivot_set.end(),
                        op.unpivot_set.begin(), op.unpivot_set.end(),
                        std::back_inserter(set_overlap));
  report.correct_set_size = set_overlap.size();
  for ([[maybe_unused]] const auto& attr : set_overlap) {
    assert(!correct_sources.count(attr));  // clauses must stay disjoint
  }
  std::size_t attr_correct =
      correct_sources.size() + hit_targets.size() + set_overlap.size();
  report.acc_per_attr = report.attr_denominator == 0
                            ? 1.0
                            : static_cast<double>(attr_correct) /
                                  static_cast<double>(report.attr_denominator);
  return report;
}

MetricsReport score(const GroundTruth& gt, const Evaluation& predicted,
                    const Table& source, const Table& target) {
  std::map<std::string, std::optional<std::string>> matches;
  for (std::size_t i = 0; i < predicted.matching.sources.size(); ++i) {
    matches[predicted.matching.sources[i]] = predicted.matching.targets[i];
  }
  return score(gt, predicted.op, matches, source, target);
}

GeneratedInstance generate_instance(const Table& tidy,
                                    const std::vector<std::string>& key_attrs,
                                    const std::string& spread_attr,
                                    const std::string& value_attr,
                                    std::uint64_t seed) {
  require_attribute(tidy, spread_attr, "generate_instance spread_attr");
  require_attribute(tidy, value_attr, "generate_instance value_attr");
  std::vector<std::string> expected_keys;
  for (const auto& attr : tidy.attributes) {
    if (attr != spread_attr && attr != value_attr) expected_keys.push_back(attr);
  }
  std::vector<std::string> given = key_attrs;
  std::sort(given.begin(), given.end());
  std::vector<std::string> expected = expected_keys;
  std::sort(expected.begin(), expected.end());
  if (given != expected) {
    throw TableError(
        "key_attrs must list exactly the attributes outside spread/value");
  }

  GeneratedInstance instance;
  instance.source = apply_pivot(tidy, spread_attr, value_attr);
  instance.source.name = "source";

  instance.target = tidy;
  instance.target.name = "target";
  std::mt19937_64 rng(seed);
  std::shuffle(instance.target.records.begin(), instance.target.records.end(),
               rng);

  std::vector<std::string> spread_columns;
  for (const auto& attr : instance.source.attributes) {
    if (std::find(expected_keys.begin(), expected_keys.end(), attr) ==
        expected_keys.end()) {
      spread_columns.push_back(attr);
    }
  }
  instance.ground_truth.unpivot_set = canonical_set(std::move(spread_columns));
  instance.ground_truth.generated_targets = {spread_attr, value_attr};
  for (const auto& attr : expected_keys) {
    instance.ground_truth.retained_matching[attr] = attr;
  }
  return instance;
}

Table anonymize(const Table& t, const std::vector<std::string>& attrs,
                std::uint64_t seed) {
  std::vector<std::size_t> column_indices;
  for (const auto& attr : attrs) {
    require_attribute(t, attr, "anonymize");
    column_indices.push_back(*t.attribute_index(attr));
  }
  Table out = t;
  const std::uint64_t basis = detail::fnv1a64("anonymize") ^ seed;
  for (auto column : column_indices) {
    for (auto& row : out.records) {
      Cell& cell = row[column];
      if (cell.kind() != Cell::Kind::Text) continue;
      std::uint64_t token = detail::fnv1a64(cell.as_text(), basis);
      char buffer[32];
      std::snprintf(buffer, sizeof buffer, "anon_%016llx",
                    static_cast<unsigned long long>(token));
      cell = Cell::text(buffer);
    }
  }
  return out;
}

void write_instance_bundle(const std::filesystem::path& dir,
                           const GeneratedInstance& instance) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "source.csv", write_csv(instance.source));
  write_text_file(dir / "target.csv", write_csv(instance.target));
  write_text_file(dir / "source.desc.json",
                  descriptions_to_json(instance.source));
  write_text_file(dir / "target.desc.json",
                  descriptions_to_json(instance.target));
  write_text_file(dir / "ground_truth.json",
                  ground_truth_to_json(instance.ground_truth));
}

}  // namespace flatmatch
