#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flatmatch/matcher.hpp"
#include "flatmatch/table.hpp"

namespace flatmatch {

// The reference answer for one instance: which source attributes should be
// unpivoted, which target attributes the generated var/value columns stand
// for (stored by role since predictors choose their own names), and the
// matching for the retained source attributes (explicit null = correctly
// matched to nothing).
struct GroundTruth {
  std::vector<std::string> unpivot_set;  // sorted, unique
  // (var column target, value column target); absent when no columns are
  // generated.
  std::optional<std::pair<std::string, std::string>> generated_targets;
  std::map<std::string, std::optional<std::string>> retained_matching;
};

struct MetricsReport {
  double acc_e2e = 0.0;       // correct matches / ground-truth matches
  double acc_per_attr = 0.0;  // correctly operated attrs / all attrs
  std::size_t correct_set_size = 0;  // |gt set ∩ predicted set|
  std::size_t e2e_denominator = 0;
  std::size_t attr_denominator = 0;  // |source attrs| + |target attrs|
};

GroundTruth parse_ground_truth(const std::string& json_text);
std::string ground_truth_to_json(const GroundTruth& gt);

// Checks every referenced attribute exists on its side, the matching is
// injective on non-null targets, and generated targets only appear together
// with a nonempty unpivot set. Throws on violation.
void validate_ground_truth(const GroundTruth& gt, const Table& source,
                           const Table& target);

// Scores a predicted operator + matching against the ground truth.
//
// End-to-end accuracy runs over the predicted reshaped table's attributes
// that have a non-null ground-truth target: retained sources score by
// matching the reference target; the generated var/value columns score only
// when the predicted unpivot set equals the reference set exactly, and
// otherwise count as mismatches (when the reference defines their targets).
//
// Per-attribute accuracy counts, over |source attrs| + |target attrs|:
// reference-retained sources whose predicted target (explicit null included)
// equals the reference, target attributes hit by such a correct non-null
// match, and the intersection of the two unpivot sets. A source attribute
// absent from predicted_matches is never correct.
MetricsReport score(
    const GroundTruth& gt, const UnpivotOperator& op,
    const std::map<std::string, std::optional<std::string>>& predicted_matches,
    const Table& source, const Table& target);

MetricsReport score(const GroundTruth& gt, const Evaluation& predicted,
                    const Table& source, const Table& target);

// A full synthetic instance: the pivoted source, the standard target, and
// the ground truth tying them together.
struct GeneratedInstance {
  Table source;
  Table target;
  GroundTruth ground_truth;
};

// Builds an instance from a tidy table by pivoting spread_attr/value_attr
// into columns. key_attrs must list exactly the remaining attributes. The
// target is the tidy table with rows shuffled by the seed; the ground truth
// is the identity matching on the key attributes plus the spread columns as
// the unpivot set.
GeneratedInstance generate_instance(const Table& tidy,
                                    const std::vector<std::string>& key_attrs,
                                    const std::string& spread_attr,
                                    const std::string& value_attr,
                                    std::uint64_t seed);

// Replaces every distinct Text value in the named attributes with a
// deterministic keyed token; numeric and missing cells pass through.
Table anonymize(const Table& t, const std::vector<std::string>& attrs,
                std::uint64_t seed);

// Writes source.csv, target.csv, source.desc.json, target.desc.json and
// ground_truth.json into dir (created if needed).
void write_instance_bundle(const std::filesystem::path& dir,
                           const GeneratedInstance& instance);

}  // namespace flatmatch
