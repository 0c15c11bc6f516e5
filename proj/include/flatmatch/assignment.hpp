#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flatmatch/similarity.hpp"

namespace flatmatch {

// One-to-one schema matching: for each source attribute either a target
// attribute or nothing (Null). Exactly min(#sources, #targets) attributes
// are matched.
struct Matching {
  std::vector<std::string> sources;                 // unpivoted-table order
  std::vector<std::optional<std::string>> targets;  // aligned with sources
  std::vector<double> pair_scores;                  // 0.0 for Null pairs
  double total_weight = 0.0;
  double reward = 0.0;  // total_weight / #target attributes

  std::optional<std::string> target_for(const std::string& source) const;
};

struct AssignmentResult {
  std::vector<int> source_to_target;  // -1 = unmatched
  double total_weight = 0.0;
};

// Exact maximum-weight rectangular assignment with min(m, n) pairs, found by
// a Jonker-Volgenant-style shortest augmenting path solver. Ties between
// optimal assignments break deterministically toward the lexicographically
// smallest sequence of (source index, target index) pairs, resolved on the
// tight graph of the optimal duals. Throws AssignmentError on an empty or
// non-finite matrix. Worst-case cost of the tie resolution grows with the
// number of tied optima; tie-free matrices pay one solver run.
AssignmentResult max_weight_assignment(
    const std::vector<std::vector<double>>& weights);

// Assignment over the combined similarity scores. No score threshold is
// applied: low-similarity pairs stay matched rather than being dropped.
Matching solve_assignment(const SimilarityMatrix& matrix);

}  // namespace flatmatch
