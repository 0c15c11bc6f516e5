#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flatmatch/gateway.hpp"
#include "flatmatch/matcher.hpp"
#include "flatmatch/table.hpp"

namespace flatmatch {

enum class NodeProvenance { Root, LlmRefined, RandomRadius1 };

// One node of the Monte-Carlo search tree over candidate unpivot sets.
struct SearchNode {
  std::vector<std::string> candidate_set;  // sorted, unique source attributes
  double q_value = 0.0;                    // estimated value, in [0,1]
  std::size_t visit_count = 0;
  std::optional<double> reward;  // raw matching reward, set at evaluation
  std::vector<std::unique_ptr<SearchNode>> children;  // in creation order
  SearchNode* parent = nullptr;
  NodeProvenance provenance = NodeProvenance::Root;
  std::optional<Evaluation> evaluation;
  std::string raw_reply;  // assistant text that produced this candidate
  std::size_t creation_index = 0;      // discovery order, root = 0
  std::size_t pending_expansions = 0;  // reserved but not yet attached
};

struct SearchConfig {
  double epsilon_random = 0.05;  // probability of a random-neighbor expansion
  double uct_constant = 2.0;
  double uct_epsilon = 1e-6;
  std::size_t max_children = 3;
  std::size_t iterations = 2;
  std::size_t workers = 5;
  std::uint64_t rng_seed = 0;
  std::size_t feedback_sample_rows = 5;
};

struct TreeStats {
  std::size_t node_count = 0;
  std::size_t max_depth = 0;  // root has depth 0
  std::size_t llm_call_count = 0;
  std::size_t random_expansion_count = 0;
};

struct SearchResult {
  Evaluation best;
  TreeStats stats;
  std::optional<std::string> warning;  // set when the run stopped early
};

// Q + C * sqrt(ln N_parent / (N_child + uct_epsilon)). The parent must have
// been visited at least once.
double uct_score(const SearchNode& parent, const SearchNode& child,
                 const SearchConfig& cfg);

// Descends from the root, at each node with max_children children (counting
// pending expansions) following the argmax UCT child, ties toward the
// earliest-created one. Returns the first node with spare child capacity, or
// nullptr when every reachable slot is reserved by a pending expansion.
SearchNode* select_node(SearchNode& root, const SearchConfig& cfg);

// Max-average update along the leaf's ancestor chain, bottom-up:
// Q_v <- (Q_v + max(R_v, max over children Q)) / 2, then one visit added to
// every node from the leaf to the root, leaf included. The leaf's own Q is
// left as set at creation.
void backpropagate(SearchNode& leaf);

// Every set reachable from the candidate by one modification: remove one
// member, add one non-member, or swap a member for a non-member. Each result
// is sorted; order is removals, then additions, then swaps, each walked in
// universe order (swaps: member-major).
std::vector<std::vector<std::string>> radius1_neighbors(
    const std::vector<std::string>& candidate,
    const std::vector<std::string>& universe);

// Full search: an initial gateway proposal forms the root, then
// cfg.iterations rounds of cfg.workers concurrent select/expand/evaluate/
// backpropagate passes. Each expansion asks the gateway for feedback and a
// refined set, or (with probability epsilon_random) draws an unseen radius-1
// neighbor instead; either way the new candidate is named, evaluated and
// attached. Returns the evaluation of the node with maximum reward (ties:
// smaller candidate set, then earlier discovery). iterations = 0 degenerates
// to the root proposal alone. Throws SearchError when no root can be built;
// later failures stop the run early and surface as result.warning.
SearchResult run_search(const Table& source, const Table& target,
                        const SearchConfig& cfg, Gateway& gateway,
                        Evaluator& evaluator);

}  // namespace flatmatch
