#include "flatmatch/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "flatmatch/errors.hpp"

namespace flatmatch {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Shortest-augmenting-path solver for the min-cost assignment of every row
// to a distinct column; requires rows <= cols. Returns row -> col and the
// final potentials, which satisfy u[i] + v[j] <= cost[i][j] with equality on
// matched pairs, v <= 0, and v == 0 on unmatched columns.
std::vector<int> lap_min(const std::vector<std::vector<double>>& cost,
                         std::vector<double>& u, std::vector<double>& v) {
  const int r = static_cast<int>(cost.size());
  const int c = static_cast<int>(cost[0].size());
  u.assign(r + 1, 0.0);
  v.assign(c + 1, 0.0);
  std::vector<int> p(c + 1, 0);
  std::vector<int> way(c + 1, 0);
  for (int i = 1; i <= r; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(c + 1, kInf);
    std::vector<char> used(c + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= c; ++j) {
        if (used[j]) continue;
        double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= c; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(r, -1);
  for (int j = 1; j <= c; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

struct TightGraph {
  int m = 0;  // sources
  int n = 0;  // targets
  std::vector<std::vector<int>> targets_of;  // tight targets per source, asc
  std::vector<std::vector<int>> sources_of;  // tight sources per target, asc
  std::vector<char> required_source;
  std::vector<char> required_target;
};

bool kuhn_try(int left, const std::vector<std::vector<int>>& adj,
              std::vector<int>& match_right, std::vector<char>& visited) {
  for (int right : adj[left]) {
    if (visited[right]) continue;
    visited[right] = 1;
    if (match_right[right] < 0 ||
        kuhn_try(match_right[right], adj, match_right, visited)) {
      match_right[right] = left;
      return true;
    }
  }
  return false;
}

// Can every required-and-unused source be matched to some unused target?
bool can_cover_sources(const TightGraph& g, const std::vector<char>& used_s,
                       const std::vector<char>& used_t) {
  std::vector<int> lefts;
  for (int s = 0; s < g.m; ++s) {
    if (g.required_source[s] && !used_s[s]) lefts.push_back(s);
  }
  if (lefts.empty()) return true;
  std::vector<std::vector<int>> adj(lefts.size());
  for (std::size_t k = 0; k < lefts.size(); ++k) {
    for (int t : g.targets_of[lefts[k]]) {
      if (!used_t[t]) adj[k].push_back(t);
    }
  }
  std::vector<int> match_right(g.n, -1);
  for (std::size_t k = 0; k < lefts.size(); ++k) {
    std::vector<char> visited(g.n, 0);
    if (!kuhn_try(static_cast<int>(k), adj, match_right, visited)) return false;
  }
  return true;
}

bool can_cover_targets(const TightGraph& g, const std::vector<char>& used_s,
                       const std::vector<char>& used_t) {
  std::vector<int> lefts;
  for (int t = 0; t < g.n; ++t) {
    if (g.required_target[t] && !used_t[t]) lefts.push_back(t);
  }
  if (lefts.empty()) return true;
  std::vector<std::vector<int>> adj(lefts.size());
  for (std::size_t k = 0; k < lefts.size(); ++k) {
    for (int s : g.sources_of[lefts[k]]) {
      if (!used_s[s]) adj[k].push_back(s);
    }
  }
  std::vector<int> match_right(g.m, -1);
  for (std::size_t k = 0; k < lefts.size(); ++k) {
    std::vector<char> visited(g.m, 0);
    if (!kuhn_try(static_cast<int>(k), adj, match_right, visited)) return false;
  }
  return true;
}

// A partial fix extends to an optimal assignment iff the remaining tight
// graph can cover the remaining required sources and, separately, the
// remaining required targets (the two covers merge into one matching).
bool refinement_feasible(const TightGraph& g, const std::vector<char>& used_s,
                         const std::vector<char>& used_t) {
  return can_cover_sources(g, used_s, used_t) &&
         can_cover_targets(g, used_s, used_t);
}

// Among optimal assignments, pick the lexicographically smallest sequence of
// (source, target) pairs. `reference` is a known optimal assignment; an empty
// return signals a numeric inconsistency (caller falls back to reference).
std::vector<int> refine_lexicographic(const TightGraph& g,
                                      const std::vector<int>& reference) {
  std::vector<int> result(g.m, -1);
  std::vector<char> used_s(g.m, 0);
  std::vector<char> used_t(g.n, 0);
  bool fast = true;
  for (int s = 0; s < g.m; ++s) {
    int first_candidate = -1;
    for (int t : g.targets_of[s]) {
      if (!used_t[t]) {
        first_candidate = t;
        break;
      }
    }
    if (fast) {
      if (reference[s] >= 0 && reference[s] == first_candidate) {
        result[s] = first_candidate;
        used_s[s] = 1;
        used_t[first_candidate] = 1;
        continue;
      }
      if (reference[s] < 0 && first_candidate < 0) {
        used_s[s] = 1;
        continue;
      }
      fast = false;  // a smaller choice may exist; verify from here on
    }
    bool fixed = false;
    for (int t : g.targets_of[s]) {
      if (used_t[t]) continue;
      used_s[s] = 1;
      used_t[t] = 1;
      if (refinement_feasible(g, used_s, used_t)) {
        result[s] = t;
        fixed = true;
        break;
      }
      used_s[s] = 0;
      used_t[t] = 0;
    }
    if (!fixed) {
      if (g.required_source[s]) return {};
      used_s[s] = 1;
      if (!refinement_feasible(g, used_s, used_t)) return {};
    }
  }
  return result;
}

}  // namespace

std::optional<std::string> Matching::target_for(const std::string& source) const {
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (sources[i] == source) return targets[i];
  }
  return std::nullopt;
}

AssignmentResult max_weight_assignment(
    const std::vector<std::vector<double>>& weights) {
  const int m = static_cast<int>(weights.size());
  if (m == 0) throw AssignmentError("assignment matrix has no rows");
  const int n = static_cast<int>(weights[0].size());
  if (n == 0) throw AssignmentError("assignment matrix has no columns");
  double max_abs = 0.0;
  for (const auto& row : weights) {
    if (static_cast<int>(row.size()) != n) {
      throw AssignmentError("assignment matrix is ragged");
    }
    for (double w : row) {
      if (!std::isfinite(w)) {
        throw AssignmentError("assignment matrix has a non-finite weight");
      }
      max_abs = std::max(max_abs, std::fabs(w));
    }
  }

  const bool transposed = m > n;
  const int r = transposed ? n : m;
  const int c = transposed ? m : n;
  auto weight_at = [&](int row, int col) {
    return transposed ? weights[col][row] : weights[row][col];
  };

  // Maximization as minimization over non-negative costs.
  std::vector<std::vector<double>> cost(r, std::vector<double>(c));
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) cost[i][j] = max_abs - weight_at(i, j);
  }
  std::vector<double> u;
  std::vector<double> v;
  std::vector<int> row_to_col = lap_min(cost, u, v);

  // Reference optimum in source -> target orientation.
  std::vector<int> reference(m, -1);
  for (int i = 0; i < r; ++i) {
    if (transposed) {
      reference[row_to_col[i]] = i;
    } else {
      reference[i] = row_to_col[i];
    }
  }

  const double tol = 1e-9 * std::max(1.0, max_abs);
  TightGraph g;
  g.m = m;
  g.n = n;
  g.targets_of.resize(m);
  g.sources_of.resize(n);
  g.required_source.assign(m, 0);
  g.required_target.assign(n, 0);
  for (int s = 0; s < m; ++s) {
    for (int t = 0; t < n; ++t) {
      int row = transposed ? t : s;
      int col = transposed ? s : t;
      double reduced = cost[row][col] - u[row + 1] - v[col + 1];
      if (reduced <= tol) {
        g.targets_of[s].push_back(t);
        g.sources_of[t].push_back(s);
      }
    }
  }
  if (transposed) {
    for (int t = 0; t < n; ++t) g.required_target[t] = 1;
    for (int s = 0; s < m; ++s) g.required_source[s] = v[s + 1] < -tol;
  } else {
    for (int s = 0; s < m; ++s) g.required_source[s] = 1;
    for (int t = 0; t < n; ++t) g.required_target[t] = v[t + 1] < -tol;
  }

  std::vector<int> refined = refine_lexicographic(g, reference);
  auto total_of = [&](const std::vector<int>& assignment) {
    double total = 0.0;
    for (int s = 0; s < m; ++s) {
      if (assignment[s] >= 0) total += weights[s][assignment[s]];
    }
    return total;
  };
  double reference_total = total_of(reference);
  AssignmentResult result;
  if (!refined.empty() &&
      total_of(refined) >= reference_total - 1e-7 * std::max(1.0, max_abs)) {
    result.source_to_target = std::move(refined);
  } else {
    result.source_to_target = std::move(reference);
  }
  result.total_weight = total_of(result.source_to_target);
  return result;
}

Matching solve_assignment(const SimilarityMatrix& matrix) {
  if (matrix.source_attrs.empty() || matrix.target_attrs.empty()) {
    throw AssignmentError("similarity matrix is empty");
  }
  std::vector<std::vector<double>> weights(matrix.source_attrs.size());
  for (std::size_t i = 0; i < matrix.source_attrs.size(); ++i) {
    weights[i].resize(matrix.target_attrs.size());
    for (std::size_t j = 0; j < matrix.target_attrs.size(); ++j) {
      weights[i][j] = matrix.scores[i][j].combined;
    }
  }
  AssignmentResult assignment = max_weight_assignment(weights);

  Matching matching;
  matching.sources = matrix.source_attrs;
  matching.targets.resize(matrix.source_attrs.size());
  matching.pair_scores.resize(matrix.source_attrs.size(), 0.0);
  for (std::size_t i = 0; i < matrix.source_attrs.size(); ++i) {
    int t = assignment.source_to_target[i];
    if (t >= 0) {
      matching.targets[i] = matrix.target_attrs[t];
      matching.pair_scores[i] = weights[i][t];
    }
  }
  matching.total_weight = assignment.total_weight;
  matching.reward =
      assignment.total_weight / static_cast<double>(matrix.target_attrs.size());
  return matching;
}

}  // namespace flatmatch
