#pragma once

#include <cstddef>
#include <mutex>
#include <string>
#include <unordered_map>

#include "flatmatch/assignment.hpp"
#include "flatmatch/embedding.hpp"
#include "flatmatch/table.hpp"

namespace flatmatch {

// The full outcome of scoring one unpivot candidate.
struct Evaluation {
  UnpivotOperator op;
  Matching matching;
  std::size_t unpivoted_attr_count = 0;
};

// Anything that can score an unpivot candidate against a target table.
class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual Evaluation evaluate(const Table& source, const Table& target,
                              const UnpivotOperator& op) = 0;
};

// Scores a candidate by unpivoting the source, building the similarity
// matrix against the target and solving the optimal assignment. Results are
// cached by (sorted unpivot set, var name, value name); the cache is safe to
// hit from concurrent search workers.
class SchemaMatcher final : public Evaluator {
 public:
  static constexpr std::size_t kDefaultDistributionRowCap = 10000;

  explicit SchemaMatcher(EmbeddingProvider& embedder,
                         std::size_t distribution_row_cap =
                             kDefaultDistributionRowCap)
      : embedder_(embedder), distribution_row_cap_(distribution_row_cap) {}

  Evaluation evaluate(const Table& source, const Table& target,
                      const UnpivotOperator& op) override;

  std::size_t cache_size() const;

 private:
  EmbeddingProvider& embedder_;
  std::size_t distribution_row_cap_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, Evaluation> cache_;
};

}  // namespace flatmatch
