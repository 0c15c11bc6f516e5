#include "flatmatch/matcher.hpp"

#include <utility>

#include "flatmatch/similarity.hpp"

namespace flatmatch {

namespace {

// Unit separator keeps names from colliding in the key.
std::string cache_key(const UnpivotOperator& op) {
  std::string key;
  for (const auto& attr : op.unpivot_set) {
    key += attr;
    key.push_back('\x1f');
  }
  key.push_back('\x1e');
  key += op.var_name;
  key.push_back('\x1f');
  key += op.value_name;
  return key;
}

}  // namespace

Evaluation SchemaMatcher::evaluate(const Table& source, const Table& target,
                                   const UnpivotOperator& op) {
  UnpivotOperator canonical =
      UnpivotOperator::make(op.unpivot_set, op.var_name, op.value_name);
  std::string key = cache_key(canonical);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }

  Table unpivoted = apply_unpivot(source, canonical);
  if (unpivoted.records.size() > distribution_row_cap_) {
    unpivoted.records.resize(distribution_row_cap_);
  }
  SimilarityMatrix matrix = build_matrix(unpivoted, target, embedder_);

  Evaluation evaluation;
  evaluation.op = std::move(canonical);
  evaluation.matching = solve_assignment(matrix);
  evaluation.unpivoted_attr_count = unpivoted.attributes.size();

  std::lock_guard<std::mutex> lock(mutex_);
  return cache_.try_emplace(std::move(key), std::move(evaluation))
      .first->second;
}

std::size_t SchemaMatcher::cache_size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return cache_.size();
}

}  // namespace flatmatch
