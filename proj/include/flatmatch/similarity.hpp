#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flatmatch/embedding.hpp"
#include "flatmatch/table.hpp"

namespace flatmatch {

struct SimilarityBreakdown {
  double lexical = 0.0;
  double semantic = 0.0;
  std::optional<double> distributional;
  double combined = 0.0;
};

struct SimilarityMatrix {
  std::vector<std::string> source_attrs;
  std::vector<std::string> target_attrs;
  std::vector<std::vector<SimilarityBreakdown>> scores;  // [source][target]
};

// Codepoint-level Levenshtein distance over the raw (case-sensitive) strings.
std::size_t edit_distance(std::string_view a, std::string_view b);

// 1 - edit_distance / max(codepoint lengths), compared case-insensitively.
// Two empty strings score 1.
double lexical_similarity(std::string_view a, std::string_view b);

// Cosine similarity clamped to [0, 1]; either vector all-zero scores 0.
double cosine_clamped(const std::vector<double>& a,
                      const std::vector<double>& b);

// Embeds both texts in one provider call and returns their clamped cosine.
double semantic_similarity(std::string_view a, std::string_view b,
                           EmbeddingProvider& embedder);

// 1 minus the base-2 Jensen-Shannon divergence between the empirical value
// histograms. Defined only when both columns are integer-valued: every
// non-Missing cell is an Integer and at least one such cell exists per side.
std::optional<double> distributional_similarity(const std::vector<Cell>& va,
                                                const std::vector<Cell>& vb);

// Arithmetic mean of the components that are present.
double combine(double lexical, double semantic,
               std::optional<double> distributional);

// Text submitted to the embedder for an attribute: "name" or
// "name: description" when a description exists.
std::string embedding_text(const std::string& name,
                           const std::string& description);

// Full pairwise similarity between two tables' attributes. Embeddings are
// batched: one provider call per table.
SimilarityMatrix build_matrix(const Table& left, const Table& right,
                              EmbeddingProvider& embedder);

}  // namespace flatmatch
