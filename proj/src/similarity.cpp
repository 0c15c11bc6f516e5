#include "flatmatch/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "flatmatch/errors.hpp"

namespace flatmatch {

namespace {

// Decodes UTF-8 to codepoints; each invalid byte is kept as its own
// codepoint so comparison stays total and deterministic.
std::u32string decode_utf8(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    unsigned char b0 = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      out.push_back(b0);
      ++i;
      continue;
    }
    if (i + len > n) {
      out.push_back(b0);
      ++i;
      continue;
    }
    bool valid = true;
    for (std::size_t k = 1; k < len; ++k) {
      unsigned char bk = static_cast<unsigned char>(text[i + k]);
      if ((bk & 0xC0) != 0x80) {
        valid = false;
        break;
      }
      cp = (cp << 6) | (bk & 0x3F);
    }
    if (!valid) {
      out.push_back(b0);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

// ASCII plus Latin-1 uppercase ranges; input is assumed NFC-composed.
char32_t fold_codepoint(char32_t cp) {
  if (cp >= U'A' && cp <= U'Z') return cp + 32;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
  return cp;
}

std::u32string fold(std::string_view text) {
  std::u32string cps = decode_utf8(text);
  for (char32_t& cp : cps) cp = fold_codepoint(cp);
  return cps;
}

std::size_t levenshtein(const std::u32string& a, const std::u32string& b) {
  const std::size_t m = a.size();
  const std::size_t n = b.size();
  if (m == 0) return n;
  if (n == 0) return m;
  std::vector<std::size_t> prev(n + 1);
  std::vector<std::size_t> curr(n + 1);
  for (std::size_t j = 0; j <= n; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= m; ++i) {
    curr[0] = i;
    for (std::size_t j = 1; j <= n; ++j) {
      std::size_t cost = (a[i - 1] == b[j - 1]) ? 0 : 1;
      curr[j] = std::min({prev[j] + 1, curr[j - 1] + 1, prev[j - 1] + cost});
    }
    std::swap(prev, curr);
  }
  return prev[n];
}

struct ColumnHistogram {
  bool integer_valued = false;          // all non-Missing cells are Integer
  std::map<std::int64_t, double> counts;  // value -> occurrence count
  double total = 0.0;
};

ColumnHistogram column_histogram(const std::vector<Cell>& cells) {
  ColumnHistogram h;
  h.integer_valued = true;
  for (const auto& cell : cells) {
    if (cell.is_missing()) continue;
    if (!cell.is_integer()) {
      h.integer_valued = false;
      h.counts.clear();
      h.total = 0.0;
      return h;
    }
    h.counts[cell.as_integer()] += 1.0;
    h.total += 1.0;
  }
  if (h.total == 0.0) h.integer_valued = false;
  return h;
}

double jensen_shannon_base2(const ColumnHistogram& a,
                            const ColumnHistogram& b) {
  double jsd = 0.0;
  auto ita = a.counts.begin();
  auto itb = b.counts.begin();
  const double log2e = 1.0 / std::log(2.0);
  auto accumulate = [&](double p, double q) {
    double m = 0.5 * (p + q);
    if (p > 0.0) jsd += 0.5 * p * std::log(p / m) * log2e;
    if (q > 0.0) jsd += 0.5 * q * std::log(q / m) * log2e;
  };
  while (ita != a.counts.end() || itb != b.counts.end()) {
    if (itb == b.counts.end() ||
        (ita != a.counts.end() && ita->first < itb->first)) {
      accumulate(ita->second / a.total, 0.0);
      ++ita;
    } else if (ita == a.counts.end() || itb->first < ita->first) {
      accumulate(0.0, itb->second / b.total);
      ++itb;
    } else {
      accumulate(ita->second / a.total, itb->second / b.total);
      ++ita;
      ++itb;
    }
  }
  return jsd;
}

std::optional<double> distributional_from_histograms(
    const ColumnHistogram& a, const ColumnHistogram& b) {
  if (!a.integer_valued || !b.integer_valued) return std::nullopt;
  double jsd = jensen_shannon_base2(a, b);
  return std::clamp(1.0 - jsd, 0.0, 1.0);
}

}  // namespace

std::size_t edit_distance(std::string_view a, std::string_view b) {
  return levenshtein(decode_utf8(a), decode_utf8(b));
}

double lexical_similarity(std::string_view a, std::string_view b) {
  std::u32string fa = fold(a);
  std::u32string fb = fold(b);
  std::size_t longest = std::max(fa.size(), fb.size());
  if (longest == 0) return 1.0;
  std::size_t dist = levenshtein(fa, fb);
  return 1.0 - static_cast<double>(dist) / static_cast<double>(longest);
}

double cosine_clamped(const std::vector<double>& a,
                      const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw ProviderError("embedding dimension mismatch: " +
                        std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  if (a == b) return 1.0;  // exact, where the quotient may round below 1
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 1.0);
}

double semantic_similarity(std::string_view a, std::string_view b,
                           EmbeddingProvider& embedder) {
  auto vectors = embedder.embed({std::string(a), std::string(b)});
  if (vectors.size() != 2) {
    throw ProviderError("embedding provider returned " +
                        std::to_string(vectors.size()) +
                        " vectors for 2 texts");
  }
  return cosine_clamped(vectors[0], vectors[1]);
}

std::optional<double> distributional_similarity(const std::vector<Cell>& va,
                                                const std::vector<Cell>& vb) {
  return distributional_from_histograms(column_histogram(va),
                                        column_histogram(vb));
}

double combine(double lexical, double semantic,
               std::optional<double> distributional) {
  double sum = lexical + semantic;
  double count = 2.0;
  if (distributional.has_value()) {
    sum += *distributional;
    count += 1.0;
  }
  return sum / count;
}

std::string embedding_text(const std::string& name,
                           const std::string& description) {
  if (description.empty()) return name;
  return name + ": " + description;
}

SimilarityMatrix build_matrix(const Table& left, const Table& right,
                              EmbeddingProvider& embedder) {
  SimilarityMatrix matrix;
  matrix.source_attrs = left.attributes;
  matrix.target_attrs = right.attributes;

  std::vector<std::string> left_texts;
  left_texts.reserve(left.attributes.size());
  for (const auto& attr : left.attributes) {
    left_texts.push_back(embedding_text(attr, left.description_for(attr)));
  }
  std::vector<std::string> right_texts;
  right_texts.reserve(right.attributes.size());
  for (const auto& attr : right.attributes) {
    right_texts.push_back(embedding_text(attr, right.description_for(attr)));
  }
  auto left_vectors = embedder.embed(left_texts);
  auto right_vectors = embedder.embed(right_texts);
  if (left_vectors.size() != left_texts.size() ||
      right_vectors.size() != right_texts.size()) {
    throw ProviderError("embedding provider returned the wrong vector count");
  }

  auto histograms_for = [](const Table& t) {
    std::vector<ColumnHistogram> hs(t.attributes.size());
    std::vector<Cell> column;
    for (std::size_t i = 0; i < t.attributes.size(); ++i) {
      column.clear();
      column.reserve(t.records.size());
      for (const auto& record : t.records) column.push_back(record[i]);
      hs[i] = column_histogram(column);
    }
    return hs;
  };
  auto left_hist = histograms_for(left);
  auto right_hist = histograms_for(right);

  matrix.scores.resize(left.attributes.size());
  for (std::size_t i = 0; i < left.attributes.size(); ++i) {
    matrix.scores[i].resize(right.attributes.size());
    for (std::size_t j = 0; j < right.attributes.size(); ++j) {
      SimilarityBreakdown& cell = matrix.scores[i][j];
      cell.lexical =
          lexical_similarity(left.attributes[i], right.attributes[j]);
      cell.semantic = cosine_clamped(left_vectors[i], right_vectors[j]);
      cell.distributional =
          distributional_from_histograms(left_hist[i], right_hist[j]);
      cell.combined = combine(cell.lexical, cell.semantic, cell.distributional);
    }
  }
  return matrix;
}

}  // namespace flatmatch
