#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ats/tensor.hpp"

namespace ats {

// Aligned (id, score) lists; the unit every ranking computation consumes.
struct ScoreList {
  std::vector<std::string> ids;
  std::vector<double> values;

  size_t size() const { return values.size(); }
  void validate(const char* what) const;
};

// Ordered id -> score mapping; written/read as a two-column TSV with header
// "id<TAB>score", rows in id-sorted order.
struct PredictionSet {
  std::map<std::string, double> scores;

  ScoreList to_score_list() const;
  static PredictionSet from_score_list(const ScoreList& s);
};

PredictionSet read_prediction_file(const std::string& path);
void write_prediction_file(const std::string& path, const PredictionSet& preds);

// Ascending average ranks 1..n; tied values share the mean of their
// positions, so the ranks always sum to n(n+1)/2.
std::vector<double> rank_transform(const std::vector<double>& values);

// Spearman rank correlation: Pearson correlation of the two average-tie rank
// vectors, lists aligned by id. Throws DegenerateError when either list is
// constant.
double srcc(const ScoreList& a, const ScoreList& b);

// Rank-averaging ensemble: per id, the mean of each member's average-tie
// rank, affinely rescaled so the smallest mean rank maps to out_lo and the
// largest to out_hi (all-equal means collapse to the midpoint).
PredictionSet rank_average_ensemble(const std::vector<PredictionSet>& members,
                                    double out_lo, double out_hi);

// Deterministic text embedder for caption evaluation: byte-trigram counts
// projected through per-trigram unit-normal vectors, L2-normalized.
// Draw order per trigram g: stream (seed, "trigram.<g>") -> dim normals.
class TrigramEmbedder {
 public:
  TrigramEmbedder(uint64_t seed, int dim) : seed_(seed), dim_(dim) {}
  std::vector<double> embed(const std::string& text) const;
  int dim() const { return dim_; }

 private:
  uint64_t seed_;
  int dim_;
};

// Cosine similarity of embedded generated/reference captions; empty
// generated caption scores 0 by convention.
double caption_similarity_score(const std::vector<int>& generated_tokens,
                                const std::vector<int>& reference_tokens,
                                const TrigramEmbedder& embedder);

}  // namespace ats
