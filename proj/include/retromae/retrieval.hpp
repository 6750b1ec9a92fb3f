// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "retromae/model.hpp"
#include "retromae/text.hpp"

namespace retromae::retrieval {

enum class Similarity { kDot, kCosine };

Similarity similarity_from_string(const std::string& s);
double similarity(std::span<const float> a, std::span<const float> b, Similarity sim);

class EmbeddingStore {
 public:
  explicit EmbeddingStore(std::size_t dim) : dim_(dim) {}

  /// Throws on dimension mismatch, non-finite values, or a repeated id.
  void add(std::size_t id, std::vector<float> vec);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::size_t id(std::size_t i) const { return ids_[i]; }
  std::span<const float> vector(std::size_t i) const { return vectors_[i]; }

 private:
  std::size_t dim_;
  std::vector<std::size_t> ids_;
  std::vector<std::vector<float>> vectors_;
};

struct Hit {
  std::size_t id = 0;
  double score = 0.0;
};

/// Exact search: highest score first, ties by ascending id.
std::vector<Hit> topk_search(std::span<const float> query, const EmbeddingStore& store,
                             std::size_t k, Similarity sim);

struct Candidate {
  std::string doc;
  double score = 0.0;
};

/// Per-query ranked candidates plus graded relevance labels (> 0 means
/// relevant). Queries are those present in `ranked`.
struct RankingRun {
  std::map<std::string, std::vector<Candidate>> ranked;
  std::map<std::string, std::map<std::string, int>> labels;

  /// Scores must be non-increasing down each list with no repeated doc.
  void validate() const;
};

struct MetricValue {
  double value = 0.0;
  std::size_t queries = 0;   // averaged over
  std::size_t excluded = 0;  // queries without any relevant label
};

/// Queries without a relevant label are excluded from all three metrics.
MetricValue mrr_at_k(const RankingRun& run, std::size_t k);
MetricValue recall_at_k(const RankingRun& run, std::size_t k);
/// Gain 2^rel - 1, discount log2(rank + 1); ideal ranking from all labels.
MetricValue ndcg_at_k(const RankingRun& run, std::size_t k);

/// `query<TAB>doc<TAB>rank<TAB>score` lines. Errors name the line number.
std::map<std::string, std::vector<Candidate>> parse_run(const std::string& text);
/// `query<TAB>doc<TAB>relevance` lines.
std::map<std::string, std::map<std::string, int>> parse_labels(const std::string& text);
std::string format_run(const std::map<std::string, std::vector<Candidate>>& ranked);

/// Builds a run by searching every query vector against the store. Query ids
/// and doc ids are the decimal store ids.
RankingRun search_run(const EmbeddingStore& queries, const EmbeddingStore& docs, std::size_t depth,
                      Similarity sim);

/// MRR@k, Recall@k and NDCG@k for each k as `key = value` lines.
std::string metrics_report(const RankingRun& run, const std::vector<std::size_t>& ks);

/// Sentence embeddings (position-0 encoder state, no masking). Sentence i
/// gets id i. Results do not depend on batch_size.
EmbeddingStore embed_corpus(const model::ModelParams<float>& params, const text::Vocabulary& vocab,
                            const std::vector<std::string>& sentences, std::size_t batch_size = 32);

/// One vector per line, space separated, 9 significant digits (exact float
/// round trip).
std::string format_embeddings(const EmbeddingStore& store);
EmbeddingStore parse_embeddings(const std::string& text);

}  // namespace retromae::retrieval
