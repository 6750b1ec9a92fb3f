// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "retromae/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>

namespace retromae::retrieval {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto t = line.find('\t', pos);
    out.push_back(line.substr(pos, t == std::string::npos ? std::string::npos : t - pos));
    if (t == std::string::npos) break;
    pos = t + 1;
  }
  return out;
}

[[noreturn]] void bad_line(std::size_t lineno, const std::string& why) {
  throw std::invalid_argument("line " + std::to_string(lineno) + ": " + why);
}

long long to_int(const std::string& s, std::size_t lineno, const char* what) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    bad_line(lineno, std::string("invalid ") + what + " '" + s + "'");
  }
}

double to_real(const std::string& s, std::size_t lineno, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    bad_line(lineno, std::string("invalid ") + what + " '" + s + "'");
  }
}

int relevance(const RankingRun& run, const std::string& q, const std::string& d) {
  auto qi = run.labels.find(q);
  if (qi == run.labels.end()) return 0;
  auto di = qi->second.find(d);
  return di == qi->second.end() ? 0 : di->second;
}

std::size_t relevant_count(const RankingRun& run, const std::string& q) {
  auto qi = run.labels.find(q);
  if (qi == run.labels.end()) return 0;
  std::size_t n = 0;
  for (const auto& [doc, rel] : qi->second) n += rel > 0;
  return n;
}

template <typename PerQuery>
MetricValue average(const RankingRun& run, PerQuery&& per_query) {
  MetricValue m;
  double total = 0.0;
  for (const auto& [q, list] : run.ranked) {
    if (relevant_count(run, q) == 0) {
      ++m.excluded;
      continue;
    }
    total += per_query(q, list);
    ++m.queries;
  }
  m.value = m.queries ? total / static_cast<double>(m.queries) : 0.0;
  return m;
}

}  // namespace

Similarity similarity_from_string(const std::string& s) {
  if (s == "dot") return Similarity::kDot;
  if (s == "cosine") return Similarity::kCosine;
  throw std::invalid_argument("unknown similarity '" + s + "' (expected dot or cosine)");
}

double similarity(std::span<const float> a, std::span<const float> b, Similarity sim) {
  if (a.size() != b.size()) throw std::invalid_argument("similarity: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * double(b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  if (sim == Similarity::kDot) return dot;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

void EmbeddingStore::add(std::size_t id, std::vector<float> vec) {
  if (vec.size() != dim_) {
    throw std::invalid_argument("embedding of dimension " + std::to_string(vec.size()) +
                                " added to a store of dimension " + std::to_string(dim_));
  }
  for (float v : vec)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite embedding value");
  if (std::find(ids_.begin(), ids_.end(), id) != ids_.end()) {
    throw std::invalid_argument("duplicate embedding id " + std::to_string(id));
  }
  ids_.push_back(id);
  vectors_.push_back(std::move(vec));
}

std::vector<Hit> topk_search(std::span<const float> query, const EmbeddingStore& store,
                             std::size_t k, Similarity sim) {
  if (store.empty()) throw std::invalid_argument("topk_search: empty store");
  if (query.size() != store.dim()) throw std::invalid_argument("topk_search: dimension mismatch");
  if (k > store.size()) {
    throw std::invalid_argument("topk_search: k=" + std::to_string(k) + " exceeds store size " +
                                std::to_string(store.size()));
  }
  std::vector<Hit> hits(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    hits[i] = {store.id(i), similarity(query, store.vector(i), sim)};
  }
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(),
                    [](const Hit& a, const Hit& b) {
                      return a.score != b.score ? a.score > b.score : a.id < b.id;
                    });
  hits.resize(k);
  return hits;
}

void RankingRun::validate() const {
  for (const auto& [q, list] : ranked) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (!seen.insert(list[i].doc).second) {
        throw std::invalid_argument("query " + q + ": document " + list[i].doc + " ranked twice");
      }
      if (i > 0 && list[i].score > list[i - 1].score) {
        throw std::invalid_argument("query " + q + ": score increases at rank " +
                                    std::to_string(i + 1));
      }
    }
  }
}

MetricValue mrr_at_k(const RankingRun& run, std::size_t k) {
  return average(run, [&](const std::string& q, const std::vector<Candidate>& list) {
    const std::size_t n = std::min(k, list.size());
    for (std::size_t i = 0; i < n; ++i)
      if (relevance(run, q, list[i].doc) > 0) return 1.0 / static_cast<double>(i + 1);
    return 0.0;
  });
}

MetricValue recall_at_k(const RankingRun& run, std::size_t k) {
  return average(run, [&](const std::string& q, const std::vector<Candidate>& list) {
    const std::size_t n = std::min(k, list.size());
    std::size_t hit = 0;
    for (std::size_t i = 0; i < n; ++i) hit += relevance(run, q, list[i].doc) > 0;
    return static_cast<double>(hit) / static_cast<double>(relevant_count(run, q));
  });
}

MetricValue ndcg_at_k(const RankingRun& run, std::size_t k) {
  return average(run, [&](const std::string& q, const std::vector<Candidate>& list) {
    const std::size_t n = std::min(k, list.size());
    double dcg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const int rel = relevance(run, q, list[i].doc);
      if (rel > 0) dcg += (std::exp2(rel) - 1.0) / std::log2(static_cast<double>(i + 2));
    }
    std::vector<int> ideal;
    for (const auto& [doc, rel] : run.labels.at(q))
      if (rel > 0) ideal.push_back(rel);
    std::sort(ideal.rbegin(), ideal.rend());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) {
      idcg += (std::exp2(ideal[i]) - 1.0) / std::log2(static_cast<double>(i + 2));
    }
    return idcg > 0.0 ? dcg / idcg : 0.0;
  });
}

std::map<std::string, std::vector<Candidate>> parse_run(const std::string& text) {
  struct Row {
    long long rank;
    Candidate c;
    std::size_t lineno;
  };
  std::map<std::string, std::vector<Row>> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 4) bad_line(lineno, "expected query<TAB>doc<TAB>rank<TAB>score");
    const long long rank = to_int(f[2], lineno, "rank");
    if (rank < 1) bad_line(lineno, "rank must be >= 1");
    rows[f[0]].push_back({rank, {f[1], to_real(f[3], lineno, "score")}, lineno});
  }
  std::map<std::string, std::vector<Candidate>> out;
  for (auto& [q, list] : rows) {
    std::stable_sort(list.begin(), list.end(),
                     [](const Row& a, const Row& b) { return a.rank < b.rank; });
    std::set<std::string> docs;
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (i > 0 && list[i].rank == list[i - 1].rank) bad_line(list[i].lineno, "duplicate rank");
      if (!docs.insert(list[i].c.doc).second) bad_line(list[i].lineno, "duplicate document");
      if (i > 0 && list[i].c.score > list[i - 1].c.score) {
        bad_line(list[i].lineno, "score increases with rank");
      }
      out[q].push_back(list[i].c);
    }
  }
  return out;
}

std::map<std::string, std::map<std::string, int>> parse_labels(const std::string& text) {
  std::map<std::string, std::map<std::string, int>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 3) bad_line(lineno, "expected query<TAB>doc<TAB>relevance");
    const long long rel = to_int(f[2], lineno, "relevance");
    if (rel < 0 || rel > 30) bad_line(lineno, "relevance must lie in [0, 30]");
    if (!out[f[0]].emplace(f[1], static_cast<int>(rel)).second) {
      bad_line(lineno, "duplicate label");
    }
  }
  return out;
}

std::string format_run(const std::map<std::string, std::vector<Candidate>>& ranked) {
  std::string out;
  char buf[64];
  for (const auto& [q, list] : ranked) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      std::snprintf(buf, sizeof buf, "\t%zu\t%.17g\n", i + 1, list[i].score);
      out += q + "\t" + list[i].doc + buf;
    }
  }
  return out;
}

RankingRun search_run(const EmbeddingStore& queries, const EmbeddingStore& docs, std::size_t depth,
                      Similarity sim) {
  RankingRun run;
  const std::size_t k = std::min(depth, docs.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto& list = run.ranked[std::to_string(queries.id(i))];
    for (const auto& h : topk_search(queries.vector(i), docs, k, sim)) {
      list.push_back({std::to_string(h.id), h.score});
    }
  }
  return run;
}

std::string metrics_report(const RankingRun& run, const std::vector<std::size_t>& ks) {
  std::string out;
  char buf[96];
  for (std::size_t k : ks) {
    std::snprintf(buf, sizeof buf, "MRR@%zu = %.6f\n", k, mrr_at_k(run, k).value);
    out += buf;
    std::snprintf(buf, sizeof buf, "Recall@%zu = %.6f\n", k, recall_at_k(run, k).value);
    out += buf;
    std::snprintf(buf, sizeof buf, "NDCG@%zu = %.6f\n", k, ndcg_at_k(run, k).value);
    out += buf;
  }
  return out;
}

EmbeddingStore embed_corpus(const model::ModelParams<float>& params, const text::Vocabulary& vocab,
                            const std::vector<std::string>& sentences, std::size_t batch_size) {
  if (vocab.size() != params.encoder.vocab_size) {
    throw std::invalid_argument("vocabulary has " + std::to_string(vocab.size()) +
                                " tokens but the checkpoint expects " +
                                std::to_string(params.encoder.vocab_size));
  }
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  const auto store = [&] {
    std::vector<text::TokenSequence> s;
    for (const auto& line : sentences) s.push_back(text::encode_text(line, vocab, params.encoder.max_len));
    return s;
  }();
  auto& mutable_params = const_cast<model::ModelParams<float>&>(params);
  EmbeddingStore out(params.encoder.hidden_dim);
  for (std::size_t begin = 0; begin < store.size(); begin += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < std::min(store.size(), begin + batch_size); ++i) idx.push_back(i);
    const auto batch = text::make_batch(store, idx);
    const auto in = model::inference_inputs(batch);
    ad::Tape<float> tape;
    model::Graph<float> g(tape, mutable_params);
    const auto enc = model::encode(g, in.encoder_ids, in.pad, in.batch, in.length);
    const auto& h = enc.sentence.value();
    const std::size_t d = params.encoder.hidden_dim;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      out.add(idx[b], std::vector<float>(h.data().begin() + static_cast<std::ptrdiff_t>(b * d),
                                         h.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * d)));
    }
  }
  return out;
}

std::string format_embeddings(const EmbeddingStore& store) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto v = store.vector(i);
    for (std::size_t j = 0; j < v.size(); ++j) {
      std::snprintf(buf, sizeof buf, j ? " %.9g" : "%.9g", static_cast<double>(v[j]));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

EmbeddingStore parse_embeddings(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<float>> rows;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<float> v;
    std::string tok;
    while (ls >> tok) v.push_back(static_cast<float>(to_real(tok, lineno, "embedding value")));
    if (v.empty()) bad_line(lineno, "empty embedding");
    if (!rows.empty() && v.size() != rows.front().size()) bad_line(lineno, "dimension mismatch");
    rows.push_back(std::move(v));
  }
  EmbeddingStore store(rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) store.add(i, std::move(rows[i]));
  return store;
}

}  // namespace retromae::retrieval
