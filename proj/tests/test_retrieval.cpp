// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "retromae/gradcheck.hpp"
#include "retromae/retrieval.hpp"
#include "retromae/rng.hpp"

using namespace retromae;
using namespace retromae::retrieval;

namespace {

RankingRun single(std::vector<std::string> docs, std::map<std::string, int> labels) {
  RankingRun run;
  double score = 100.0;
  for (auto& d : docs) run.ranked["q"].push_back({d, score--});
  run.labels["q"] = std::move(labels);
  return run;
}

}  // namespace

TEST_CASE("MRR examples") {
  auto run = single({"a", "b", "c", "d"}, {{"c", 1}, {"d", 1}});
  CHECK(mrr_at_k(run, 10).value == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(mrr_at_k(run, 2).value == 0.0);
}

TEST_CASE("Recall examples") {
  auto run = single({"a", "b", "c"}, {{"a", 1}, {"c", 2}, {"x", 0}});
  CHECK(recall_at_k(run, 3).value == 1.0);
  CHECK(recall_at_k(run, 1).value == 0.5);
  CHECK(recall_at_k(run, 0).value == 0.0);
}

TEST_CASE("NDCG examples") {
  auto ideal = single({"a", "b", "c"}, {{"a", 3}, {"b", 2}, {"c", 1}});
  CHECK(ndcg_at_k(ideal, 3).value == doctest::Approx(1.0).epsilon(1e-15));
  auto second = single({"a", "b", "c"}, {{"b", 1}});
  CHECK(ndcg_at_k(second, 10).value == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-15));
  CHECK(ndcg_at_k(second, 10).value == doctest::Approx(0.6309).epsilon(1e-4));
}

TEST_CASE("queries without relevant labels are excluded") {
  RankingRun run = single({"a"}, {{"a", 1}});
  run.ranked["empty"].push_back({"a", 1.0});
  run.labels["empty"]["a"] = 0;
  auto m = mrr_at_k(run, 5);
  CHECK(m.value == 1.0);
  CHECK(m.queries == 1);
  CHECK(m.excluded == 1);
  CHECK(ndcg_at_k(run, 5).excluded == 1);
}

TEST_CASE("moving a relevant document up never lowers a metric") {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<std::string> docs;
    std::map<std::string, int> labels;
    for (int i = 0; i < 8; ++i) {
      docs.push_back("d" + std::to_string(i));
      labels[docs.back()] = static_cast<int>(rng.below(3));
    }
    labels["d0"] = std::max(labels["d0"], 1);
    rng.shuffle(docs);
    auto before = single(docs, labels);
    const auto pos = static_cast<std::size_t>(rng.below(7)) + 1;
    if (labels[docs[pos]] == 0) continue;
    std::swap(docs[pos], docs[pos - 1]);
    if (labels[docs[pos]] > labels[docs[pos - 1]]) continue;  // swapped with a better doc
    auto after = single(docs, labels);
    for (std::size_t k : {1, 3, 5, 10}) {
      CHECK(mrr_at_k(after, k).value >= mrr_at_k(before, k).value);
      CHECK(recall_at_k(after, k).value >= recall_at_k(before, k).value);
      CHECK(ndcg_at_k(after, k).value >= ndcg_at_k(before, k).value - 1e-15);
    }
  }
}

TEST_CASE("run and label parsing") {
  auto ranked = parse_run("q1\td1\t1\t0.9\nq1\td2\t2\t0.5\nq2\td3\t1\t3\n");
  CHECK(ranked.size() == 2);
  CHECK(ranked["q1"][1].doc == "d2");
  CHECK(parse_run(format_run(ranked)).at("q1")[0].score == 0.9);

  // out-of-order ranks are sorted
  CHECK(parse_run("q\tb\t2\t1\nq\ta\t1\t2\n").at("q")[0].doc == "a");

  auto err = [](const std::string& text) {
    try {
      parse_run(text);
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(err("q\td\t1\t0.5\nq\td2\tx\t0.1\n").find("line 2") != std::string::npos);
  CHECK(err("q\td\t1\n").find("line 1") != std::string::npos);
  CHECK(err("q\td\t1\t0.1\nq\te\t2\t0.5\n").find("line 2") != std::string::npos);
  CHECK(err("q\td\t1\t0.5\nq\td\t2\t0.1\n").find("line 2") != std::string::npos);

  auto labels = parse_labels("q1\td1\t1\nq1\td2\t0\n");
  CHECK(labels["q1"]["d1"] == 1);
  CHECK_THROWS_WITH_AS(parse_labels("q1\td1\t1\nbad\n"), doctest::Contains("line 2"),
                       std::invalid_argument);
}

TEST_CASE("embedding store validation") {
  EmbeddingStore s(3);
  s.add(0, {1, 2, 3});
  CHECK_THROWS(s.add(1, {1, 2}));
  CHECK_THROWS(s.add(0, {1, 2, 3}));
  CHECK_THROWS(s.add(2, {1, NAN, 3}));
  EmbeddingStore empty(3);
  std::vector<float> q{1, 0, 0};
  CHECK_THROWS(topk_search(q, empty, 1, Similarity::kDot));
  CHECK_THROWS(topk_search(q, s, 2, Similarity::kDot));
}

TEST_CASE("topk search") {
  EmbeddingStore s(2);
  s.add(5, {1, 0});
  s.add(2, {2, 0});
  s.add(9, {0, 1});
  s.add(1, {1, 0});
  std::vector<float> q{1, 0};
  auto dot = topk_search(q, s, 4, Similarity::kDot);
  CHECK(dot[0].id == 2);
  CHECK(dot[1].id == 1);  // tie with 5 broken by id
  CHECK(dot[2].id == 5);
  CHECK(dot[3].id == 9);
  auto cos = topk_search(q, s, 2, Similarity::kCosine);
  CHECK(cos[0].id == 1);
  CHECK(cos[0].score == 1.0);
  CHECK(similarity_from_string("cosine") == Similarity::kCosine);
  CHECK_THROWS(similarity_from_string("l2"));
}

TEST_CASE("embeddings text round trip is exact") {
  Rng rng(2);
  EmbeddingStore s(5);
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<float> v(5);
    for (auto& x : v) x = static_cast<float>(rng.normal() * 1e-3);
    s.add(i, v);
  }
  auto t = parse_embeddings(format_embeddings(s));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::equal(s.vector(i).begin(), s.vector(i).end(), t.vector(i).begin()));
  }
}

TEST_CASE("sentence embeddings from a model") {
  auto cfg = gradcheck::tiny_config(DecodeMode::kEnhanced);
  cfg.encoder.max_len = 16;
  std::vector<std::string> lines{"a b c", "b c d e", "a b c", "e", "d d d d d d"};
  auto vocab = text::Vocabulary::build(lines, 50);
  cfg.encoder.vocab_size = vocab.size();
  auto p = model::ModelParams<float>::init(cfg.encoder, cfg.decoder, 0.1, 3);
  auto all = embed_corpus(p, vocab, lines, 5);
  auto one_by_one = embed_corpus(p, vocab, lines, 1);
  auto pairs = embed_corpus(p, vocab, lines, 2);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    CHECK(std::equal(all.vector(i).begin(), all.vector(i).end(), one_by_one.vector(i).begin()));
    CHECK(std::equal(all.vector(i).begin(), all.vector(i).end(), pairs.vector(i).begin()));
  }
  CHECK(std::equal(all.vector(0).begin(), all.vector(0).end(), all.vector(2).begin()));
  CHECK(similarity(all.vector(1), all.vector(1), Similarity::kCosine) ==
        doctest::Approx(1.0).epsilon(1e-12));

  auto wrong = text::Vocabulary::build(std::vector<std::string>{"x"}, 10);
  CHECK_THROWS(embed_corpus(p, wrong, lines));
}

TEST_CASE("metrics report lines") {
  auto run = single({"a", "b"}, {{"a", 1}});
  auto text = metrics_report(run, {10, 100});
  CHECK(std::count(text.begin(), text.end(), '\n') == 6);
  CHECK(text.find("MRR@10 = 1.000000") != std::string::npos);
  CHECK(text.find("NDCG@100 = 1.000000") != std::string::npos);
}
