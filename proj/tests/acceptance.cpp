// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Pass criterion numbers (1-8) as arguments to
// run a subset.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "retromae/gradcheck.hpp"
#include "retromae/masking.hpp"
#include "retromae/model.hpp"
#include "retromae/retrieval.hpp"
#include "retromae/training.hpp"
#include "support.hpp"

using namespace retromae;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(RETROMAE_CLI) + " " + args).c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9)); }

// ---------------------------------------------------------------------------
// 1. Gradient suite

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  const auto enh = gradcheck::check_model(DecodeMode::kEnhanced, 1, 1);
  const auto basic = gradcheck::check_model(DecodeMode::kBasic, 1, 1);
  const double secs = seconds_since(t0);
  const bool pass = enh.max_rel_error() < 1e-4 && basic.max_rel_error() < 1e-4 && secs < 120.0;
  return {pass, fmt("enhanced max rel err %.2e over %zu values, basic %.2e over %zu, %.1fs",
                    enh.max_rel_error(), enh.checked(), basic.max_rel_error(), basic.checked(),
                    secs)};
}

// ---------------------------------------------------------------------------
// 2. Attention-mask properties

Verdict mask_suite() {
  const auto t0 = Clock::now();
  std::size_t violations = 0;
  for (std::uint64_t t = 0; t < 1000; ++t) {
    Rng draw(derive_seed(2024, {t}));
    const std::size_t L = 2 + draw.below(63);
    const double gamma = 0.01 + 0.98 * draw.uniform();
    const std::size_t npad = draw.below(L - 1);  // at least one real position after 0
    std::vector<std::size_t> pads;
    for (std::size_t p = L - npad; p < L; ++p) pads.push_back(p);
    const std::set<std::size_t> pad_set(pads.begin(), pads.end());
    const std::size_t maskable = L - 1 - npad;
    const std::size_t want = std::max<std::size_t>(1, round_half_up((1.0 - gamma) * double(maskable)));

    Rng r1(t), r2(t);
    const auto m = masking::build_attention_mask(L, gamma, pads, r1);
    if (!(m == masking::build_attention_mask(L, gamma, pads, r2))) ++violations;
    const auto add = m.additive<double>();
    for (std::size_t i = 0; i < L; ++i) {
      if (add.at(i, 0) != 0.0) ++violations;
      if (i >= 1 && add.at(i, i) != -INFINITY) ++violations;
      std::size_t context = 0;
      for (std::size_t j = 1; j < L; ++j) {
        if (pad_set.count(j) && add.at(i, j) != -INFINITY) ++violations;
        context += add.at(i, j) == 0.0;
      }
      // Real rows cannot use their own column, so at most maskable - 1 remain.
      const bool real_row = i >= 1 && !pad_set.count(i);
      const std::size_t available = real_row ? maskable - 1 : maskable;
      if (context != std::min(want, available)) ++violations;
    }
  }
  const double secs = seconds_since(t0);
  return {violations == 0 && secs < 30.0,
          fmt("1000 configurations, %zu violations, %.2fs", violations, secs)};
}

// ---------------------------------------------------------------------------
// 3. Signal coverage through the maskstats command

Verdict coverage_check() {
  const auto dir = testing::scratch_dir("acceptance-coverage");
  // Even content lengths make gamma_de * n an integer for gamma_de = 0.5.
  Rng rng(33);
  std::string corpus;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t words = 2 * (2 + rng.below(7));
    for (std::size_t w = 0; w < words; ++w) corpus += (w ? " w" : "w") + std::to_string(rng.below(300));
    corpus += "\n";
  }
  testing::write_file(dir / "corpus.txt", corpus);
  testing::write_file(dir / "cfg.conf", "gamma_de = 0.5\n");
  const int code = run_cli("maskstats --config " + (dir / "cfg.conf").string() + " --corpus " +
                           (dir / "corpus.txt").string() + " > " + (dir / "out.txt").string());
  if (code != 0) return {false, fmt("maskstats exited with %d", code)};

  std::map<std::string, std::map<std::string, std::string>> by_mode;
  std::istringstream in(testing::read_file(dir / "out.txt"));
  std::string line, mode;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    const auto key = line.substr(0, eq), value = line.substr(eq + 3);
    if (key == "mode") mode = value;
    by_mode[mode][key] = value;
  }
  auto num = [&](const char* m, const char* k) { return std::stod(by_mode[m][k]); };
  const double enh = num("enhanced", "coverage");
  const double basic_exact = num("basic", "target_tokens") / num("basic", "content_tokens");
  const double mlm = num("mlm15", "coverage");
  const bool pass = by_mode.size() == 3 && num("enhanced", "sentences") == 1000 && enh == 1.0 &&
                    basic_exact == 0.5 && std::abs(mlm - 0.15) <= 0.01;
  return {pass, fmt("enhanced %.6f, basic %.6f (gamma_de 0.5), mlm15 %.6f", enh, basic_exact, mlm)};
}

// ---------------------------------------------------------------------------
// 4. Bottleneck and self-exclusion

Verdict bottleneck_check() {
  auto cfg = gradcheck::tiny_config(DecodeMode::kEnhanced);
  cfg.encoder.max_len = 16;
  auto params = model::ModelParams<float>::init(cfg.encoder, cfg.decoder, 0.2, 4);
  Rng rng(5);
  std::size_t invariance_fail = 0, h_insensitive = 0, self_fail = 0, rows = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<text::TokenSequence> store;
    for (int b = 0; b < 3; ++b) {
      text::TokenSequence s{{text::kCls}};
      const std::size_t n = 3 + rng.below(12);
      for (std::size_t i = 0; i < n; ++i) s.ids.push_back(static_cast<text::TokenId>(5 + rng.below(45)));
      s.ids.push_back(text::kSep);
      store.push_back(s);
    }
    const std::vector<std::size_t> idx{0, 1, 2};
    auto in = model::prepare_inputs(text::make_batch(store, idx), DecodeMode::kEnhanced, 0.15, 0.5,
                                    100 + trial, 0);
    ad::Tape<float> enc_tape;
    model::Graph<float> eg(enc_tape, params);
    const auto h = model::encode(eg, in.encoder_ids, in.pad, in.batch, in.length).sentence.value();

    auto logits = [&](const model::StepInputs& x, const Tensor<float>& hv, std::size_t zero_row) {
      ad::Tape<float> tape;
      model::Graph<float> g(tape, params);
      auto tokens = model::token_embeddings(g, x.decoder_ids);
      if (zero_row != SIZE_MAX) {
        std::vector<std::uint8_t> use(x.rows(), 0);
        use[zero_row] = 1;
        tokens = ad::select_rows(tokens, tape.constant(Tensor<float>(tokens.value().shape())), use);
      }
      return model::decode_enhanced(g, tape.constant(hv), tokens, x).value();
    };
    auto row = [](const Tensor<float>& t, std::size_t r) {
      const std::size_t c = t.dim(1);
      return std::vector<float>(t.data().begin() + r * c, t.data().begin() + (r + 1) * c);
    };

    // (a) make one row of item 0 see only column 0
    const std::size_t b = 0, i = 1 + rng.below(store[0].length() - 1);
    auto narrow = in;
    for (std::size_t j = 1; j < in.length; ++j) narrow.attention[b].set_visible(i, j, false);
    const auto base = row(logits(narrow, h, SIZE_MAX), b * in.length + i);
    for (std::size_t j = 1; j < in.length; ++j) {
      if (j == i) continue;
      auto perturbed = narrow;
      perturbed.decoder_ids[b * in.length + j] =
          static_cast<text::TokenId>(5 + (perturbed.decoder_ids[b * in.length + j] + 7) % 45);
      if (row(logits(perturbed, h, SIZE_MAX), b * in.length + i) != base) ++invariance_fail;
    }
    auto h2 = h;
    for (std::size_t j = 0; j < h2.dim(1); ++j) h2.at(b, j) += 0.25f;
    if (row(logits(narrow, h2, SIZE_MAX), b * in.length + i) == base) ++h_insensitive;

    // (b) own embedding never reaches its own row
    const auto full = logits(in, h, SIZE_MAX);
    for (std::size_t bb = 0; bb < in.batch; ++bb) {
      for (std::size_t p = 1; p < store[bb].length(); ++p) {
        const std::size_t r = bb * in.length + p;
        ++rows;
        if (row(logits(in, h, r), r) != row(full, r)) ++self_fail;
      }
    }
  }
  const bool pass = invariance_fail == 0 && h_insensitive == 0 && self_fail == 0;
  return {pass, fmt("(a) %zu non-self perturbations changed a bottleneck row, %zu h changes had no "
                    "effect; (b) %zu of %zu rows changed when their own embedding was zeroed",
                    invariance_fail, h_insensitive, self_fail, rows)};
}

// ---------------------------------------------------------------------------
// 5/6. Training runs

struct TrainRun {
  training::TrainState state;
  std::vector<text::TokenSequence> store;
};

TrainRun start_run(const std::vector<std::string>& lines, DecodeMode mode, std::size_t dec_layers) {
  RunConfig cfg = RunConfig::desk();
  cfg.decoder.mode = mode;
  cfg.decoder.layers = dec_layers;
  cfg.train.gamma_en = 0.15;
  cfg.train.gamma_de = 0.5;
  const auto vocab = text::Vocabulary::build(lines, 512);
  cfg.encoder.vocab_size = vocab.size();
  TrainRun r{training::TrainState::fresh(cfg), training::encode_corpus(lines, vocab, cfg.encoder.max_len)};
  return r;
}

struct Progress {
  std::size_t steps = 0;
  double accuracy = 0.0;
  bool reached = false;
  bool finite = true;
  double first_window = 0.0, last_window = 0.0;
};

// Trains until evaluation accuracy reaches `threshold` (checked every
// `every` steps) or `max_steps` pass.
Progress train_until(TrainRun& run, double threshold, std::size_t max_steps, std::size_t every) {
  const auto& cfg = run.state.config;
  text::BatchIterator it(run.store, cfg.train.batch_size, cfg.train.seed);
  Progress p;
  std::vector<double> losses;
  while (run.state.step < max_steps) {
    const auto r = training::train_step(run.state, it.next());
    losses.push_back(r.loss);
    p.finite = p.finite && std::isfinite(r.loss);
    if (run.state.step % every == 0) {
      p.accuracy = training::evaluate_reconstruction(run.state.params, run.store, cfg.decoder.mode,
                                                     cfg.train.gamma_de, 7)
                       .accuracy();
      if (p.accuracy >= threshold) {
        p.reached = true;
        break;
      }
    }
  }
  p.steps = run.state.step;
  const std::size_t w = std::min<std::size_t>(50, losses.size());
  p.first_window = std::accumulate(losses.begin(), losses.begin() + w, 0.0) / double(w);
  p.last_window = std::accumulate(losses.end() - w, losses.end(), 0.0) / double(w);
  return p;
}

Verdict overfit_check() {
  const auto t0 = Clock::now();
  const auto lines = testing::synthetic_corpus(64, 7, 200, 4, 14);
  auto run = start_run(lines, DecodeMode::kEnhanced, 1);
  const auto p = train_until(run, 0.95, 2000, 50);
  const auto own = training::evaluate_reconstruction(run.state.params, run.store, DecodeMode::kEnhanced, 0.5, 11);
  const auto swapped =
      training::evaluate_reconstruction(run.state.params, run.store, DecodeMode::kEnhanced, 0.5, 11, true);
  const double drop = own.accuracy() - swapped.accuracy();
  const double secs = seconds_since(t0);
  const bool pass = p.reached && own.accuracy() >= 0.95 && drop >= 0.30 && secs < 600.0;
  return {pass, fmt("V=%zu, accuracy %.4f after %zu steps (fresh masks %.4f), swapped embeddings "
                    "%.4f (drop %.4f), %.1fs",
                    run.state.config.encoder.vocab_size, p.accuracy, p.steps, own.accuracy(),
                    swapped.accuracy(), drop, secs)};
}

Verdict ablation_check() {
  const auto t0 = Clock::now();
  const auto lines = testing::synthetic_corpus(512, 7, 200, 4, 14);
  const double threshold = 0.10;
  const std::size_t cap = 2000;
  auto enh = start_run(lines, DecodeMode::kEnhanced, 1);
  const auto pe = train_until(enh, threshold, cap, 100);
  auto basic = start_run(lines, DecodeMode::kBasic, 1);
  const auto pb = train_until(basic, threshold, cap, 100);
  auto two = start_run(lines, DecodeMode::kBasic, 2);
  const auto p2 = train_until(two, 2.0, 400, 400);
  auto one = start_run(lines, DecodeMode::kBasic, 1);
  const auto p1 = train_until(one, 2.0, 400, 400);

  const bool faster = pe.reached && (!pb.reached || pe.steps < pb.steps);
  const bool stable = p1.finite && p2.finite && p1.last_window < p1.first_window &&
                      p2.last_window < p2.first_window;
  return {faster && stable,
          fmt("accuracy %.2f reached by enhanced at step %zu, basic %s %zu; 400-step loss "
              "H_de=1 %.3f->%.3f, H_de=2 %.3f->%.3f; %.1fs",
              threshold, pe.steps, pb.reached ? "at step" : "not within", pb.steps, p1.first_window,
              p1.last_window, p2.first_window, p2.last_window, seconds_since(t0))};
}

// ---------------------------------------------------------------------------
// 7. Metric oracles

// Direct transcriptions of the metric definitions over a relevance vector in
// rank order.
struct OracleQuery {
  std::vector<int> ranked_rel;   // relevance of each ranked doc
  std::vector<int> all_rel;      // every labelled relevance for the query
};

double oracle_mrr(const OracleQuery& q, std::size_t k) {
  for (std::size_t r = 1; r <= std::min(k, q.ranked_rel.size()); ++r)
    if (q.ranked_rel[r - 1] > 0) return 1.0 / double(r);
  return 0.0;
}

double oracle_recall(const OracleQuery& q, std::size_t k) {
  double total = 0, hit = 0;
  for (int v : q.all_rel) total += v > 0;
  for (std::size_t r = 0; r < std::min(k, q.ranked_rel.size()); ++r) hit += q.ranked_rel[r] > 0;
  return hit / total;
}

double oracle_ndcg(const OracleQuery& q, std::size_t k) {
  auto dcg = [k](std::vector<int> rel) {
    double s = 0;
    for (std::size_t r = 1; r <= std::min(k, rel.size()); ++r)
      s += (std::pow(2.0, rel[r - 1]) - 1.0) / std::log2(double(r) + 1.0);
    return s;
  };
  auto ideal = q.all_rel;
  std::sort(ideal.begin(), ideal.end(), std::greater<int>());
  const double best = dcg(ideal);
  return best == 0 ? 0 : dcg(q.ranked_rel) / best;
}

Verdict metric_oracles() {
  double worst = 0.0;
  std::size_t runs = 0;
  Rng rng(77);
  for (int t = 0; t < 100; ++t) {
    retrieval::RankingRun run;
    std::vector<OracleQuery> oracle;
    const std::size_t nq = 1 + rng.below(20);
    for (std::size_t q = 0; q < nq; ++q) {
      const std::string qid = "q" + std::to_string(q);
      const std::size_t ndocs = 1 + rng.below(40);
      std::vector<std::string> docs;
      for (std::size_t d = 0; d < ndocs + 10; ++d) docs.push_back("d" + std::to_string(d));
      rng.shuffle(docs);
      OracleQuery oq;
      for (const auto& d : docs) {
        const int rel = rng.uniform() < 0.3 ? static_cast<int>(1 + rng.below(3)) : 0;
        if (rel > 0 || rng.uniform() < 0.5) {
          run.labels[qid][d] = rel;
          oq.all_rel.push_back(rel);
        }
      }
      double score = 10.0;
      for (std::size_t r = 0; r < ndocs; ++r) {
        score -= rng.uniform() < 0.2 ? 0.0 : rng.uniform();  // some ties
        run.ranked[qid].push_back({docs[r], score});
        auto it = run.labels[qid].find(docs[r]);
        oq.ranked_rel.push_back(it == run.labels[qid].end() ? 0 : it->second);
      }
      oracle.push_back(oq);
    }
    for (std::size_t k : {0, 1, 3, 10, 100}) {
      double m = 0, r = 0, n = 0;
      std::size_t used = 0;
      for (const auto& oq : oracle) {
        if (std::none_of(oq.all_rel.begin(), oq.all_rel.end(), [](int v) { return v > 0; })) continue;
        m += oracle_mrr(oq, k);
        r += oracle_recall(oq, k);
        n += oracle_ndcg(oq, k);
        ++used;
      }
      if (used) {
        m /= double(used);
        r /= double(used);
        n /= double(used);
      }
      worst = std::max({worst, std::abs(m - retrieval::mrr_at_k(run, k).value),
                        std::abs(r - retrieval::recall_at_k(run, k).value),
                        std::abs(n - retrieval::ndcg_at_k(run, k).value)});
    }
    ++runs;
  }

  std::size_t topk_mismatch = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t dim = 1 + rng.below(16), n = 1 + rng.below(60);
    retrieval::EmbeddingStore store(dim);
    std::vector<std::vector<float>> vecs;
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    rng.shuffle(ids);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<float> v(dim);
      if (i > 0 && rng.uniform() < 0.2) {
        v = vecs[rng.below(i)];  // duplicate for ties
      } else {
        for (auto& x : v) x = static_cast<float>(std::round(rng.normal() * 4.0) / 4.0);
      }
      vecs.push_back(v);
      store.add(ids[i], v);
    }
    std::vector<float> q(dim);
    for (auto& x : q) x = static_cast<float>(rng.normal());
    const auto sim = rng.uniform() < 0.5 ? retrieval::Similarity::kDot : retrieval::Similarity::kCosine;
    const std::size_t k = rng.below(n + 1);
    // full sort oracle
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0, nq = 0, nv = 0;
      for (std::size_t j = 0; j < dim; ++j) {
        dot += double(q[j]) * double(vecs[i][j]);
        nq += double(q[j]) * double(q[j]);
        nv += double(vecs[i][j]) * double(vecs[i][j]);
      }
      double s = dot;
      if (sim == retrieval::Similarity::kCosine) s = (nq == 0 || nv == 0) ? 0.0 : dot / (std::sqrt(nq) * std::sqrt(nv));
      all.emplace_back(-s, ids[i]);
    }
    std::sort(all.begin(), all.end());
    const auto got = retrieval::topk_search(q, store, k, sim);
    bool same = got.size() == k;
    for (std::size_t i = 0; same && i < k; ++i) same = got[i].id == all[i].second && got[i].score == -all[i].first;
    topk_mismatch += !same;
  }
  const bool pass = worst <= 1e-12 && topk_mismatch == 0;
  return {pass, fmt("max |metric - oracle| = %.3e over %zu runs, %zu/1000 top-k mismatches", worst,
                    runs, topk_mismatch)};
}

// ---------------------------------------------------------------------------
// 8. Determinism through the CLI

Verdict determinism_check() {
  const auto dir = testing::scratch_dir("acceptance-determinism");
  std::string corpus;
  for (const auto& l : testing::synthetic_corpus(64, 9, 200, 4, 14)) corpus += l + "\n";
  testing::write_file(dir / "corpus.txt", corpus);
  testing::write_file(dir / "run.conf", "max_steps = 40\ncheckpoint_every = 10\nlog_every = 5\n");
  for (const char* name : {"a", "b"}) {
    const int code = run_cli("pretrain --preset desk --config " + (dir / "run.conf").string() +
                             " --corpus " + (dir / "corpus.txt").string() + " --out " +
                             (dir / name).string() + " --seed 13 2>/dev/null");
    if (code != 0) return {false, fmt("pretrain exited with %d", code)};
  }
  const auto ca = testing::read_file(dir / "a" / "checkpoint.bin");
  const auto la = testing::read_file(dir / "a" / "loss.log");
  const bool same_ckpt = !ca.empty() && ca == testing::read_file(dir / "b" / "checkpoint.bin");
  const bool same_log = !la.empty() && la == testing::read_file(dir / "b" / "loss.log");
  return {same_ckpt && same_log, fmt("checkpoints %s (%zu bytes), loss logs %s",
                                     same_ckpt ? "identical" : "DIFFER", ca.size(),
                                     same_log ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient suite", gradient_suite},
      {"attention-mask properties", mask_suite},
      {"signal coverage", coverage_check},
      {"bottleneck and self-exclusion", bottleneck_check},
      {"overfit", overfit_check},
      {"ablation direction", ablation_check},
      {"metric oracles", metric_oracles},
      {"determinism", determinism_check},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %d %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
