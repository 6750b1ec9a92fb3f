// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// retromae: pretrain | embed | eval | maskstats | gradcheck

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "retromae/checkpoint.hpp"
#include "retromae/config.hpp"
#include "retromae/gradcheck.hpp"
#include "retromae/masking.hpp"
#include "retromae/retrieval.hpp"
#include "retromae/text.hpp"
#include "retromae/training.hpp"

namespace fs = std::filesystem;
using namespace retromae;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kMissingInput = 2;

struct UsageError : std::runtime_error {
  int code;
  UsageError(const std::string& m, int c) : std::runtime_error(m), code(c) {}
};

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw UsageError(std::string(what) + " not found: " + p.string(), kMissingInput);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot read " + p.string(), kMissingInput);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << s;
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

// Lines as-is (blank lines kept so output lines match input lines).
std::vector<std::string> raw_lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

struct ConfigArgs {
  std::string config;
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
};

void add_config_flags(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.config, "key = value config file; keys not set keep the preset value");
  cmd->add_option("--preset", a.preset, "base configuration: desk or full")
      ->check(CLI::IsMember({"desk", "full"}))
      ->capture_default_str();
  cmd->add_option("--seed", a.seed, "override the config seed (RETROMAE_SEED also works)");
}

RunConfig resolve_config(const ConfigArgs& a) {
  RunConfig cfg = RunConfig::preset(a.preset);
  if (!a.config.empty()) {
    require_file(a.config, "config file");
    cfg = RunConfig::load(a.config, cfg);
  }
  if (const char* env = std::getenv("RETROMAE_SEED")) cfg.set("seed", env);
  if (a.seed) cfg.train.seed = *a.seed;
  cfg.validate();
  return cfg;
}

std::vector<std::size_t> parse_ks(const std::string& s) {
  std::vector<std::size_t> ks;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(part, &used);
      if (used != part.size() || v < 0) throw std::invalid_argument(part);
      ks.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError("--k: invalid cutoff '" + part + "'", kFailed);
    }
  }
  if (ks.empty()) throw UsageError("--k: no cutoffs given", kFailed);
  return ks;
}

// One directory per varied axis; the base config provides everything else.
std::vector<std::pair<std::string, RunConfig>> ablation_runs(const RunConfig& base) {
  std::vector<std::pair<std::string, RunConfig>> runs;
  RunConfig mode = base;
  mode.decoder.mode = DecodeMode::kBasic;
  runs.emplace_back("mode-basic", mode);
  RunConfig layers = base;
  layers.decoder.mode = DecodeMode::kBasic;
  layers.decoder.layers = 2;
  runs.emplace_back("decoder_layers-2", layers);
  RunConfig gde = base;
  gde.train.gamma_de = base.train.gamma_de < 0.7 ? 0.7 : 0.5;
  runs.emplace_back("gamma_de-" + std::to_string(gde.train.gamma_de).substr(0, 3), gde);
  RunConfig gen = base;
  gen.train.gamma_en = base.train.gamma_en < 0.3 ? 0.3 : 0.15;
  runs.emplace_back("gamma_en-" + std::to_string(gen.train.gamma_en).substr(0, 4), gen);
  return runs;
}

int cmd_pretrain(const ConfigArgs& ca, const std::string& corpus, const std::string& out, bool resume,
                 bool ablation) {
  require_file(corpus, "corpus");
  const RunConfig cfg = resolve_config(ca);
  const auto lines = text::read_lines(corpus);
  std::vector<std::pair<fs::path, RunConfig>> runs;
  if (ablation) {
    for (auto& [name, c] : ablation_runs(cfg)) runs.emplace_back(fs::path(out) / name, c);
  } else {
    runs.emplace_back(out, cfg);
  }
  for (const auto& [dir, c] : runs) {
    c.validate();
    training::RunOptions opts;
    opts.resume = resume;
    opts.on_log = [](const training::LogEntry& e) {
      std::cerr << training::format_log_line(e) << '\n';
    };
    std::cerr << "training into " << dir.string() << "\n";
    fs::create_directories(dir);
    write_file(dir / "config.txt", c.to_text());
    training::run_pretraining(c, lines, dir, opts);
  }
  return kOk;
}

fs::path checkpoint_file(const fs::path& p) {
  return fs::is_directory(p) ? p / "checkpoint.bin" : p;
}

int cmd_embed(const std::string& ckpt, const std::string& input, const std::string& output,
              std::size_t batch) {
  const fs::path file = checkpoint_file(ckpt);
  require_file(file, "checkpoint");
  require_file(input, "input");
  const auto state = checkpoint::load(file);
  const auto vocab = text::Vocabulary::load(file.parent_path() / state.vocab_file);
  const auto lines = raw_lines(input);
  const auto store = retrieval::embed_corpus(state.params, vocab, lines, batch);
  write_file(output, retrieval::format_embeddings(store));
  return kOk;
}

int cmd_eval(const std::string& labels, const std::string& run_file, const std::string& query_emb,
             const std::string& doc_emb, const std::string& metric, const std::string& ks_text) {
  const auto ks = parse_ks(ks_text);
  require_file(labels, "labels");
  retrieval::RankingRun run;
  run.labels = retrieval::parse_labels(slurp(labels));
  if (!run_file.empty()) {
    require_file(run_file, "run file");
    run.ranked = retrieval::parse_run(slurp(run_file));
  } else {
    if (query_emb.empty() || doc_emb.empty()) {
      throw UsageError("eval needs --run or both --query-emb and --doc-emb", kFailed);
    }
    require_file(query_emb, "query embeddings");
    require_file(doc_emb, "document embeddings");
    const auto q = retrieval::parse_embeddings(slurp(query_emb));
    const auto d = retrieval::parse_embeddings(slurp(doc_emb));
    if (!q.empty() && !d.empty() && q.dim() != d.dim()) {
      throw std::invalid_argument("query and document embeddings differ in dimension");
    }
    const std::size_t depth = *std::max_element(ks.begin(), ks.end());
    run = [&] {
      auto r = retrieval::search_run(q, d, depth, retrieval::similarity_from_string(metric));
      r.labels = run.labels;
      return r;
    }();
  }
  run.validate();
  const auto m = retrieval::mrr_at_k(run, ks.front());
  if (m.excluded > 0) {
    std::cerr << "warning: " << m.excluded << " quer" << (m.excluded == 1 ? "y has" : "ies have")
              << " no relevant label and " << (m.excluded == 1 ? "is" : "are") << " excluded\n";
  }
  std::cout << retrieval::metrics_report(run, ks);
  return kOk;
}

int cmd_maskstats(const ConfigArgs& ca, const std::string& corpus) {
  require_file(corpus, "corpus");
  const RunConfig cfg = resolve_config(ca);
  const auto lines = text::read_lines(corpus);
  const auto vocab = text::Vocabulary::build(lines, cfg.encoder.vocab_size);
  const auto store = training::encode_corpus(lines, vocab, cfg.encoder.max_len);
  std::vector<std::size_t> idx(store.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto batch = text::make_batch(store, idx);
  for (auto mode : {masking::CoverageMode::kMlm15, masking::CoverageMode::kBasic,
                    masking::CoverageMode::kEnhanced}) {
    const auto report = masking::signal_coverage_stats(mode, batch, cfg.train.gamma_de, cfg.train.seed);
    std::cout << masking::format_report(report) << "\n";
  }
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, double tolerance, bool verbose) {
  bool ok = true;
  auto show = [&](const std::string& title, const gradcheck::Report& r, double tol) {
    const bool pass = r.max_rel_error() < tol;
    ok = ok && pass;
    std::printf("%-22s max_rel_error = %.3e  (%zu values, %s)\n", title.c_str(), r.max_rel_error(),
                r.checked(), pass ? "ok" : "FAIL");
    if (verbose || !pass) std::fputs(r.format().c_str(), stdout);
  };
  show("ops", gradcheck::check_ops(seed), 1e-5);
  show("model enhanced", gradcheck::check_model(DecodeMode::kEnhanced, 1, seed), tolerance);
  show("model basic", gradcheck::check_model(DecodeMode::kBasic, 1, seed), tolerance);
  show("model basic H_de=2", gradcheck::check_model(DecodeMode::kBasic, 2, seed), tolerance);
  return ok ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked auto-encoding pre-training for retrieval encoders"};
  app.require_subcommand(1);

  ConfigArgs pre_cfg;
  std::string pre_corpus, pre_out;
  bool pre_resume = false, pre_ablation = false;
  auto* pretrain = app.add_subcommand("pretrain", "train an encoder/decoder pair on a text corpus");
  add_config_flags(pretrain, pre_cfg);
  pretrain->add_option("--corpus", pre_corpus, "one sentence per line")->required();
  pretrain->add_option("--out", pre_out, "output directory")->required();
  pretrain->add_flag("--resume", pre_resume, "continue from <out>/checkpoint.bin if present");
  pretrain->add_flag("--ablation", pre_ablation,
                     "train four variants (mode, decoder layers, gamma_de, gamma_en) under <out>/");

  std::string emb_ckpt, emb_in, emb_out;
  std::size_t emb_batch = 32;
  auto* embed = app.add_subcommand("embed", "write one sentence embedding per input line");
  embed->add_option("--checkpoint", emb_ckpt, "run directory or checkpoint file")->required();
  embed->add_option("--input", emb_in, "sentences, one per line")->required();
  embed->add_option("--output", emb_out, "vectors, one per line")->required();
  embed->add_option("--batch-size", emb_batch, "sentences per forward pass")->capture_default_str();

  std::string ev_labels, ev_run, ev_q, ev_d, ev_metric = "dot", ev_k = "10,100";
  auto* eval = app.add_subcommand("eval", "MRR@k, Recall@k and NDCG@k for a ranking");
  eval->add_option("--labels", ev_labels, "query<TAB>doc<TAB>relevance")->required();
  eval->add_option("--run", ev_run, "query<TAB>doc<TAB>rank<TAB>score");
  eval->add_option("--query-emb", ev_q, "query vectors (ids are line numbers from 0)");
  eval->add_option("--doc-emb", ev_d, "document vectors (ids are line numbers from 0)");
  eval->add_option("--metric", ev_metric, "similarity for embedding search: dot or cosine")
      ->check(CLI::IsMember({"dot", "cosine"}))
      ->capture_default_str();
  eval->add_option("--k", ev_k, "comma-separated cutoffs")->capture_default_str();

  ConfigArgs ms_cfg;
  std::string ms_corpus;
  auto* maskstats = app.add_subcommand("maskstats", "reconstruction-signal coverage per masking mode");
  add_config_flags(maskstats, ms_cfg);
  maskstats->add_option("--corpus", ms_corpus, "one sentence per line")->required();

  std::uint64_t gc_seed = 1;
  double gc_tol = 1e-4;
  bool gc_verbose = false;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks in double precision");
  grad->add_option("--seed", gc_seed, "seed for inputs and the tiny model")->capture_default_str();
  grad->add_option("--tolerance", gc_tol, "max relative error for the model checks")->capture_default_str();
  grad->add_flag("--verbose", gc_verbose, "per-parameter errors");

  std::string keys = "config keys:";
  for (const auto& k : config_keys()) keys += " " + k;
  app.footer(keys);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*pretrain) return cmd_pretrain(pre_cfg, pre_corpus, pre_out, pre_resume, pre_ablation);
    if (*embed) return cmd_embed(emb_ckpt, emb_in, emb_out, emb_batch);
    if (*eval) return cmd_eval(ev_labels, ev_run, ev_q, ev_d, ev_metric, ev_k);
    if (*maskstats) return cmd_maskstats(ms_cfg, ms_corpus);
    if (*grad) return cmd_gradcheck(gc_seed, gc_tol, gc_verbose);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kFailed;
}
