// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "retromae/training.hpp"

#include <cmath>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "retromae/checkpoint.hpp"

namespace retromae::training {

namespace fs = std::filesystem;

template <typename T>
void adamw_update(ad::Parameter<T>& p, Moments<T>& s, std::size_t t, const AdamWHyper& h) {
  if (p.grad.shape() != p.value.shape()) p.zero_grad();
  if (s.m.shape() != p.value.shape()) s.m = Tensor<T>(p.value.shape());
  if (s.v.shape() != p.value.shape()) s.v = Tensor<T>(p.value.shape());
  if (t == 0) throw std::invalid_argument("adamw_update: step count is 1-based");
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double g = p.grad[i];
    double w = p.value[i];
    w = w - h.lr * h.weight_decay * w;
    const double m = h.beta1 * static_cast<double>(s.m[i]) + (1.0 - h.beta1) * g;
    const double v = h.beta2 * static_cast<double>(s.v[i]) + (1.0 - h.beta2) * g * g;
    s.m[i] = static_cast<T>(m);
    s.v[i] = static_cast<T>(v);
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    w = w - h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
    p.value[i] = static_cast<T>(w);
  }
}

template void adamw_update(ad::Parameter<float>&, Moments<float>&, std::size_t, const AdamWHyper&);
template void adamw_update(ad::Parameter<double>&, Moments<double>&, std::size_t,
                           const AdamWHyper&);

bool decays(const Shape& shape) { return shape.size() >= 2; }

double learning_rate_at(const TrainConfig& cfg, std::size_t step) {
  if (cfg.warmup_steps == 0 || step >= cfg.warmup_steps) return cfg.learning_rate;
  return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
}

template <typename T>
double clip_grad_norm(ModelParams<T>& params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params.all())
    for (std::size_t i = 0; i < p->grad.size(); ++i) sq += double(p->grad[i]) * double(p->grad[i]);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto* p : params.all())
      for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= factor;
  }
  return norm;
}

template double clip_grad_norm(ModelParams<float>&, double);
template double clip_grad_norm(ModelParams<double>&, double);

TrainState TrainState::fresh(const RunConfig& resolved) {
  resolved.validate();
  TrainState s;
  s.config = resolved;
  s.params = ModelParams<float>::init(resolved.encoder, resolved.decoder, resolved.train.init_std,
                                      resolved.train.seed);
  for (auto* p : s.params.all()) {
    s.moments.push_back({Tensor<float>(p->value.shape()), Tensor<float>(p->value.shape())});
  }
  return s;
}

StepResult train_step(TrainState& state, const text::Batch& batch) {
  const auto& cfg = state.config;
  const auto in = model::prepare_inputs(batch, cfg.decoder.mode, cfg.train.gamma_en,
                                        cfg.train.gamma_de, cfg.train.seed, state.step);
  state.params.zero_grad();
  StepResult r;
  r.coverage = in.coverage();
  try {
    ad::Tape<float> tape;
    model::Graph<float> g(tape, state.params);
    auto out = model::forward_step(g, in, cfg.train.encoder_mlm_weight);
    r.loss = out.loss.value()[0];
    tape.backward(out.loss);
  } catch (const NumericError& e) {
    throw NumericError("training step " + std::to_string(state.step + 1) + ": " + e.what());
  }
  r.grad_norm = clip_grad_norm(state.params, cfg.train.clip_norm);
  if (!std::isfinite(r.grad_norm)) {
    throw NumericError("training step " + std::to_string(state.step + 1) +
                       ": non-finite gradient norm");
  }

  ++state.step;
  AdamWHyper h{learning_rate_at(cfg.train, state.step), cfg.train.adam_beta1, cfg.train.adam_beta2,
               cfg.train.adam_eps, cfg.train.weight_decay};
  auto params = state.params.all();
  for (std::size_t i = 0; i < params.size(); ++i) {
    AdamWHyper hp = h;
    if (!decays(params[i]->value.shape())) hp.weight_decay = 0.0;
    adamw_update(*params[i], state.moments[i], state.step, hp);
  }
  return r;
}

std::string format_log_line(const LogEntry& e) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.6f", e.step, e.loss, e.coverage);
  return buf;
}

namespace {

std::vector<LogEntry> read_log(const fs::path& path, std::size_t up_to_step) {
  std::vector<LogEntry> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    LogEntry e;
    if (!(ls >> e.step >> e.loss >> e.coverage)) {
      throw std::runtime_error("malformed loss log line in " + path.string() + ": " + line);
    }
    if (e.step <= up_to_step) out.push_back(e);
  }
  return out;
}

}  // namespace

std::size_t total_steps(const TrainConfig& cfg, std::size_t corpus_size) {
  if (cfg.max_steps > 0) return cfg.max_steps;
  const std::size_t per_epoch = (corpus_size + cfg.batch_size - 1) / cfg.batch_size;
  return cfg.epochs * per_epoch;
}

std::vector<text::TokenSequence> encode_corpus(const std::vector<std::string>& lines,
                                               const text::Vocabulary& vocab, std::size_t max_len) {
  std::vector<text::TokenSequence> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(text::encode_text(l, vocab, max_len));
  return out;
}

PretrainResult run_pretraining(const RunConfig& config, const std::vector<std::string>& corpus,
                               const fs::path& out_dir, const RunOptions& opts) {
  config.validate();
  if (corpus.empty()) throw std::invalid_argument("corpus is empty");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out_dir.string() + ": " + ec.message());

  const fs::path ckpt_path = out_dir / "checkpoint.bin";
  const fs::path vocab_path = out_dir / "vocab.txt";
  const fs::path log_path = out_dir / "loss.log";

  PretrainResult result;
  text::Vocabulary vocab;
  if (opts.resume && fs::exists(ckpt_path)) {
    result.state = checkpoint::load(ckpt_path);
    vocab = text::Vocabulary::load(out_dir / result.state.vocab_file);
    RunConfig expected = config;
    expected.encoder.vocab_size = vocab.size();
    if (!(expected == result.state.config)) {
      throw std::invalid_argument("cannot resume: configuration differs from the checkpoint in " +
                                  out_dir.string());
    }
    result.log = read_log(log_path, result.state.step);
  } else {
    vocab = text::Vocabulary::build(corpus, config.encoder.vocab_size);
    vocab.save(vocab_path);
    RunConfig resolved = config;
    resolved.encoder.vocab_size = vocab.size();
    result.state = TrainState::fresh(resolved);
  }

  {
    std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write loss log " + log_path.string());
    for (const auto& e : result.log) log << format_log_line(e) << '\n';
  }
  std::ofstream log(log_path, std::ios::binary | std::ios::app);

  const auto store = encode_corpus(corpus, vocab, config.encoder.max_len);
  text::BatchIterator batches(store, config.train.batch_size, config.train.seed);
  const std::size_t steps = total_steps(config.train, store.size());
  auto& state = result.state;
  batches.seek(state.step);

  while (state.step < steps) {
    if (opts.halt_after && state.step >= *opts.halt_after) break;
    const auto r = train_step(state, batches.next());
    if (state.step % config.train.log_every == 0 || state.step == steps) {
      LogEntry e{state.step, r.loss, r.coverage};
      result.log.push_back(e);
      log << format_log_line(e) << '\n';
      log.flush();
      if (opts.on_log) opts.on_log(e);
    }
    if (config.train.checkpoint_every > 0 && state.step % config.train.checkpoint_every == 0) {
      checkpoint::save(state, ckpt_path);
    }
  }
  if (!log) throw std::runtime_error("write failed for " + log_path.string());
  checkpoint::save(state, ckpt_path);
  return result;
}

ReconstructionResult evaluate_reconstruction(ModelParams<float>& params,
                                             std::span<const text::TokenSequence> store,
                                             DecodeMode mode, double gamma_de, std::uint64_t seed,
                                             bool swap_embeddings, std::size_t batch_size) {
  const std::size_t n = store.size();
  if (n == 0) throw std::invalid_argument("evaluate_reconstruction: empty store");
  std::vector<Tensor<float>> sentences(n);
  const std::size_t d = params.encoder.hidden_dim;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < std::min(n, begin + batch_size); ++i) idx.push_back(i);
    const auto in = model::inference_inputs(text::make_batch(store, idx));
    ad::Tape<float> tape;
    model::Graph<float> g(tape, params);
    const auto& h = model::encode(g, in.encoder_ids, in.pad, in.batch, in.length).sentence.value();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      Tensor<float> row({1, d});
      for (std::size_t j = 0; j < d; ++j) row[j] = h.at(b, j);
      sentences[idx[b]] = std::move(row);
    }
  }

  ReconstructionResult result;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < std::min(n, begin + batch_size); ++i) idx.push_back(i);
    const auto batch = text::make_batch(store, idx);
    // gamma_en only affects the encoder ids, which are not used here.
    const auto in = model::prepare_inputs(batch, mode, 0.5, gamma_de, seed, begin / batch_size);
    Tensor<float> h({idx.size(), d});
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& src = sentences[swap_embeddings ? (idx[b] + 1) % n : idx[b]];
      for (std::size_t j = 0; j < d; ++j) h.at(b, j) = src[j];
    }
    ad::Tape<float> tape;
    model::Graph<float> g(tape, params);
    const auto sentence = tape.constant(std::move(h));
    const auto logits =
        mode == DecodeMode::kEnhanced
            ? model::decode_enhanced(g, sentence, model::token_embeddings(g, in.decoder_ids), in)
            : model::decode_basic(g, sentence, model::token_embeddings(g, in.decoder_ids), in);
    std::vector<std::uint8_t> positions(in.rows(), 0);
    for (std::size_t r = 0; r < in.rows(); ++r) {
      positions[r] = in.loss_weights[r] && in.original[r] >= static_cast<text::TokenId>(text::kNumReserved);
    }
    const auto [correct, total] = model::reconstruction_counts(logits.value(), in.original, positions);
    result.correct += correct;
    result.total += total;
  }
  return result;
}

}  // namespace retromae::training
