// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "retromae/config.hpp"
#include "retromae/model.hpp"
#include "retromae/text.hpp"

namespace retromae::training {

using model::ModelParams;

struct AdamWHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
struct Moments {
  Tensor<T> m;
  Tensor<T> v;
};

/// One decoupled-weight-decay Adam step on `p` using `p.grad`. `t` is the
/// 1-based step count used for bias correction.
template <typename T>
void adamw_update(ad::Parameter<T>& p, Moments<T>& state, std::size_t t, const AdamWHyper& h);

/// Matrices decay, vectors (biases, layer-norm affine) do not.
bool decays(const Shape& shape);

/// Linear warmup over warmup_steps, then constant. `step` is 1-based.
double learning_rate_at(const TrainConfig& cfg, std::size_t step);

/// Scales gradients so their global L2 norm is at most max_norm (no-op when
/// max_norm <= 0). Returns the norm before scaling.
template <typename T>
double clip_grad_norm(ModelParams<T>& params, double max_norm);

struct TrainState {
  RunConfig config;  // resolved: vocab_size is the actual vocabulary size
  std::size_t step = 0;
  std::string vocab_file = "vocab.txt";
  ModelParams<float> params;
  std::vector<Moments<float>> moments;  // same order as params.all()

  static TrainState fresh(const RunConfig& resolved);
};

struct StepResult {
  double loss = 0.0;
  double coverage = 0.0;
  double grad_norm = 0.0;
};

/// mask -> encode -> (decoder mask | attention matrix) -> decode -> loss ->
/// backward -> clip -> AdamW. Random draws depend only on (seed, step, item).
/// Throws NumericError with the step number if the loss is not finite.
StepResult train_step(TrainState& state, const text::Batch& batch);

struct LogEntry {
  std::size_t step = 0;
  double loss = 0.0;
  double coverage = 0.0;
};

std::string format_log_line(const LogEntry& e);

struct RunOptions {
  bool resume = false;
  /// Stop (and checkpoint) once this many steps have completed.
  std::optional<std::size_t> halt_after;
  std::function<void(const LogEntry&)> on_log;
};

struct PretrainResult {
  TrainState state;
  std::vector<LogEntry> log;
};

std::size_t total_steps(const TrainConfig& cfg, std::size_t corpus_size);

/// Builds (or on resume reloads) the vocabulary, trains, and writes
/// vocab.txt, checkpoint.bin and loss.log under out_dir.
PretrainResult run_pretraining(const RunConfig& config, const std::vector<std::string>& corpus,
                               const std::filesystem::path& out_dir, const RunOptions& opts = {});

/// Encodes every line with the vocabulary, truncating at max_len.
std::vector<text::TokenSequence> encode_corpus(const std::vector<std::string>& lines,
                                               const text::Vocabulary& vocab, std::size_t max_len);

struct ReconstructionResult {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const {
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  }
};

/// Reconstruction accuracy over content tokens with an unmasked encoder
/// input. Enhanced: every content token, rows see sampled contexts drawn with
/// `seed`. Basic: the decoder-masked tokens. With `swap_embeddings` sentence
/// i is decoded from the embedding of sentence (i + 1) mod n.
ReconstructionResult evaluate_reconstruction(ModelParams<float>& params,
                                             std::span<const text::TokenSequence> store,
                                             DecodeMode mode, double gamma_de, std::uint64_t seed,
                                             bool swap_embeddings = false,
                                             std::size_t batch_size = 64);

}  // namespace retromae::training
