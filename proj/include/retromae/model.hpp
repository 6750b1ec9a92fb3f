// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Encoder / decoder pair for masked auto-encoding pre-training.
//
// The encoder is a post-LN BERT-style stack over the encoder-masked sentence;
// the sentence embedding is the last-layer state at position 0 ([CLS]).
//
// The decoder is a small transformer over the same positions with its own
// position table. Basic decoding runs ordinary self-attention over
// [h, e(x~1) .. e(x~N)] + P and predicts the decoder-masked tokens. Enhanced
// decoding uses two streams: queries from H1 = h + P at every position,
// keys/values from H2 = [h, e(x1) .. e(xN)] + P, a per-row visibility matrix
// that always hides the row's own token, and a residual on H1. Every real
// token is then a prediction target. The word-embedding table is shared by the
// encoder input, the decoder input, and the output projection.

#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "retromae/autodiff.hpp"
#include "retromae/config.hpp"
#include "retromae/masking.hpp"
#include "retromae/text.hpp"

namespace retromae::model {

using ad::Parameter;
using ad::Tape;
using ad::Var;
using text::TokenId;

template <typename T>
struct LayerParams {
  Parameter<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Parameter<T> ln1_gain, ln1_bias;
  Parameter<T> w1, b1, w2, b2;
  Parameter<T> ln2_gain, ln2_bias;

  template <typename F>
  void for_each(F&& f) {
    for (Parameter<T>* p : {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln1_gain, &ln1_bias, &w1, &b1,
                            &w2, &b2, &ln2_gain, &ln2_bias})
      f(*p);
  }
};

template <typename T>
class ModelParams {
 public:
  EncoderConfig encoder;
  DecoderConfig decoder;

  Parameter<T> word_emb;  // [V x d], tied to the output projection
  Parameter<T> enc_pos;   // [max_len x d]
  Parameter<T> emb_ln_gain, emb_ln_bias;
  std::vector<LayerParams<T>> enc_layers;
  Parameter<T> dec_pos;  // [max_len x d]
  std::vector<LayerParams<T>> dec_layers;
  Parameter<T> out_bias;  // [V]

  /// Truncated normal (sigma = init_std, cut at 2 sigma) for matrices, zeros
  /// for biases, ones for layer-norm gains.
  static ModelParams init(const EncoderConfig& enc, const DecoderConfig& dec, double init_std,
                          std::uint64_t seed);

  /// Every parameter in a fixed order (checkpoint and optimizer order).
  std::vector<Parameter<T>*> all();
  std::vector<const Parameter<T>*> all() const;
  Parameter<T>* find(const std::string& name);

  void zero_grad();
  std::size_t num_values() const;

  template <typename U>
  ModelParams<U> cast() const;
};

/// Binds each parameter to the tape the first time it is used.
template <typename T>
class Graph {
 public:
  Graph(Tape<T>& tape, ModelParams<T>& params) : tape_(tape), params_(params) {}

  Var<T> operator()(Parameter<T>& p);
  Tape<T>& tape() { return tape_; }
  ModelParams<T>& params() { return params_; }

 private:
  Tape<T>& tape_;
  ModelParams<T>& params_;
  std::unordered_map<const Parameter<T>*, Var<T>> bound_;
};

/// Everything a training step needs once the random draws are made. Arrays
/// are row-major [batch x length].
struct StepInputs {
  DecodeMode mode = DecodeMode::kEnhanced;
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<TokenId> original;
  std::vector<std::uint8_t> pad;
  std::vector<TokenId> encoder_ids;
  std::vector<std::uint8_t> encoder_masked;
  std::vector<TokenId> decoder_ids;  // basic: decoder-masked ids; enhanced: original
  std::vector<std::uint8_t> loss_weights;
  std::vector<masking::AttentionMaskMatrix> attention;  // enhanced only, one per item
  std::size_t content_tokens = 0;
  std::size_t target_content_tokens = 0;

  std::size_t rows() const { return batch * length; }
  double coverage() const {
    return content_tokens ? static_cast<double>(target_content_tokens) /
                                static_cast<double>(content_tokens)
                          : 0.0;
  }
};

/// Draws encoder masks, then decoder masks (basic) or attention matrices
/// (enhanced). Item b of step s uses derive_seed(seed, {s, b, purpose}).
StepInputs prepare_inputs(const text::Batch& batch, DecodeMode mode, double gamma_en,
                          double gamma_de, std::uint64_t seed, std::size_t step);

/// No masking anywhere; enough for encode().
StepInputs inference_inputs(const text::Batch& batch);

template <typename T>
struct EncoderOutput {
  Var<T> hidden;    // [B*L x d]
  Var<T> sentence;  // [B x d]
};

/// Fails if length exceeds max_len. Pad columns are hidden from attention.
template <typename T>
EncoderOutput<T> encode(Graph<T>& g, const std::vector<TokenId>& ids,
                        const std::vector<std::uint8_t>& pad, std::size_t batch, std::size_t length);

/// Word-embedding rows for decoder input, [B*L x d].
template <typename T>
Var<T> token_embeddings(Graph<T>& g, const std::vector<TokenId>& ids);

/// Logits [B*L x V]. `tokens` are embeddings of the decoder-masked ids.
template <typename T>
Var<T> decode_basic(Graph<T>& g, Var<T> sentence, Var<T> tokens, const StepInputs& in);

/// Logits [B*L x V]. `tokens` are embeddings of the original ids.
template <typename T>
Var<T> decode_enhanced(Graph<T>& g, Var<T> sentence, Var<T> tokens, const StepInputs& in);

template <typename T>
struct StepOutput {
  Var<T> loss;
  Var<T> decoder_loss;
  Var<T> logits;
  Var<T> sentence;
};

/// encode -> decode -> cross-entropy. With encoder_mlm_weight > 0 an MLM loss
/// on the encoder's masked positions is added.
template <typename T>
StepOutput<T> forward_step(Graph<T>& g, const StepInputs& in, double encoder_mlm_weight = 0.0);

/// Fraction of positions with weight 1 whose argmax (lowest index on ties)
/// equals the target.
template <typename T>
double reconstruction_accuracy(const Tensor<T>& logits, const std::vector<TokenId>& targets,
                               const std::vector<std::uint8_t>& positions);

/// Correct / total counts behind reconstruction_accuracy.
template <typename T>
std::pair<std::size_t, std::size_t> reconstruction_counts(const Tensor<T>& logits,
                                                          const std::vector<TokenId>& targets,
                                                          const std::vector<std::uint8_t>& positions);

}  // namespace retromae::model
