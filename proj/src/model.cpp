// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "retromae/model.hpp"

#include <cmath>
#include <stdexcept>

#include "retromae/rng.hpp"

namespace retromae::model {

namespace {

enum Purpose : std::uint64_t { kEncoderMask = 1, kDecoderMask = 2, kAttention = 3 };

template <typename T>
Parameter<T> normal_param(std::string name, Shape shape, double sd, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(sd * rng.truncated_normal());
  return Parameter<T>(std::move(name), std::move(t));
}

template <typename T>
Parameter<T> const_param(std::string name, Shape shape, T v) {
  return Parameter<T>(std::move(name), Tensor<T>(std::move(shape), v));
}

template <typename T>
LayerParams<T> init_layer(const std::string& prefix, std::size_t d, std::size_t ffn, double sd,
                          Rng& rng) {
  LayerParams<T> l;
  l.wq = normal_param<T>(prefix + ".attn.wq", {d, d}, sd, rng);
  l.bq = const_param<T>(prefix + ".attn.bq", {d}, T{0});
  l.wk = normal_param<T>(prefix + ".attn.wk", {d, d}, sd, rng);
  l.bk = const_param<T>(prefix + ".attn.bk", {d}, T{0});
  l.wv = normal_param<T>(prefix + ".attn.wv", {d, d}, sd, rng);
  l.bv = const_param<T>(prefix + ".attn.bv", {d}, T{0});
  l.wo = normal_param<T>(prefix + ".attn.wo", {d, d}, sd, rng);
  l.bo = const_param<T>(prefix + ".attn.bo", {d}, T{0});
  l.ln1_gain = const_param<T>(prefix + ".ln1.gain", {d}, T{1});
  l.ln1_bias = const_param<T>(prefix + ".ln1.bias", {d}, T{0});
  l.w1 = normal_param<T>(prefix + ".ffn.w1", {d, ffn}, sd, rng);
  l.b1 = const_param<T>(prefix + ".ffn.b1", {ffn}, T{0});
  l.w2 = normal_param<T>(prefix + ".ffn.w2", {ffn, d}, sd, rng);
  l.b2 = const_param<T>(prefix + ".ffn.b2", {d}, T{0});
  l.ln2_gain = const_param<T>(prefix + ".ln2.gain", {d}, T{1});
  l.ln2_bias = const_param<T>(prefix + ".ln2.bias", {d}, T{0});
  return l;
}

template <typename T, typename U>
Parameter<U> cast_param(const Parameter<T>& p) {
  return Parameter<U>(p.name, p.value.template cast<U>());
}

template <typename T, typename U>
LayerParams<U> cast_layer(const LayerParams<T>& l) {
  LayerParams<U> o;
  o.wq = cast_param<T, U>(l.wq);
  o.bq = cast_param<T, U>(l.bq);
  o.wk = cast_param<T, U>(l.wk);
  o.bk = cast_param<T, U>(l.bk);
  o.wv = cast_param<T, U>(l.wv);
  o.bv = cast_param<T, U>(l.bv);
  o.wo = cast_param<T, U>(l.wo);
  o.bo = cast_param<T, U>(l.bo);
  o.ln1_gain = cast_param<T, U>(l.ln1_gain);
  o.ln1_bias = cast_param<T, U>(l.ln1_bias);
  o.w1 = cast_param<T, U>(l.w1);
  o.b1 = cast_param<T, U>(l.b1);
  o.w2 = cast_param<T, U>(l.w2);
  o.b2 = cast_param<T, U>(l.b2);
  o.ln2_gain = cast_param<T, U>(l.ln2_gain);
  o.ln2_bias = cast_param<T, U>(l.ln2_bias);
  return o;
}

std::vector<std::int32_t> position_ids(std::size_t batch, std::size_t length) {
  std::vector<std::int32_t> ids(batch * length);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t l = 0; l < length; ++l) ids[b * length + l] = static_cast<std::int32_t>(l);
  return ids;
}

// Row r of [B*L x d] -> sequence index r / L.
std::vector<std::int32_t> broadcast_ids(std::size_t batch, std::size_t length) {
  std::vector<std::int32_t> ids(batch * length);
  for (std::size_t r = 0; r < ids.size(); ++r) ids[r] = static_cast<std::int32_t>(r / length);
  return ids;
}

std::vector<std::uint8_t> first_position_rows(std::size_t batch, std::size_t length) {
  std::vector<std::uint8_t> rows(batch * length, 0);
  for (std::size_t b = 0; b < batch; ++b) rows[b * length] = 1;
  return rows;
}

template <typename T>
Tensor<T> pad_mask(const std::vector<std::uint8_t>& pad, std::size_t batch, std::size_t length) {
  Tensor<T> m({batch, length, length});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < length; ++i)
      for (std::size_t j = 0; j < length; ++j)
        if (pad[b * length + j]) m[(b * length + i) * length + j] = ad::kMasked<T>;
  return m;
}

template <typename T>
Var<T> linear(Graph<T>& g, Var<T> x, Parameter<T>& w, Parameter<T>& b) {
  return ad::add_bias(ad::matmul(x, g(w)), g(b));
}

// One post-LN transformer layer. Queries come from `query_in`, keys/values
// from `kv_in`; `residual` is added to the attention output.
template <typename T>
Var<T> transformer_layer(Graph<T>& g, LayerParams<T>& l, Var<T> query_in, Var<T> kv_in,
                         Var<T> residual, const Tensor<T>& mask, std::size_t batch,
                         std::size_t heads) {
  const std::size_t d = query_in.shape()[1];
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(d / heads));
  auto q = ad::split_heads(linear(g, query_in, l.wq, l.bq), batch, heads);
  auto k = ad::split_heads(linear(g, kv_in, l.wk, l.bk), batch, heads);
  auto v = ad::split_heads(linear(g, kv_in, l.wv, l.bv), batch, heads);
  auto scores = ad::scale(ad::batched_matmul_bt(q, k), inv_sqrt_dh);
  auto probs = ad::masked_softmax(scores, mask);
  auto ctx = ad::merge_heads(ad::batched_matmul(probs, v), batch, heads);
  auto attn = linear(g, ctx, l.wo, l.bo);
  auto x = ad::layer_norm(ad::add(residual, attn), g(l.ln1_gain), g(l.ln1_bias));
  auto ffn = linear(g, ad::gelu(linear(g, x, l.w1, l.b1)), l.w2, l.b2);
  return ad::layer_norm(ad::add(x, ffn), g(l.ln2_gain), g(l.ln2_bias));
}

template <typename T>
Var<T> output_logits(Graph<T>& g, Var<T> hidden) {
  auto& p = g.params();
  return ad::add_bias(ad::matmul(hidden, ad::transpose(g(p.word_emb))), g(p.out_bias));
}

void check_inputs(const StepInputs& in, std::size_t max_len) {
  if (in.length > max_len) {
    throw std::invalid_argument("sequence length " + std::to_string(in.length) +
                                " exceeds max_len " + std::to_string(max_len));
  }
  if (in.original.size() != in.rows() || in.pad.size() != in.rows() ||
      in.decoder_ids.size() != in.rows() || in.loss_weights.size() != in.rows()) {
    throw ShapeError("step inputs are not [batch x length]");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
ModelParams<T> ModelParams<T>::init(const EncoderConfig& enc, const DecoderConfig& dec,
                                    double init_std, std::uint64_t seed) {
  enc.validate();
  dec.validate(enc);
  Rng rng(derive_seed(seed, {0x1417}));
  const std::size_t d = enc.hidden_dim;
  ModelParams<T> m;
  m.encoder = enc;
  m.decoder = dec;
  m.word_emb = normal_param<T>("embeddings.word", {enc.vocab_size, d}, init_std, rng);
  m.enc_pos = normal_param<T>("encoder.position", {enc.max_len, d}, init_std, rng);
  m.emb_ln_gain = const_param<T>("encoder.embedding_ln.gain", {d}, T{1});
  m.emb_ln_bias = const_param<T>("encoder.embedding_ln.bias", {d}, T{0});
  for (std::size_t i = 0; i < enc.layers; ++i) {
    m.enc_layers.push_back(
        init_layer<T>("encoder.layer" + std::to_string(i), d, enc.ffn_dim, init_std, rng));
  }
  m.dec_pos = normal_param<T>("decoder.position", {enc.max_len, d}, init_std, rng);
  for (std::size_t i = 0; i < dec.layers; ++i) {
    m.dec_layers.push_back(
        init_layer<T>("decoder.layer" + std::to_string(i), d, enc.ffn_dim, init_std, rng));
  }
  m.out_bias = const_param<T>("decoder.output_bias", {enc.vocab_size}, T{0});
  return m;
}

template <typename T>
std::vector<Parameter<T>*> ModelParams<T>::all() {
  std::vector<Parameter<T>*> out{&word_emb, &enc_pos, &emb_ln_gain, &emb_ln_bias};
  for (auto& l : enc_layers) l.for_each([&](Parameter<T>& p) { out.push_back(&p); });
  out.push_back(&dec_pos);
  for (auto& l : dec_layers) l.for_each([&](Parameter<T>& p) { out.push_back(&p); });
  out.push_back(&out_bias);
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> ModelParams<T>::all() const {
  auto ptrs = const_cast<ModelParams<T>*>(this)->all();
  return {ptrs.begin(), ptrs.end()};
}

template <typename T>
Parameter<T>* ModelParams<T>::find(const std::string& name) {
  for (auto* p : all())
    if (p->name == name) return p;
  return nullptr;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto* p : all()) p->zero_grad();
}

template <typename T>
std::size_t ModelParams<T>::num_values() const {
  std::size_t n = 0;
  for (const auto* p : all()) n += p->value.size();
  return n;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> o;
  o.encoder = encoder;
  o.decoder = decoder;
  o.word_emb = cast_param<T, U>(word_emb);
  o.enc_pos = cast_param<T, U>(enc_pos);
  o.emb_ln_gain = cast_param<T, U>(emb_ln_gain);
  o.emb_ln_bias = cast_param<T, U>(emb_ln_bias);
  for (const auto& l : enc_layers) o.enc_layers.push_back(cast_layer<T, U>(l));
  o.dec_pos = cast_param<T, U>(dec_pos);
  for (const auto& l : dec_layers) o.dec_layers.push_back(cast_layer<T, U>(l));
  o.out_bias = cast_param<T, U>(out_bias);
  return o;
}

template <typename T>
Var<T> Graph<T>::operator()(Parameter<T>& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return it->second;
  Var<T> v = tape_.param(p);
  bound_.emplace(&p, v);
  return v;
}

// ---------------------------------------------------------------------------
// Inputs

StepInputs prepare_inputs(const text::Batch& batch, DecodeMode mode, double gamma_en,
                          double gamma_de, std::uint64_t seed, std::size_t step) {
  StepInputs in;
  in.mode = mode;
  in.batch = batch.size();
  in.length = batch.length;
  in.original = batch.padded_ids();
  in.pad.assign(in.rows(), 0);
  in.encoder_ids = in.original;
  in.encoder_masked.assign(in.rows(), 0);
  in.decoder_ids = in.original;
  in.loss_weights.assign(in.rows(), 0);

  for (std::size_t b = 0; b < in.batch; ++b) {
    const auto& seq = batch.sequences[b];
    const std::size_t base = b * in.length;
    std::vector<std::size_t> pads;
    for (std::size_t p = seq.length(); p < in.length; ++p) {
      in.pad[base + p] = 1;
      pads.push_back(p);
    }
    in.content_tokens += seq.maskable_positions().size();

    Rng enc_rng(derive_seed(seed, {step, b, kEncoderMask}));
    const auto enc = masking::mask_for_encoder(seq, gamma_en, enc_rng);
    for (std::size_t p : enc.masked_positions) {
      in.encoder_ids[base + p] = text::kMask;
      in.encoder_masked[base + p] = 1;
    }

    if (mode == DecodeMode::kBasic) {
      Rng dec_rng(derive_seed(seed, {step, b, kDecoderMask}));
      const auto dec = masking::mask_for_decoder(seq, gamma_de, dec_rng);
      for (std::size_t p : dec.masked_positions) {
        in.decoder_ids[base + p] = text::kMask;
        in.loss_weights[base + p] = 1;
      }
      in.target_content_tokens += dec.masked_positions.size();
    } else {
      Rng att_rng(derive_seed(seed, {step, b, kAttention}));
      in.attention.push_back(masking::build_attention_mask(in.length, gamma_de, pads, att_rng));
      for (std::size_t p = 1; p < seq.length(); ++p) in.loss_weights[base + p] = 1;
      in.target_content_tokens += seq.maskable_positions().size();
    }
  }
  return in;
}

StepInputs inference_inputs(const text::Batch& batch) {
  StepInputs in;
  in.batch = batch.size();
  in.length = batch.length;
  in.original = batch.padded_ids();
  in.encoder_ids = in.original;
  in.decoder_ids = in.original;
  in.pad.assign(in.rows(), 0);
  in.encoder_masked.assign(in.rows(), 0);
  in.loss_weights.assign(in.rows(), 0);
  for (std::size_t b = 0; b < in.batch; ++b)
    for (std::size_t p = batch.sequences[b].length(); p < in.length; ++p)
      in.pad[b * in.length + p] = 1;
  return in;
}

// ---------------------------------------------------------------------------
// Forward

template <typename T>
EncoderOutput<T> encode(Graph<T>& g, const std::vector<TokenId>& ids,
                        const std::vector<std::uint8_t>& pad, std::size_t batch,
                        std::size_t length) {
  auto& p = g.params();
  if (length > p.encoder.max_len) {
    throw std::invalid_argument("sequence length " + std::to_string(length) +
                                " exceeds encoder max_len " + std::to_string(p.encoder.max_len));
  }
  if (ids.size() != batch * length || pad.size() != ids.size()) {
    throw ShapeError("encode: ids are not [batch x length]");
  }
  auto x = ad::add(ad::embedding_lookup(g(p.word_emb), ids),
                   ad::embedding_lookup(g(p.enc_pos), position_ids(batch, length)));
  x = ad::layer_norm(x, g(p.emb_ln_gain), g(p.emb_ln_bias));
  const Tensor<T> mask = pad_mask<T>(pad, batch, length);
  for (auto& l : p.enc_layers) x = transformer_layer(g, l, x, x, x, mask, batch, p.encoder.heads);
  std::vector<std::int32_t> cls_rows(batch);
  for (std::size_t b = 0; b < batch; ++b) cls_rows[b] = static_cast<std::int32_t>(b * length);
  return {x, ad::gather_rows(x, std::move(cls_rows))};
}

template <typename T>
Var<T> token_embeddings(Graph<T>& g, const std::vector<TokenId>& ids) {
  return ad::embedding_lookup(g(g.params().word_emb), ids);
}

template <typename T>
Var<T> decode_basic(Graph<T>& g, Var<T> sentence, Var<T> tokens, const StepInputs& in) {
  auto& p = g.params();
  check_inputs(in, p.encoder.max_len);
  // h occupies position 0 in place of the [CLS] embedding.
  auto h_rows = ad::gather_rows(sentence, broadcast_ids(in.batch, in.length));
  auto x = ad::select_rows(tokens, h_rows, first_position_rows(in.batch, in.length));
  x = ad::add(x, ad::embedding_lookup(g(p.dec_pos), position_ids(in.batch, in.length)));
  const Tensor<T> mask = pad_mask<T>(in.pad, in.batch, in.length);
  for (auto& l : p.dec_layers) x = transformer_layer(g, l, x, x, x, mask, in.batch, p.decoder.heads);
  return output_logits(g, x);
}

template <typename T>
Var<T> decode_enhanced(Graph<T>& g, Var<T> sentence, Var<T> tokens, const StepInputs& in) {
  auto& p = g.params();
  check_inputs(in, p.encoder.max_len);
  if (p.dec_layers.size() != 1) {
    throw std::invalid_argument("enhanced decoding needs exactly one decoder layer");
  }
  if (in.attention.size() != in.batch) {
    throw ShapeError("decode_enhanced: expected one attention matrix per sequence");
  }
  Tensor<T> mask({in.batch, in.length, in.length});
  for (std::size_t b = 0; b < in.batch; ++b) {
    if (in.attention[b].length() != in.length) {
      throw ShapeError("decode_enhanced: attention matrix of length " +
                       std::to_string(in.attention[b].length()) + " for sequence length " +
                       std::to_string(in.length));
    }
    const auto m = in.attention[b].template additive<T>();
    std::copy(m.data().begin(), m.data().end(), mask.data().begin() + b * in.length * in.length);
  }
  auto pos = ad::embedding_lookup(g(p.dec_pos), position_ids(in.batch, in.length));
  auto h_rows = ad::gather_rows(sentence, broadcast_ids(in.batch, in.length));
  auto h1 = ad::add(h_rows, pos);
  auto h2 = ad::add(ad::select_rows(tokens, h_rows, first_position_rows(in.batch, in.length)), pos);
  auto out = transformer_layer(g, p.dec_layers[0], h1, h2, h1, mask, in.batch, p.decoder.heads);
  return output_logits(g, out);
}

template <typename T>
StepOutput<T> forward_step(Graph<T>& g, const StepInputs& in, double encoder_mlm_weight) {
  auto enc = encode(g, in.encoder_ids, in.pad, in.batch, in.length);
  auto tokens = token_embeddings(g, in.decoder_ids);
  Var<T> logits = in.mode == DecodeMode::kBasic ? decode_basic(g, enc.sentence, tokens, in)
                                                : decode_enhanced(g, enc.sentence, tokens, in);
  bool any = false;
  for (auto w : in.loss_weights) any = any || w;
  if (!any) throw std::invalid_argument("decoder has no target position (nothing masked)");
  auto dec_loss = ad::cross_entropy(logits, in.original, in.loss_weights);
  StepOutput<T> out{dec_loss, dec_loss, logits, enc.sentence};
  if (encoder_mlm_weight > 0.0) {
    auto mlm = ad::cross_entropy(output_logits(g, enc.hidden), in.original, in.encoder_masked);
    out.loss = ad::add(dec_loss, ad::scale(mlm, static_cast<T>(encoder_mlm_weight)));
  }
  return out;
}

template <typename T>
std::pair<std::size_t, std::size_t> reconstruction_counts(const Tensor<T>& logits,
                                                          const std::vector<TokenId>& targets,
                                                          const std::vector<std::uint8_t>& positions) {
  if (logits.rank() != 2 || targets.size() != logits.dim(0) || positions.size() != logits.dim(0)) {
    throw ShapeError("reconstruction_accuracy: logits/targets/positions disagree");
  }
  const std::size_t vocab = logits.dim(1);
  std::size_t correct = 0, total = 0;
  for (std::size_t r = 0; r < positions.size(); ++r) {
    if (!positions[r]) continue;
    ++total;
    std::size_t best = 0;
    for (std::size_t c = 1; c < vocab; ++c)
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    correct += static_cast<TokenId>(best) == targets[r];
  }
  return {correct, total};
}

template <typename T>
double reconstruction_accuracy(const Tensor<T>& logits, const std::vector<TokenId>& targets,
                               const std::vector<std::uint8_t>& positions) {
  const auto [correct, total] = reconstruction_counts(logits, targets, positions);
  if (total == 0) throw std::invalid_argument("reconstruction_accuracy: no positions selected");
  return static_cast<double>(correct) / static_cast<double>(total);
}

#define RETROMAE_INSTANTIATE(T)                                                                  \
  template class ModelParams<T>;                                                                  \
  template class Graph<T>;                                                                        \
  template EncoderOutput<T> encode(Graph<T>&, const std::vector<TokenId>&,                        \
                                   const std::vector<std::uint8_t>&, std::size_t, std::size_t);   \
  template Var<T> token_embeddings(Graph<T>&, const std::vector<TokenId>&);                       \
  template Var<T> decode_basic(Graph<T>&, Var<T>, Var<T>, const StepInputs&);                     \
  template Var<T> decode_enhanced(Graph<T>&, Var<T>, Var<T>, const StepInputs&);                  \
  template StepOutput<T> forward_step(Graph<T>&, const StepInputs&, double);                      \
  template double reconstruction_accuracy(const Tensor<T>&, const std::vector<TokenId>&,          \
                                          const std::vector<std::uint8_t>&);                      \
  template std::pair<std::size_t, std::size_t> reconstruction_counts(                             \
      const Tensor<T>&, const std::vector<TokenId>&, const std::vector<std::uint8_t>&);

RETROMAE_INSTANTIATE(float)
RETROMAE_INSTANTIATE(double)

#undef RETROMAE_INSTANTIATE

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

}  // namespace retromae::model
