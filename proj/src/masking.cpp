// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "retromae/masking.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

namespace retromae::masking {

namespace {

constexpr double kMlmRatio = 0.15;

void check_ratio(double r, const char* name) {
  if (!(r > 0.0 && r < 1.0)) {
    throw std::invalid_argument(std::string(name) + " must lie in (0, 1), got " +
                                std::to_string(r));
  }
}

std::size_t round_half_up(double x) {
  // The epsilon absorbs representation error such as 0.15 * 10 = 1.4999...
  return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9));
}

MaskedSeq mask_sequence(const TokenSequence& seq, double ratio, Rng& rng) {
  const auto pool = seq.maskable_positions();
  if (pool.empty()) throw std::invalid_argument("sequence has no maskable token");
  MaskedSeq out;
  out.ratio = ratio;
  out.ids = seq.ids;
  out.masked_positions = rng.sample(pool, mask_count(ratio, pool.size()));
  std::sort(out.masked_positions.begin(), out.masked_positions.end());
  for (std::size_t p : out.masked_positions) out.ids[p] = text::kMask;
  return out;
}

}  // namespace

std::size_t mask_count(double ratio, std::size_t n) {
  if (n == 0) return 0;
  return std::clamp<std::size_t>(round_half_up(ratio * static_cast<double>(n)), 1, n);
}

bool MaskedSeq::is_masked(std::size_t pos) const {
  return std::binary_search(masked_positions.begin(), masked_positions.end(), pos);
}

EncoderMaskedSeq mask_for_encoder(const TokenSequence& seq, double gamma_en, Rng& rng) {
  check_ratio(gamma_en, "encoder masking ratio");
  return EncoderMaskedSeq{mask_sequence(seq, gamma_en, rng)};
}

DecoderMaskedSeq mask_for_decoder(const TokenSequence& seq, double gamma_de, Rng& rng) {
  check_ratio(gamma_de, "decoder masking ratio");
  return DecoderMaskedSeq{mask_sequence(seq, gamma_de, rng)};
}

EncoderMaskedSeq unmasked(const TokenSequence& seq) {
  EncoderMaskedSeq out;
  out.ids = seq.ids;
  return out;
}

std::size_t AttentionMaskMatrix::visible_count(std::size_t row) const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < length_; ++c) n += visible(row, c);
  return n;
}

std::vector<std::size_t> AttentionMaskMatrix::visible_columns(std::size_t row) const {
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < length_; ++c)
    if (visible(row, c)) cols.push_back(c);
  return cols;
}

std::size_t context_size(double gamma_de, std::size_t real_len) {
  return std::max<std::size_t>(1, round_half_up((1.0 - gamma_de) * static_cast<double>(real_len)));
}

AttentionMaskMatrix build_attention_mask(std::size_t length, double gamma_de,
                                         const std::vector<std::size_t>& pad_positions, Rng& rng) {
  if (length < 2) throw std::invalid_argument("attention mask needs length >= 2");
  check_ratio(gamma_de, "decoder masking ratio");
  std::vector<std::uint8_t> is_pad(length, 0);
  for (std::size_t p : pad_positions) {
    if (p == 0) throw std::invalid_argument("position 0 holds the sentence embedding, not a pad");
    if (p >= length) throw std::out_of_range("pad position beyond sequence length");
    is_pad[p] = 1;
  }
  std::vector<std::size_t> real;
  for (std::size_t j = 1; j < length; ++j)
    if (!is_pad[j]) real.push_back(j);
  if (real.empty()) throw std::invalid_argument("every position after the embedding slot is padding");

  const std::size_t want = context_size(gamma_de, real.size());
  AttentionMaskMatrix m(length);
  for (std::size_t i = 0; i < length; ++i) {
    m.set_visible(i, 0, true);
    std::vector<std::size_t> pool;
    pool.reserve(real.size());
    for (std::size_t j : real)
      if (j != i) pool.push_back(j);
    for (std::size_t j : rng.sample(pool, want)) m.set_visible(i, j, true);
  }
  return m;
}

std::string to_string(CoverageMode mode) {
  switch (mode) {
    case CoverageMode::kMlm15: return "mlm15";
    case CoverageMode::kBasic: return "basic";
    case CoverageMode::kEnhanced: return "enhanced";
  }
  return "?";
}

CoverageMode coverage_mode_from_string(const std::string& s) {
  if (s == "mlm15") return CoverageMode::kMlm15;
  if (s == "basic") return CoverageMode::kBasic;
  if (s == "enhanced") return CoverageMode::kEnhanced;
  throw std::invalid_argument("unknown coverage mode '" + s + "'");
}

CoverageReport& CoverageReport::operator+=(const CoverageReport& other) {
  sentences += other.sentences;
  content_tokens += other.content_tokens;
  target_tokens += other.target_tokens;
  distinct_contexts += other.distinct_contexts;
  return *this;
}

CoverageReport signal_coverage_stats(CoverageMode mode, const text::Batch& batch, double gamma_de,
                                     std::uint64_t seed) {
  CoverageReport rep;
  rep.mode = mode;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& seq = batch.sequences[b];
    const auto content = seq.maskable_positions();
    if (content.empty()) continue;
    ++rep.sentences;
    rep.content_tokens += content.size();
    Rng rng(derive_seed(seed, {b}));
    switch (mode) {
      case CoverageMode::kMlm15: {
        // Every masked token is predicted from the same corrupted sentence.
        rep.target_tokens += mask_for_encoder(seq, kMlmRatio, rng).masked_positions.size();
        rep.distinct_contexts += 1;
        break;
      }
      case CoverageMode::kBasic: {
        rep.target_tokens += mask_for_decoder(seq, gamma_de, rng).masked_positions.size();
        rep.distinct_contexts += 1;
        break;
      }
      case CoverageMode::kEnhanced: {
        std::vector<std::size_t> pads;
        for (std::size_t p = seq.length(); p < batch.length; ++p) pads.push_back(p);
        const auto m = build_attention_mask(batch.length, gamma_de, pads, rng);
        std::set<std::vector<std::size_t>> contexts;
        for (std::size_t p : content) contexts.insert(m.visible_columns(p));
        rep.target_tokens += content.size();
        rep.distinct_contexts += contexts.size();
        break;
      }
    }
  }
  return rep;
}

std::string format_report(const CoverageReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "mode = %s\nsentences = %zu\ncontent_tokens = %zu\ntarget_tokens = %zu\n"
                "coverage = %.6f\ncontexts_per_sentence = %.6f\n",
                to_string(r.mode).c_str(), r.sentences, r.content_tokens, r.target_tokens,
                r.coverage(), r.contexts_per_sentence());
  return buf;
}

}  // namespace retromae::masking
