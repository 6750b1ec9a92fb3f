// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "retromae/autodiff.hpp"
#include "retromae/rng.hpp"
#include "retromae/text.hpp"

namespace retromae::masking {

using text::TokenId;
using text::TokenSequence;

/// Round-half-up of ratio * n, at least 1 and at most n (for n > 0).
std::size_t mask_count(double ratio, std::size_t n);

struct MaskedSeq {
  std::vector<TokenId> ids;                  // masked positions hold [M]
  std::vector<std::size_t> masked_positions;  // ascending
  double ratio = 0.0;

  bool is_masked(std::size_t pos) const;
};

struct EncoderMaskedSeq : MaskedSeq {};
struct DecoderMaskedSeq : MaskedSeq {};

/// Replaces mask_count(gamma_en, maskable) uniformly chosen content tokens
/// with [M]. Throws if the sequence has no content token.
EncoderMaskedSeq mask_for_encoder(const TokenSequence& seq, double gamma_en, Rng& rng);
DecoderMaskedSeq mask_for_decoder(const TokenSequence& seq, double gamma_de, Rng& rng);

/// Identity "mask" used at inference.
EncoderMaskedSeq unmasked(const TokenSequence& seq);

/// Position-specific L x L visibility for enhanced decoding. Column 0 (the
/// sentence-embedding slot) is visible to every row, the diagonal is hidden
/// for rows >= 1, pad columns are hidden everywhere, and each row sees
/// context_size(gamma, n) sampled non-pad columns from 1..L-1 other than
/// itself, where n = L - 1 - |pads|.
class AttentionMaskMatrix {
 public:
  AttentionMaskMatrix() = default;
  explicit AttentionMaskMatrix(std::size_t length)
      : length_(length), visible_(length * length, 0) {}

  std::size_t length() const { return length_; }
  bool visible(std::size_t row, std::size_t col) const { return visible_[row * length_ + col]; }
  void set_visible(std::size_t row, std::size_t col, bool v) {
    visible_[row * length_ + col] = v ? 1 : 0;
  }
  std::size_t visible_count(std::size_t row) const;
  std::vector<std::size_t> visible_columns(std::size_t row) const;

  /// 0 for visible, -inf for hidden.
  template <typename T>
  Tensor<T> additive() const {
    Tensor<T> m({length_, length_});
    for (std::size_t i = 0; i < visible_.size(); ++i) m[i] = visible_[i] ? T{0} : ad::kMasked<T>;
    return m;
  }

  bool operator==(const AttentionMaskMatrix&) const = default;

 private:
  std::size_t length_ = 0;
  std::vector<std::uint8_t> visible_;
};

/// Number of sampled context columns per row, before clamping to what is
/// available: round-half-up((1 - gamma_de) * real_len), at least 1.
std::size_t context_size(double gamma_de, std::size_t real_len);

AttentionMaskMatrix build_attention_mask(std::size_t length, double gamma_de,
                                         const std::vector<std::size_t>& pad_positions, Rng& rng);

enum class CoverageMode { kMlm15, kBasic, kEnhanced };

std::string to_string(CoverageMode mode);
CoverageMode coverage_mode_from_string(const std::string& s);

struct CoverageReport {
  CoverageMode mode = CoverageMode::kEnhanced;
  std::size_t sentences = 0;
  std::size_t content_tokens = 0;  // non-special, non-pad positions
  std::size_t target_tokens = 0;   // content positions that carry a loss term
  std::size_t distinct_contexts = 0;

  double coverage() const {
    return content_tokens ? static_cast<double>(target_tokens) / static_cast<double>(content_tokens)
                          : 0.0;
  }
  double contexts_per_sentence() const {
    return sentences ? static_cast<double>(distinct_contexts) / static_cast<double>(sentences) : 0.0;
  }

  CoverageReport& operator+=(const CoverageReport& other);
};

/// Runs the real masking routines over a batch and counts which content
/// tokens contribute to the loss and how many distinct visible contexts are
/// used to reconstruct them. Item b draws from derive_seed(seed, {b}).
CoverageReport signal_coverage_stats(CoverageMode mode, const text::Batch& batch, double gamma_de,
                                     std::uint64_t seed);

/// Flat `key = value` lines.
std::string format_report(const CoverageReport& report);

}  // namespace retromae::masking
