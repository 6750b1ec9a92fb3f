// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace retromae::text {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr std::size_t kNumReserved = 5;

bool is_special(TokenId id);

/// Lower-cases ASCII, splits on whitespace, and emits each ASCII punctuation
/// character as its own token.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  /// Keeps the `max_size - 5` most frequent tokens; ties go to the
  /// lexicographically smaller token.
  static Vocabulary build(std::span<const std::string> lines, std::size_t max_size);
  /// From an id-ordered token list whose first five entries are the reserved
  /// tokens.
  static Vocabulary from_tokens(std::vector<std::string> tokens);
  static Vocabulary load(const std::filesystem::path& path);

  void save(const std::filesystem::path& path) const;

  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// [CLS] tokens... [SEP], no padding.
struct TokenSequence {
  std::vector<TokenId> ids;

  std::size_t length() const { return ids.size(); }
  /// Positions that masking may touch (everything except [CLS]/[SEP]/[PAD]).
  std::vector<std::size_t> maskable_positions() const;
};

TokenSequence encode_text(std::string_view text, const Vocabulary& vocab, std::size_t max_len);
/// Content tokens, without [CLS]/[SEP].
std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab);

/// Sequences right-padded with [PAD] to a shared length.
struct Batch {
  std::vector<TokenSequence> sequences;
  std::vector<std::size_t> source_index;  // position in the corpus store
  std::size_t length = 0;

  std::size_t size() const { return sequences.size(); }
  /// Row-major [size x length] ids with [PAD] fill.
  std::vector<TokenId> padded_ids() const;
  bool is_pad(std::size_t item, std::size_t pos) const {
    return pos >= sequences[item].length();
  }
};

Batch make_batch(std::span<const TokenSequence> store, std::span<const std::size_t> indices);

/// Deterministic shuffled epochs over a sequence store. Batch `g` (counting
/// across epochs) depends only on the seed and `g`, so a stream can be
/// resumed anywhere with seek().
class BatchIterator {
 public:
  BatchIterator(std::span<const TokenSequence> store, std::size_t batch_size, std::uint64_t seed);

  Batch next();
  void seek(std::size_t global_batch);
  std::size_t position() const { return position_; }
  std::size_t batches_per_epoch() const;
  std::size_t epoch() const { return position_ / batches_per_epoch(); }

  /// Corpus indices of epoch `e` in visit order.
  std::vector<std::size_t> epoch_order(std::size_t e) const;

 private:
  std::span<const TokenSequence> store_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t position_ = 0;
  std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order_;
};

/// Reads one sentence per line, dropping blank lines.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace retromae::text
