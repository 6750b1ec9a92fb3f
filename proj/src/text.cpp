// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "retromae/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

#include "retromae/rng.hpp"

namespace retromae::text {

namespace {

constexpr const char* kReserved[kNumReserved] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[M]"};

bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_ascii_punct(unsigned char c) {
  return c < 128 && ((c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
                     (c >= 123 && c <= 126));
}

}  // namespace

bool is_special(TokenId id) { return id >= 0 && static_cast<std::size_t>(id) < kNumReserved; }

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_ascii_space(c)) {
      flush();
    } else if (is_ascii_punct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

Vocabulary Vocabulary::build(std::span<const std::string> lines, std::size_t max_size) {
  if (max_size < kNumReserved + 1) {
    throw std::invalid_argument("vocabulary max size must be at least " +
                                std::to_string(kNumReserved + 1));
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& line : lines)
    for (auto& tok : tokenize(line)) ++counts[tok];
  if (counts.empty()) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), max_size - kNumReserved);

  std::vector<std::string> tokens(std::begin(kReserved), std::end(kReserved));
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(ranked[i].first);
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kNumReserved + 1) {
    throw std::invalid_argument("vocabulary needs at least one non-reserved token");
  }
  for (std::size_t i = 0; i < kNumReserved; ++i) {
    if (tokens[i] != kReserved[i]) {
      throw std::invalid_argument("vocabulary entry " + std::to_string(i) + " must be " +
                                  kReserved[i] + ", found '" + tokens[i] + "'");
    }
  }
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], static_cast<TokenId>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary token '" + v.tokens_[i] + "'");
    }
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::size_t> TokenSequence::maskable_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] != kCls && ids[i] != kSep && ids[i] != kPad) out.push_back(i);
  return out;
}

TokenSequence encode_text(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 2) throw std::invalid_argument("max_len must leave room for [CLS] and [SEP]");
  TokenSequence seq;
  seq.ids.push_back(kCls);
  for (const auto& tok : tokenize(text)) {
    if (seq.ids.size() == max_len - 1) break;
    seq.ids.push_back(vocab.id(tok));
  }
  seq.ids.push_back(kSep);
  return seq;
}

std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (TokenId id : seq.ids)
    if (id != kCls && id != kSep && id != kPad) out.push_back(vocab.token(id));
  return out;
}

std::vector<TokenId> Batch::padded_ids() const {
  std::vector<TokenId> ids(size() * length, kPad);
  for (std::size_t b = 0; b < size(); ++b)
    std::copy(sequences[b].ids.begin(), sequences[b].ids.end(), ids.begin() + b * length);
  return ids;
}

Batch make_batch(std::span<const TokenSequence> store, std::span<const std::size_t> indices) {
  Batch batch;
  for (std::size_t i : indices) {
    batch.sequences.push_back(store[i]);
    batch.source_index.push_back(i);
    batch.length = std::max(batch.length, store[i].length());
  }
  return batch;
}

BatchIterator::BatchIterator(std::span<const TokenSequence> store, std::size_t batch_size,
                             std::uint64_t seed)
    : store_(store), batch_size_(batch_size), seed_(seed) {
  if (store.empty()) throw std::invalid_argument("batch iteration over an empty store");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
}

std::size_t BatchIterator::batches_per_epoch() const {
  return (store_.size() + batch_size_ - 1) / batch_size_;
}

std::vector<std::size_t> BatchIterator::epoch_order(std::size_t e) const {
  std::vector<std::size_t> order(store_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed_, {0x5348, e}));
  rng.shuffle(order);
  return order;
}

void BatchIterator::seek(std::size_t global_batch) { position_ = global_batch; }

Batch BatchIterator::next() {
  const std::size_t e = epoch();
  if (e != cached_epoch_) {
    order_ = epoch_order(e);
    cached_epoch_ = e;
  }
  const std::size_t begin = (position_ % batches_per_epoch()) * batch_size_;
  const std::size_t end = std::min(begin + batch_size_, order_.size());
  ++position_;
  return make_batch(store_, std::span<const std::size_t>(order_).subspan(begin, end - begin));
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back(line);
  }
  return lines;
}

}  // namespace retromae::text
