// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace retromae {

enum class DecodeMode { kBasic, kEnhanced };

std::string to_string(DecodeMode mode);
DecodeMode decode_mode_from_string(const std::string& s);

struct EncoderConfig {
  std::size_t layers = 12;
  std::size_t hidden_dim = 768;
  std::size_t heads = 12;
  std::size_t ffn_dim = 3072;
  std::size_t max_len = 512;
  std::size_t vocab_size = 30522;

  std::size_t head_dim() const { return hidden_dim / heads; }
  void validate() const;
};

/// Width and FFN size are shared with the encoder.
struct DecoderConfig {
  DecodeMode mode = DecodeMode::kEnhanced;
  std::size_t layers = 1;
  std::size_t heads = 12;

  void validate(const EncoderConfig& enc) const;
};

struct TrainConfig {
  double gamma_en = 0.15;
  double gamma_de = 0.5;
  std::size_t epochs = 8;
  std::size_t max_steps = 0;  // 0: run `epochs` full passes
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t warmup_steps = 0;
  double clip_norm = 1.0;  // <= 0 disables clipping
  double init_std = 0.02;
  double encoder_mlm_weight = 0.0;
  std::uint64_t seed = 42;
  std::size_t log_every = 1;
  std::size_t checkpoint_every = 0;  // 0: only at the end

  void validate() const;
};

struct RunConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  TrainConfig train;

  /// BERT-base encoder, one-layer enhanced decoder, AdamW at 1e-4.
  static RunConfig full_scale();
  /// Two-layer, 64-wide model that trains in seconds on one core.
  static RunConfig desk();
  static RunConfig preset(const std::string& name);

  void validate() const;

  /// Applies one `key = value` assignment. Throws std::invalid_argument naming
  /// the key when it is unknown or its value does not parse.
  void set(const std::string& key, const std::string& value);

  /// Every key in a fixed order, values formatted to round-trip exactly.
  std::map<std::string, std::string> to_map() const;
  std::string to_text() const;

  /// Starts from `base` and applies each assignment in the file.
  static RunConfig parse(const std::string& text, RunConfig base);
  static RunConfig load(const std::filesystem::path& path, RunConfig base);

  bool operator==(const RunConfig& o) const { return to_text() == o.to_text(); }
};

/// Ordered key list used by to_text() and --help.
const std::vector<std::string>& config_keys();

}  // namespace retromae
