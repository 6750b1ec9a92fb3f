// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "retromae/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace retromae {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument("config key '" + key + "': expected a non-negative integer, got '" +
                                v + "'");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument("config key '" + key + "': expected an unsigned integer, got '" +
                                v + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define COUNT_FIELD(name, member)                                                           \
  Field {                                                                                   \
    name, [](RunConfig& c, const std::string& v) { c.member = parse_count(name, v); },      \
        [](const RunConfig& c) { return std::to_string(c.member); }                         \
  }
#define REAL_FIELD(name, member)                                                            \
  Field {                                                                                   \
    name, [](RunConfig& c, const std::string& v) { c.member = parse_real(name, v); },       \
        [](const RunConfig& c) { return fmt_double(c.member); }                             \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      Field{"mode",
            [](RunConfig& c, const std::string& v) { c.decoder.mode = decode_mode_from_string(v); },
            [](const RunConfig& c) { return to_string(c.decoder.mode); }},
      COUNT_FIELD("decoder_layers", decoder.layers),
      COUNT_FIELD("decoder_heads", decoder.heads),
      COUNT_FIELD("layers", encoder.layers),
      COUNT_FIELD("hidden_dim", encoder.hidden_dim),
      COUNT_FIELD("heads", encoder.heads),
      COUNT_FIELD("ffn_dim", encoder.ffn_dim),
      COUNT_FIELD("max_len", encoder.max_len),
      COUNT_FIELD("vocab_size", encoder.vocab_size),
      REAL_FIELD("gamma_en", train.gamma_en),
      REAL_FIELD("gamma_de", train.gamma_de),
      COUNT_FIELD("epochs", train.epochs),
      COUNT_FIELD("max_steps", train.max_steps),
      COUNT_FIELD("batch_size", train.batch_size),
      REAL_FIELD("learning_rate", train.learning_rate),
      REAL_FIELD("weight_decay", train.weight_decay),
      REAL_FIELD("adam_beta1", train.adam_beta1),
      REAL_FIELD("adam_beta2", train.adam_beta2),
      REAL_FIELD("adam_eps", train.adam_eps),
      COUNT_FIELD("warmup_steps", train.warmup_steps),
      REAL_FIELD("clip_norm", train.clip_norm),
      REAL_FIELD("init_std", train.init_std),
      REAL_FIELD("encoder_mlm_weight", train.encoder_mlm_weight),
      Field{"seed", [](RunConfig& c, const std::string& v) { c.train.seed = parse_u64("seed", v); },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      COUNT_FIELD("log_every", train.log_every),
      COUNT_FIELD("checkpoint_every", train.checkpoint_every),
  };
  return f;
}

#undef COUNT_FIELD
#undef REAL_FIELD

}  // namespace

std::string to_string(DecodeMode mode) { return mode == DecodeMode::kBasic ? "basic" : "enhanced"; }

DecodeMode decode_mode_from_string(const std::string& s) {
  if (s == "basic") return DecodeMode::kBasic;
  if (s == "enhanced") return DecodeMode::kEnhanced;
  throw std::invalid_argument("config key 'mode': expected basic or enhanced, got '" + s + "'");
}

void EncoderConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("config key 'layers': must be at least 1");
  if (heads == 0 || hidden_dim % heads != 0) {
    throw std::invalid_argument("config key 'heads': hidden_dim must be divisible by heads");
  }
  if (ffn_dim == 0) throw std::invalid_argument("config key 'ffn_dim': must be positive");
  if (max_len < 3) throw std::invalid_argument("config key 'max_len': must be at least 3");
  if (vocab_size < 6) throw std::invalid_argument("config key 'vocab_size': must be at least 6");
}

void DecoderConfig::validate(const EncoderConfig& enc) const {
  if (layers < 1) throw std::invalid_argument("config key 'decoder_layers': must be at least 1");
  if (heads == 0 || enc.hidden_dim % heads != 0) {
    throw std::invalid_argument("config key 'decoder_heads': hidden_dim must be divisible by it");
  }
  if (mode == DecodeMode::kEnhanced && layers != 1) {
    throw std::invalid_argument("config key 'decoder_layers': enhanced decoding needs exactly 1");
  }
}

void TrainConfig::validate() const {
  if (!(gamma_en > 0.0 && gamma_en < 1.0)) {
    throw std::invalid_argument("config key 'gamma_en': must lie in (0, 1)");
  }
  if (!(gamma_de > 0.0 && gamma_de < 1.0)) {
    throw std::invalid_argument("config key 'gamma_de': must lie in (0, 1)");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("config key 'learning_rate': must be >= 0");
  }
  if (batch_size == 0) throw std::invalid_argument("config key 'batch_size': must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("config key 'weight_decay': must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) {
    throw std::invalid_argument("config key 'adam_beta1': must lie in [0, 1)");
  }
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw std::invalid_argument("config key 'adam_beta2': must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("config key 'adam_eps': must be > 0");
  if (!(init_std > 0.0)) throw std::invalid_argument("config key 'init_std': must be > 0");
  if (encoder_mlm_weight < 0.0) {
    throw std::invalid_argument("config key 'encoder_mlm_weight': must be >= 0");
  }
  if (log_every == 0) throw std::invalid_argument("config key 'log_every': must be positive");
}

RunConfig RunConfig::full_scale() { return RunConfig{}; }

RunConfig RunConfig::desk() {
  RunConfig c;
  c.encoder = EncoderConfig{2, 64, 4, 256, 128, 2048};
  c.decoder = DecoderConfig{DecodeMode::kEnhanced, 1, 4};
  c.train.batch_size = 16;
  c.train.learning_rate = 1e-3;
  c.train.warmup_steps = 100;
  return c;
}

RunConfig RunConfig::preset(const std::string& name) {
  if (name == "full") return full_scale();
  if (name == "desk") return desk();
  throw std::invalid_argument("unknown preset '" + name + "' (expected full or desk)");
}

void RunConfig::validate() const {
  encoder.validate();
  decoder.validate(encoder);
  train.validate();
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(*this, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> m;
  for (const auto& f : fields()) m[f.key] = f.get(*this);
  return m;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

RunConfig RunConfig::parse(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
    }
    base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

RunConfig RunConfig::load(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), std::move(base));
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

}  // namespace retromae
