// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "retromae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace retromae::checkpoint {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "retromae-checkpoint";
constexpr int kVersion = 1;

template <typename State>
auto tensor_table(State& s) {
  std::vector<std::pair<std::string, decltype(&s.params.word_emb.value)>> out;
  auto params = s.params.all();
  for (auto* p : params) out.emplace_back(p->name, &p->value);
  for (std::size_t i = 0; i < params.size(); ++i)
    out.emplace_back("adam.m." + params[i]->name, &s.moments[i].m);
  for (std::size_t i = 0; i < params.size(); ++i)
    out.emplace_back("adam.v." + params[i]->name, &s.moments[i].v);
  return out;
}

void append_f32_le(std::string& out, const Tensor<float>& t) {
  const std::size_t start = out.size();
  out.resize(start + t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(t[i]);
    for (int b = 0; b < 4; ++b) out[start + i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
}

void read_f32_le(const char* src, Tensor<float>& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(src[i * 4 + b])) << (8 * b);
    t[i] = std::bit_cast<float>(bits);
  }
}

std::string dims(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s;
}

Shape parse_shape(const std::string& s) {
  Shape shape;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto x = s.find('x', pos);
    const std::string part = s.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
    shape.push_back(std::stoull(part));
    if (x == std::string::npos) break;
    pos = x + 1;
  }
  return shape;
}

[[noreturn]] void corrupt(const std::string& why) {
  throw std::runtime_error("malformed checkpoint: " + why);
}

}  // namespace

std::string serialize(const training::TrainState& state) {
  auto& s = const_cast<training::TrainState&>(state);
  std::string payload;
  std::ostringstream manifest;
  manifest << "[config]\n" << s.config.to_text();
  manifest << "[state]\nstep = " << s.step << "\nvocab = " << s.vocab_file << "\n";
  manifest << "[tensors]\n";
  for (const auto& [name, tensor] : tensor_table(s)) {
    manifest << name << " f32 " << dims(tensor->shape()) << " " << payload.size() << " " << tensor->size() * 4 << "\n";
    append_f32_le(payload, *tensor);
  }
  const std::string m = manifest.str();
  return std::string(kMagic) + " " + std::to_string(kVersion) + " " + std::to_string(m.size()) +
         "\n" + m + payload;
}

training::TrainState deserialize(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) corrupt("missing header");
  std::istringstream header(bytes.substr(0, nl));
  std::string magic;
  int version = 0;
  std::size_t manifest_size = 0;
  if (!(header >> magic >> version >> manifest_size) || magic != kMagic) corrupt("bad header");
  if (version != kVersion) corrupt("unsupported version " + std::to_string(version));
  if (nl + 1 + manifest_size > bytes.size()) corrupt("truncated manifest");
  const std::string manifest = bytes.substr(nl + 1, manifest_size);
  const char* payload = bytes.data() + nl + 1 + manifest_size;
  const std::size_t payload_size = bytes.size() - (nl + 1 + manifest_size);

  std::istringstream in(manifest);
  std::string line, section, config_text;
  std::size_t step = 0;
  std::string vocab_file;
  struct Entry {
    Shape shape;
    std::size_t offset, nbytes;
  };
  std::vector<std::pair<std::string, Entry>> entries;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line;
      continue;
    }
    if (section == "[config]") {
      config_text += line + "\n";
    } else if (section == "[state]") {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) corrupt("bad state line '" + line + "'");
      const std::string key = line.substr(0, eq), value = line.substr(eq + 3);
      if (key == "step") step = std::stoull(value);
      else if (key == "vocab") vocab_file = value;
      else corrupt("unknown state key '" + key + "'");
    } else if (section == "[tensors]") {
      std::istringstream ls(line);
      std::string name, dtype, shape;
      Entry e{};
      if (!(ls >> name >> dtype >> shape >> e.offset >> e.nbytes)) corrupt("bad tensor line");
      if (dtype != "f32") corrupt("unsupported dtype " + dtype);
      e.shape = parse_shape(shape);
      entries.emplace_back(name, e);
    } else {
      corrupt("content outside a section");
    }
  }

  const RunConfig config = RunConfig::parse(config_text, RunConfig{});
  training::TrainState s = training::TrainState::fresh(config);
  s.step = step;
  s.vocab_file = vocab_file;
  auto table = tensor_table(s);
  if (table.size() != entries.size()) {
    corrupt("expected " + std::to_string(table.size()) + " tensors, found " +
            std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& [name, e] = entries[i];
    if (name != table[i].first) corrupt("tensor " + std::to_string(i) + " is '" + name + "', expected '" + table[i].first + "'");
    if (e.shape != table[i].second->shape()) corrupt("shape mismatch for " + name);
    if (e.nbytes != table[i].second->size() * 4 || e.offset + e.nbytes > payload_size) {
      corrupt("payload bounds for " + name);
    }
    read_f32_le(payload + e.offset, *table[i].second);
  }
  return s;
}

void save(const training::TrainState& state, const fs::path& path) {
  const std::string bytes = serialize(state);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for checkpoint " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

training::TrainState load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize(ss.str());
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace retromae::checkpoint
