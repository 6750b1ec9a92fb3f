// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the test binaries.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "retromae/rng.hpp"

namespace retromae::testing {

/// Sentences of uniformly random words "w0".."w<pool-1>" with a word count
/// drawn uniformly from [min_words, max_words].
inline std::vector<std::string> synthetic_corpus(std::size_t n, std::uint64_t seed,
                                                 std::size_t pool = 200, std::size_t min_words = 4,
                                                 std::size_t max_words = 14) {
  Rng rng(seed);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t words = min_words + rng.below(max_words - min_words + 1);
    std::string line;
    for (std::size_t w = 0; w < words; ++w) {
      if (w) line += ' ';
      line += "w" + std::to_string(rng.below(pool));
    }
    out.push_back(line);
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("retromae-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace retromae::testing
