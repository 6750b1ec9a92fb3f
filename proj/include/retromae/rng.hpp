// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace retromae {

std::uint64_t splitmix64(std::uint64_t x);

/// Mixes a base seed with any number of stream coordinates (step, item,
/// purpose...). Distinct coordinate tuples give unrelated streams.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> coords);

/// mt19937_64 plus distribution code written out by hand, so draws are the
/// same on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Uniform double in [0, 1).
  double uniform();
  double normal();
  /// Standard normal resampled until |z| <= 2.
  double truncated_normal();

  /// k distinct elements of `pool` chosen uniformly, in draw order.
  template <typename I>
  std::vector<I> sample(std::vector<I> pool, std::size_t k) {
    if (k > pool.size()) k = pool.size();
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

  template <typename I>
  void shuffle(std::vector<I>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace retromae
