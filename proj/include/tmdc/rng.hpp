// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "tmdc/tensor.hpp"

namespace tmdc {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives a child seed from a parent seed and a path of stream tags.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243F6A8885A308D3ULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

using Rng = std::mt19937_64;

enum class Mode { Train, Eval };

/// Source of the stochastic draws used in a forward pass (reparameterization
/// noise, dropout masks). Train-mode draws come from a seeded stream, so
/// re-creating the source with the same seed replays the same draws; eval
/// mode yields eps = 0 and no dropout.
class NoiseSource {
 public:
  static NoiseSource eval() { return NoiseSource(); }
  explicit NoiseSource(std::uint64_t seed) : mode_(Mode::Train), rng_(seed) {}

  Mode mode() const { return mode_; }

  Tensor gaussian(const Shape& shape) {
    std::vector<double> v(numel(shape), 0.0);
    if (mode_ == Mode::Train) {
      std::normal_distribution<double> n(0.0, 1.0);
      for (double& x : v) x = n(rng_);
    }
    return Tensor(shape, std::move(v));
  }

  /// Bernoulli(1 - rate) keep mask (0/1 entries).
  Tensor keep_mask(const Shape& shape, double rate) {
    std::vector<double> v(numel(shape), 1.0);
    if (mode_ == Mode::Train && rate > 0.0) {
      std::bernoulli_distribution keep(1.0 - rate);
      for (double& x : v) x = keep(rng_) ? 1.0 : 0.0;
    }
    return Tensor(shape, std::move(v));
  }

 private:
  NoiseSource() = default;
  Mode mode_ = Mode::Eval;
  Rng rng_;
};

}  // namespace tmdc
