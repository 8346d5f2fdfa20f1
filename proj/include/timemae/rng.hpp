#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

#include "timemae/precision.hpp"

TIMEMAE_BEGIN_NAMESPACE

/// Seeded random stream. Every stochastic op (init, dropout, Gumbel noise,
/// masking, shuffling) draws from an Rng handed to it explicitly.
///
/// derive() builds a child stream from the *seed* of the parent, not from its
/// current state, so substreams keyed by (epoch, example) or by component name
/// are reproducible regardless of the order in which they are consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  Rng derive(std::uint64_t stream) const;
  Rng derive(std::string_view tag) const;
  Rng derive(std::string_view tag, std::uint64_t a) const { return derive(tag).derive(a); }
  Rng derive(std::string_view tag, std::uint64_t a, std::uint64_t b) const {
    return derive(tag).derive(a).derive(b);
  }

  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on the open interval (0, 1); safe to feed into log(-log(a)).
  double uniform_open();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  /// Standard Gumbel sample -log(-log(a)), a ~ U(0, 1).
  double gumbel();

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

TIMEMAE_END_NAMESPACE
