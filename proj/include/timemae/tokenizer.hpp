#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "timemae/layers.hpp"
#include "timemae/rng.hpp"
#include "timemae/tensor.hpp"

TIMEMAE_BEGIN_NAMESPACE

/// Learnable codeword matrix C [K, d]; the row indices are the vocabulary.
struct Codebook {
  Tensor codes;

  /// Rows drawn from N(0, 1/d).
  static Codebook init(std::size_t size, std::size_t d_model, Rng& rng);
  std::size_t size() const { return codes.dim(0); }
  std::size_t width() const { return codes.dim(1); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".codes", codes);
  }
};

/// Inner-product relevance: scores[i, k] = <z_i, c_k>. [N, d] x [K, d] -> [N, K].
Tensor similarity(const Tensor& z_rows, const Tensor& codes);

/// Row-wise argmax; ties go to the lowest index.
std::vector<std::size_t> assign_hard(const Tensor& scores);

/// Standard Gumbel noise -log(-log(a)), a ~ U(0, 1), of the given shape.
Tensor sample_gumbel(const Shape& shape, Rng& rng);

/// Tempered softmax of (scores + noise) / tau. An undefined `noise` means n = 0.
Tensor gumbel_soft(const Tensor& scores, Real tau, const Tensor& noise);
/// Same with noise drawn from a stream seeded by `noise_seed`.
Tensor gumbel_soft(const Tensor& scores, Real tau, std::uint64_t noise_seed);

Tensor one_hot(std::span<const std::size_t> indices, std::size_t classes);

/// q_hat = q_soft + sg(q_hard - q_soft): forward equals q_hard bitwise,
/// gradient reaches q_soft unchanged.
Tensor ste_combine(const Tensor& q_soft, const Tensor& q_hard);

struct QuantizeOptions {
  Real tau = Real(1);
  /// Add Gumbel noise to the scores (training). Off means n = 0.
  bool noise = true;
  /// Take the hard codeword from the noisy scores (Gumbel-max sample) rather
  /// than from the clean similarity argmax.
  bool hard_from_noisy = false;
};

struct QuantizeResult {
  std::vector<std::size_t> indices;        // chosen codeword per row
  std::vector<std::size_t> canonical;      // noiseless argmax per row
  Tensor targets;                          // one-hot of `indices`, constant
  Tensor soft;                             // tempered softmax, on the tape
  Tensor q_hat;                            // straight-through assignment
  std::vector<std::size_t> usage_counts;   // of `canonical`, per codeword, sums to N
};

/// Full assignment path for [N, d] rows against the codebook.
QuantizeResult quantize(const Tensor& z_rows, const Codebook& codebook, const QuantizeOptions& options,
                        Rng& rng);

/// exp(entropy) of the empirical codeword distribution, in [1, K].
double usage_perplexity(std::span<const std::size_t> counts);

/// Histogram of indices over `classes` bins.
std::vector<std::size_t> count_usage(std::span<const std::size_t> indices, std::size_t classes);

TIMEMAE_END_NAMESPACE
