#pragma once

#include <cstddef>
#include <string>

#include "timemae/dataset.hpp"
#include "timemae/layers.hpp"
#include "timemae/tensor.hpp"

TIMEMAE_BEGIN_NAMESPACE

struct SliceConfig {
  std::size_t sigma = 8;     // window size in time steps
  std::size_t d_model = 64;  // embedding width

  /// S = ceil(T / sigma).
  std::size_t num_slices(std::size_t length) const;
  void validate() const;
};

/// Sub-series embeddings [B, S, d].
struct EmbeddedSequence {
  Tensor z;
  bool positions_added = false;
};

/// Shared slice projection (a conv with kernel = stride = sigma) and the
/// learned per-index position table.
struct FeaturizerParams {
  Tensor conv_weight;  // [d, m, sigma]
  Tensor conv_bias;    // [d]
  Tensor positions;    // [S_max, d]

  static FeaturizerParams init(const SliceConfig& cfg, std::size_t channels, std::size_t max_slices,
                               Rng& rng);
  std::size_t sigma() const { return conv_weight.dim(2); }
  std::size_t channels() const { return conv_weight.dim(1); }
  std::size_t d_model() const { return conv_weight.dim(0); }
  std::size_t max_slices() const { return positions.dim(0); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".conv_weight", conv_weight);
    f(prefix + ".conv_bias", conv_bias);
    f(prefix + ".positions", positions);
  }
};

/// Zero-pads T up to S*sigma and cuts non-overlapping windows: [B, S, sigma, m].
Tensor pad_and_slice(const TimeSeriesBatch& batch, const SliceConfig& cfg);

/// Inverse of pad_and_slice truncated to `length`; returns [B, T, m] values.
std::vector<float> unslice(const Tensor& slices, std::size_t length);

/// Projects every slice with the same affine map R^{sigma*m} -> R^d.
EmbeddedSequence conv_project(const Tensor& slices, const FeaturizerParams& params);

/// Z[b, s, :] += P[s, :]. Throws ContractError if positions were already added
/// or the sequence is longer than the table.
EmbeddedSequence add_positions(const EmbeddedSequence& seq, const Tensor& positions);

/// pad_and_slice + conv_project (no positions).
EmbeddedSequence featurize(const TimeSeriesBatch& batch, const FeaturizerParams& params);

TIMEMAE_END_NAMESPACE
