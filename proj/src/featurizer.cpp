#include "timemae/featurizer.hpp"

#include "timemae/ops.hpp"

TIMEMAE_BEGIN_NAMESPACE

std::size_t SliceConfig::num_slices(std::size_t length) const {
  validate();
  return (length + sigma - 1) / sigma;
}

void SliceConfig::validate() const {
  if (sigma == 0) throw ConfigError("slice window sigma must be >= 1");
  if (d_model == 0) throw ConfigError("d_model must be >= 1");
}

FeaturizerParams FeaturizerParams::init(const SliceConfig& cfg, std::size_t channels,
                                        std::size_t max_slices, Rng& rng) {
  cfg.validate();
  FeaturizerParams p;
  p.conv_weight = init_uniform({cfg.d_model, channels, cfg.sigma}, channels * cfg.sigma, rng);
  p.conv_bias = Tensor::zeros({cfg.d_model}, true);
  p.positions = init_uniform({max_slices, cfg.d_model}, cfg.d_model, rng);
  return p;
}

Tensor pad_and_slice(const TimeSeriesBatch& batch, const SliceConfig& cfg) {
  if (batch.length == 0) throw ContractError("pad_and_slice needs T >= 1");
  std::size_t S = cfg.num_slices(batch.length);
  std::size_t B = batch.n_examples, m = batch.channels, sigma = cfg.sigma;
  std::vector<Real> out(B * S * sigma * m, Real(0));
  // [B, S, sigma, m] is the zero-padded [B, S*sigma, m] series, reinterpreted.
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < batch.length; ++t) {
      for (std::size_t c = 0; c < m; ++c) {
        out[(b * S * sigma + t) * m + c] = static_cast<Real>(batch.at(b, t, c));
      }
    }
  }
  return Tensor::from({B, S, sigma, m}, std::move(out));
}

std::vector<float> unslice(const Tensor& slices, std::size_t length) {
  if (slices.rank() != 4) throw DimensionError("unslice expects [B, S, sigma, m], got " + shape_str(slices.shape()));
  std::size_t B = slices.dim(0), S = slices.dim(1), sigma = slices.dim(2), m = slices.dim(3);
  if (length > S * sigma) throw ContractError("unslice length exceeds S * sigma");
  auto d = slices.data();
  std::vector<float> out(B * length * m);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < length; ++t) {
      for (std::size_t c = 0; c < m; ++c) {
        out[(b * length + t) * m + c] = static_cast<float>(d[(b * S * sigma + t) * m + c]);
      }
    }
  }
  return out;
}

EmbeddedSequence conv_project(const Tensor& slices, const FeaturizerParams& params) {
  if (slices.rank() != 4) {
    throw DimensionError("conv_project expects slices [B, S, sigma, m], got " + shape_str(slices.shape()));
  }
  std::size_t B = slices.dim(0), S = slices.dim(1), sigma = slices.dim(2), m = slices.dim(3);
  if (sigma != params.sigma() || m != params.channels()) {
    throw DimensionError("slices " + shape_str(slices.shape()) + " do not match projection weight " +
                         shape_str(params.conv_weight.shape()));
  }
  Tensor series = reshape(slices, {B, S * sigma, m});
  return {conv1d(series, params.conv_weight, params.conv_bias, sigma), false};
}

EmbeddedSequence add_positions(const EmbeddedSequence& seq, const Tensor& positions) {
  if (seq.positions_added) throw ContractError("positional embeddings were already added");
  if (seq.z.rank() != 3) throw DimensionError("add_positions expects [B, S, d], got " + shape_str(seq.z.shape()));
  std::size_t S = seq.z.dim(1);
  if (positions.rank() != 2 || positions.dim(1) != seq.z.dim(2)) {
    throw DimensionError("position table " + shape_str(positions.shape()) + " does not match " +
                         shape_str(seq.z.shape()));
  }
  if (S > positions.dim(0)) {
    throw ContractError("sequence of " + std::to_string(S) + " slices exceeds the position table (" +
                        std::to_string(positions.dim(0)) + " rows)");
  }
  Tensor rows = S == positions.dim(0) ? positions : slice(positions, 0, 0, S);
  return {add(seq.z, rows), true};
}

EmbeddedSequence featurize(const TimeSeriesBatch& batch, const FeaturizerParams& params) {
  SliceConfig cfg{params.sigma(), params.d_model()};
  if (batch.channels != params.channels()) {
    throw CompatibilityError("data has " + std::to_string(batch.channels) + " channels, model expects " +
                             std::to_string(params.channels()));
  }
  return conv_project(pad_and_slice(batch, cfg), params);
}

TIMEMAE_END_NAMESPACE
