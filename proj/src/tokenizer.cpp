#include "timemae/tokenizer.hpp"

#include <cmath>

#include "timemae/ops.hpp"

TIMEMAE_BEGIN_NAMESPACE

Codebook Codebook::init(std::size_t size, std::size_t d_model, Rng& rng) {
  if (size < 2) throw ConfigError("codebook needs at least 2 codewords");
  return {init_normal({size, d_model}, 1.0 / std::sqrt(static_cast<double>(d_model)), rng)};
}

Tensor similarity(const Tensor& z_rows, const Tensor& codes) {
  if (z_rows.rank() != 2 || codes.rank() != 2 || z_rows.dim(1) != codes.dim(1)) {
    throw DimensionError("similarity needs [N, d] rows and [K, d] codewords, got " + shape_str(z_rows.shape()) +
                         " and " + shape_str(codes.shape()));
  }
  return matmul(z_rows, transpose_last(codes));
}

std::vector<std::size_t> assign_hard(const Tensor& scores) {
  if (scores.rank() != 2) throw DimensionError("assign_hard expects [N, K] scores");
  std::size_t N = scores.dim(0), K = scores.dim(1);
  auto s = scores.data();
  std::vector<std::size_t> out(N);
  for (std::size_t i = 0; i < N; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (s[i * K + k] > s[i * K + best]) best = k;
    }
    out[i] = best;
  }
  return out;
}

Tensor sample_gumbel(const Shape& shape, Rng& rng) {
  std::vector<Real> n(shape_numel(shape));
  for (auto& v : n) v = static_cast<Real>(rng.gumbel());
  return Tensor::from(shape, std::move(n));
}

Tensor gumbel_soft(const Tensor& scores, Real tau, const Tensor& noise) {
  if (!(tau > 0)) throw ConfigError("temperature tau must be positive");
  Tensor logits = noise.defined() ? add(scores, noise) : scores;
  return softmax(mul_scalar(logits, Real(1) / tau));
}

Tensor gumbel_soft(const Tensor& scores, Real tau, std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  return gumbel_soft(scores, tau, sample_gumbel(scores.shape(), rng));
}

Tensor one_hot(std::span<const std::size_t> indices, std::size_t classes) {
  std::vector<Real> data(indices.size() * classes, Real(0));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= classes) throw ContractError("one_hot index out of range");
    data[i * classes + indices[i]] = Real(1);
  }
  return Tensor::from({indices.size(), classes}, std::move(data));
}

Tensor ste_combine(const Tensor& q_soft, const Tensor& q_hard) { return straight_through(q_hard, q_soft); }

std::vector<std::size_t> count_usage(std::span<const std::size_t> indices, std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (auto i : indices) ++counts.at(i);
  return counts;
}

QuantizeResult quantize(const Tensor& z_rows, const Codebook& codebook, const QuantizeOptions& options,
                        Rng& rng) {
  Tensor scores = similarity(z_rows, codebook.codes);
  Tensor noise = options.noise ? sample_gumbel(scores.shape(), rng) : Tensor();
  QuantizeResult r;
  r.canonical = assign_hard(scores);
  if (options.hard_from_noisy && noise.defined()) {
    Tensor noisy = Tensor::from(scores.shape(), std::vector<Real>(scores.data().begin(), scores.data().end()));
    auto nd = noisy.mutable_data();
    auto gd = noise.data();
    for (std::size_t i = 0; i < nd.size(); ++i) nd[i] += gd[i];
    r.indices = assign_hard(noisy);
  } else {
    r.indices = r.canonical;
  }
  r.targets = one_hot(r.indices, codebook.size());
  r.soft = gumbel_soft(scores, options.tau, noise);
  r.q_hat = ste_combine(r.soft, r.targets);
  r.usage_counts = count_usage(r.canonical, codebook.size());
  return r;
}

double usage_perplexity(std::span<const std::size_t> counts) {
  double total = 0;
  for (auto c : counts) total += static_cast<double>(c);
  if (total <= 0) throw ContractError("usage_perplexity needs a positive total count");
  double entropy = 0;
  for (auto c : counts) {
    if (c == 0) continue;
    double p = static_cast<double>(c) / total;
    entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

TIMEMAE_END_NAMESPACE
