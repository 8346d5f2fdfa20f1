#include "timemae/layers.hpp"

#include <cmath>

TIMEMAE_BEGIN_NAMESPACE

Tensor init_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<Real> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<Real>(rng.uniform(-bound, bound));
  return Tensor::from(shape, std::move(data), true);
}

Tensor init_normal(const Shape& shape, double stddev, Rng& rng) {
  std::vector<Real> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<Real>(rng.normal(0.0, stddev));
  return Tensor::from(shape, std::move(data), true);
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  return {init_uniform({in, out}, in, rng), Tensor::zeros({out}, true)};
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return {Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
}

LayerNormParams LayerNormParams::init(std::size_t d) {
  return {Tensor::full({d}, Real(1), true), Tensor::zeros({d}, true)};
}

TIMEMAE_END_NAMESPACE
