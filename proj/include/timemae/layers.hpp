#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "timemae/ops.hpp"
#include "timemae/rng.hpp"
#include "timemae/tensor.hpp"

TIMEMAE_BEGIN_NAMESPACE

/// Parameter tensor with its checkpoint name.
using NamedTensor = std::pair<std::string, Tensor>;
using ParamList = std::vector<NamedTensor>;

/// Leaf of `shape` filled from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), requires_grad set.
Tensor init_uniform(const Shape& shape, std::size_t fan_in, Rng& rng);
Tensor init_normal(const Shape& shape, double stddev, Rng& rng);

/// y = x W + b with W stored [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  static Linear zeros(std::size_t in, std::size_t out);
  Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams init(std::size_t d);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
};

/// Named handles to every tensor a parameter pack exposes through visit().
/// The handles alias the pack's storage.
template <class Pack>
ParamList collect_params(const Pack& pack, const std::string& prefix) {
  ParamList out;
  const_cast<Pack&>(pack).visit(prefix, [&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

/// Copy of a parameter pack whose tensors share no storage with the original.
template <class Pack>
Pack deep_copy(const Pack& pack) {
  Pack copy = pack;
  copy.visit("", [](const std::string&, Tensor& t) { t = t.clone(); });
  return copy;
}

TIMEMAE_END_NAMESPACE
