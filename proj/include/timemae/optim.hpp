#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "timemae/layers.hpp"

TIMEMAE_BEGIN_NAMESPACE

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers for a fixed list of parameters.
struct AdamMoments {
  std::vector<std::vector<Real>> first;
  std::vector<std::vector<Real>> second;
  std::size_t step = 0;

  static AdamMoments zeros_like(std::span<const Tensor> params);
};

/// One bias-corrected Adam update, no weight decay. Parameters without an
/// accumulated gradient are skipped (moments untouched).
void adam_step(std::span<Tensor> params, AdamMoments& moments, const AdamConfig& cfg);

class Adam {
 public:
  Adam(const ParamList& params, AdamConfig cfg);

  void zero_grad();
  void step();
  /// Rescales gradients so their global L2 norm is at most max_norm; returns
  /// the norm before clipping.
  double clip_grad_norm(double max_norm);

  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamConfig& config() const { return cfg_; }
  const AdamMoments& moments() const { return moments_; }
  std::span<const Tensor> params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamMoments moments_;
  AdamConfig cfg_;
};

TIMEMAE_END_NAMESPACE
