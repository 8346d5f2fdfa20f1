#include "timemae/optim.hpp"

#include <cmath>

TIMEMAE_BEGIN_NAMESPACE

AdamMoments AdamMoments::zeros_like(std::span<const Tensor> params) {
  AdamMoments m;
  for (const auto& p : params) {
    m.first.emplace_back(p.numel(), Real(0));
    m.second.emplace_back(p.numel(), Real(0));
  }
  return m;
}

void adam_step(std::span<Tensor> params, AdamMoments& moments, const AdamConfig& cfg) {
  if (moments.first.size() != params.size()) throw ContractError("Adam moments do not match parameter list");
  ++moments.step;
  const double t = static_cast<double>(moments.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = moments.first[i];
    auto& v = moments.second[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      double gj = g[j];
      m[j] = static_cast<Real>(cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj);
      v[j] = static_cast<Real>(cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj);
      double mhat = m[j] / c1;
      double vhat = v[j] / c2;
      w[j] = static_cast<Real>(w[j] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

Adam::Adam(const ParamList& params, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& [name, t] : params) params_.push_back(t);
  moments_ = AdamMoments::zeros_like(params_);
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() { adam_step(params_, moments_, cfg_); }

double Adam::clip_grad_norm(double max_norm) {
  double total = 0;
  for (const auto& p : params_) {
    for (auto g : p.grad()) total += static_cast<double>(g) * g;
  }
  double norm = std::sqrt(total);
  if (max_norm > 0 && norm > max_norm) {
    double scale = max_norm / (norm + 1e-12);
    for (auto& p : params_) {
      auto& buf = p.node()->grad;
      for (auto& g : buf) g = static_cast<Real>(g * scale);
    }
  }
  return norm;
}

TIMEMAE_END_NAMESPACE
