#include "timemae/encoder.hpp"

#include <cmath>

#include "timemae/ops.hpp"

TIMEMAE_BEGIN_NAMESPACE

void EncoderConfig::validate() const {
  if (d_model == 0 || heads == 0) throw ConfigError("encoder width and head count must be positive");
  if (d_model % heads != 0) {
    throw DimensionError("d_model " + std::to_string(d_model) + " is not divisible by " +
                         std::to_string(heads) + " heads");
  }
  if (ff_dim == 0) throw ConfigError("feed-forward width must be positive");
  if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must lie in [0, 1)");
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  p.config = cfg;
  std::size_t d = cfg.d_model;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    BlockParams b;
    b.norm1 = LayerNormParams::init(d);
    b.attention.query = Linear::init(d, d, rng);
    b.attention.key = Linear::init(d, d, rng);
    b.attention.value = Linear::init(d, d, rng);
    b.attention.output = Linear::init(d, d, rng);
    b.norm2 = LayerNormParams::init(d);
    b.ff1 = Linear::init(d, cfg.ff_dim, rng);
    b.ff2 = Linear::init(cfg.ff_dim, d, rng);
    p.blocks.push_back(std::move(b));
  }
  p.final_norm = LayerNormParams::init(d);
  return p;
}

bool same_structure(const EncoderParams& a, const EncoderParams& b) {
  if (!(a.config == b.config) || a.depth() != b.depth()) return false;
  auto pa = collect_params(a, "");
  auto pb = collect_params(b, "");
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].first != pb[i].first || pa[i].second.shape() != pb[i].second.shape()) return false;
  }
  return true;
}

namespace {

// [B, S, d] -> [B, h, S, d/h]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  std::size_t B = x.dim(0), S = x.dim(1), d = x.dim(2);
  return permute(reshape(x, {B, S, heads, d / heads}), {0, 2, 1, 3});
}

// [B, h, S, dh] -> [B, S, h*dh]
Tensor merge_heads(const Tensor& x) {
  std::size_t B = x.dim(0), h = x.dim(1), S = x.dim(2), dh = x.dim(3);
  return reshape(permute(x, {0, 2, 1, 3}), {B, S, h * dh});
}

Tensor feed_forward(const Tensor& x, const BlockParams& block) { return block.ff2(gelu(block.ff1(x))); }

void check_stream(const Tensor& x, std::size_t d, const char* what) {
  if (x.rank() != 3 || x.dim(2) != d) {
    throw DimensionError(std::string(what) + " must be [B, S, " + std::to_string(d) + "], got " +
                         shape_str(x.shape()));
  }
}

}  // namespace

Tensor multi_head_attention(const Tensor& x, const Tensor& context, const AttentionParams& params,
                            std::size_t heads) {
  std::size_t d = x.dim(2);
  if (d % heads != 0) throw DimensionError("width " + std::to_string(d) + " not divisible by heads");
  if (context.dim(0) != x.dim(0) || context.dim(2) != d) {
    throw DimensionError("attention context " + shape_str(context.shape()) + " does not match queries " +
                         shape_str(x.shape()));
  }
  Tensor q = split_heads(params.query(x), heads);
  Tensor k = split_heads(params.key(context), heads);
  Tensor v = split_heads(params.value(context), heads);
  Real scale = Real(1) / std::sqrt(static_cast<Real>(d / heads));
  Tensor weights = softmax(mul_scalar(matmul(q, transpose_last(k)), scale));
  return params.output(merge_heads(matmul(weights, v)));
}

Tensor self_attention_block(const Tensor& x, const BlockParams& block, const EncoderConfig& cfg,
                            bool training, Rng& rng) {
  Tensor h = block.norm1(x);
  Tensor y = add(x, dropout(multi_head_attention(h, h, block.attention, cfg.heads), cfg.dropout, training, rng));
  return add(y, dropout(feed_forward(block.norm2(y), block), cfg.dropout, training, rng));
}

Tensor cross_attention_block(const Tensor& queries, const Tensor& context, const BlockParams& block,
                             const EncoderConfig& cfg, bool training, Rng& rng) {
  Tensor attn = multi_head_attention(block.norm1(queries), context, block.attention, cfg.heads);
  Tensor y = add(queries, dropout(attn, cfg.dropout, training, rng));
  return add(y, dropout(feed_forward(block.norm2(y), block), cfg.dropout, training, rng));
}

Tensor visible_encode(const Tensor& z_visible, const EncoderParams& theta, bool training, Rng& rng) {
  check_stream(z_visible, theta.config.d_model, "visible input");
  if (theta.blocks.empty()) return z_visible;
  Tensor x = z_visible;
  for (const auto& block : theta.blocks) x = self_attention_block(x, block, theta.config, training, rng);
  return theta.final_norm(x);
}

Tensor decoupled_encode(const Tensor& queries, const Tensor& visible_out, const EncoderParams& phi,
                        bool training, Rng& rng) {
  check_stream(queries, phi.config.d_model, "masked queries");
  check_stream(visible_out, phi.config.d_model, "visible representations");
  if (visible_out.dim(1) == 0) throw ContractError("decoupled encoder needs at least one visible position");
  if (phi.blocks.empty()) return queries;
  Tensor x = queries;
  for (const auto& block : phi.blocks) {
    x = cross_attention_block(x, visible_out, block, phi.config, training, rng);
  }
  return phi.final_norm(x);
}

Tensor target_encode(const Tensor& z, const EncoderParams& xi, const EncoderParams& theta) {
  if (!same_structure(xi, theta)) {
    throw ContractError("target encoder is not structurally identical to the visible encoder");
  }
  Tensor out;
  {
    NoGradGuard guard;
    Rng unused(0);
    out = visible_encode(z, xi, false, unused);
  }
  return stop_gradient(out);
}

void ema_update(EncoderParams& xi, const EncoderParams& theta, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("EMA momentum must lie in [0, 1]");
  if (!same_structure(xi, theta)) {
    throw ContractError("ema_update: target and online encoders differ in structure");
  }
  auto target = collect_params(xi, "");
  auto online = collect_params(theta, "");
  const Real keep = static_cast<Real>(eta);
  const Real take = static_cast<Real>(1.0 - eta);
  for (std::size_t i = 0; i < target.size(); ++i) {
    auto dst = target[i].second.mutable_data();
    auto src = online[i].second.data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = keep * dst[j] + take * src[j];
  }
}

TIMEMAE_END_NAMESPACE
