#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "timemae/layers.hpp"
#include "timemae/rng.hpp"
#include "timemae/tensor.hpp"

TIMEMAE_BEGIN_NAMESPACE

struct EncoderConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t depth = 8;
  std::size_t ff_dim = 256;
  Real dropout = Real(0.2);

  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct AttentionParams {
  Linear query;
  Linear key;
  Linear value;
  Linear output;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    query.visit(prefix + ".query", f);
    key.visit(prefix + ".key", f);
    value.visit(prefix + ".value", f);
    output.visit(prefix + ".output", f);
  }
};

/// One pre-norm transformer block. For the decoupled encoder the attention
/// reads keys and values from the visible-encoder output instead of itself.
struct BlockParams {
  LayerNormParams norm1;
  AttentionParams attention;
  LayerNormParams norm2;
  Linear ff1;
  Linear ff2;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    norm1.visit(prefix + ".norm1", f);
    attention.visit(prefix + ".attn", f);
    norm2.visit(prefix + ".norm2", f);
    ff1.visit(prefix + ".ff1", f);
    ff2.visit(prefix + ".ff2", f);
  }
};

struct EncoderParams {
  EncoderConfig config;
  std::vector<BlockParams> blocks;
  LayerNormParams final_norm;  // applied only when depth > 0

  static EncoderParams init(const EncoderConfig& cfg, Rng& rng);
  std::size_t depth() const { return blocks.size(); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".block" + std::to_string(i), f);
    final_norm.visit(prefix + ".final_norm", f);
  }
};

/// Same config and identical tensor shapes, tensor by tensor.
bool same_structure(const EncoderParams& a, const EncoderParams& b);

/// Multi-head scaled dot-product attention: queries from `x` [B, Sq, d],
/// keys and values from `context` [B, Sk, d], scaling 1/sqrt(d/h).
Tensor multi_head_attention(const Tensor& x, const Tensor& context, const AttentionParams& params,
                            std::size_t heads);

/// x + drop(attn(norm1 x)), then + drop(ff(norm2 x)).
Tensor self_attention_block(const Tensor& x, const BlockParams& block, const EncoderConfig& cfg,
                            bool training, Rng& rng);
/// Same block shape, but attention keys/values come from `context` unnormalized.
Tensor cross_attention_block(const Tensor& queries, const Tensor& context, const BlockParams& block,
                             const EncoderConfig& cfg, bool training, Rng& rng);

/// Self-attention stack over the visible slices only: [B, S_v, d] -> [B, S_v, d].
/// Depth 0 is the identity.
Tensor visible_encode(const Tensor& z_visible, const EncoderParams& theta, bool training, Rng& rng);

/// Cross-attention stack: the masked-query stream is updated layer by layer
/// while every layer re-reads keys and values from the fixed visible output.
Tensor decoupled_encode(const Tensor& queries, const Tensor& visible_out, const EncoderParams& phi,
                        bool training, Rng& rng);

/// Runs the momentum encoder (eval mode, no tape) and returns a stop-gradient
/// result. Throws ContractError unless xi is structurally identical to theta.
Tensor target_encode(const Tensor& z, const EncoderParams& xi, const EncoderParams& theta);

/// xi <- eta * xi + (1 - eta) * theta, every tensor.
void ema_update(EncoderParams& xi, const EncoderParams& theta, double eta);

TIMEMAE_END_NAMESPACE
