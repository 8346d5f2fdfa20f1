#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "timemae/rng.hpp"
#include "timemae/tensor.hpp"

TIMEMAE_BEGIN_NAMESPACE

// Elementwise binary ops broadcast numpy-style; gradients are summed back
// over broadcast axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, Real value);
Tensor mul_scalar(const Tensor& x, Real value);
Tensor neg(const Tensor& x);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor relu(const Tensor& x);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);

/// [..., p, q] x [..., q, r]; leading batch axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
/// Swaps the last two axes.
Tensor transpose_last(const Tensor& x);

Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

/// Normalizes over the last axis, then applies gain and bias of shape [d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps = 1e-5);

/// Inverted dropout. Identity when !training or p == 0.
Tensor dropout(const Tensor& x, Real p, bool training, Rng& rng);

/// Channels-last 1-D convolution without padding.
/// x [B, L, C_in], weight [C_out, C_in, k], bias [C_out] -> [B, (L-k)/stride+1, C_out].
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride);

/// Row lookup: table [N, d], ids -> [ids.size(), d].
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);
/// Per-example row gather: x [B, S, d], rows[b] (equal lengths n) -> [B, n, d].
Tensor gather_rows(const Tensor& x, const std::vector<std::vector<std::size_t>>& rows);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);

/// Mean cross-entropy of logits [N, K] against class indices.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);
/// Mean over rows of -sum_k target[n,k] * log_softmax(logits)[n,k].
/// Differentiable in both arguments, which lets straight-through targets
/// pass gradient back into whatever produced them.
Tensor cross_entropy(const Tensor& logits, const Tensor& target_probs);

/// Mean squared error over all entries.
Tensor mse(const Tensor& a, const Tensor& b);

/// Identity forward, zero backward.
Tensor stop_gradient(const Tensor& x);

/// Value of soft + stop_gradient(hard - soft), produced without rounding:
/// the forward value is `hard` bitwise, the backward passes the incoming
/// gradient to `soft` unchanged and nothing to `hard`.
Tensor straight_through(const Tensor& hard, const Tensor& soft);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(Real s, const Tensor& x) { return mul_scalar(x, s); }
inline Tensor operator*(const Tensor& x, Real s) { return mul_scalar(x, s); }
inline Tensor operator+(const Tensor& x, Real s) { return add_scalar(x, s); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

TIMEMAE_END_NAMESPACE
