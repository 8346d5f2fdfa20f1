#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "timemae/featurizer.hpp"
#include "timemae/tensor.hpp"

TIMEMAE_BEGIN_NAMESPACE

/// Per-example partition of the S slice positions into masked and visible
/// sets, both sorted ascending.
struct MaskPlan {
  double ratio = 0.0;
  std::size_t seq_len = 0;
  std::vector<std::vector<std::size_t>> masked;
  std::vector<std::vector<std::size_t>> visible;

  std::size_t batch() const { return masked.size(); }
  std::size_t n_masked() const { return masked.empty() ? 0 : masked[0].size(); }
  std::size_t n_visible() const { return visible.empty() ? 0 : visible[0].size(); }
  /// Disjointness, coverage and equal per-example cardinalities.
  void validate() const;
};

/// clamp(round_half_up(ratio * S), 1, S - 1).
std::size_t mask_count(std::size_t seq_len, double ratio);

/// Uniform random subset of mask_count(S, ratio) positions for every example.
/// Example i draws from the stream keyed by (epoch_seed, example_ids[i]), so a
/// plan depends only on the epoch and the example, not on batch composition.
MaskPlan sample_mask_plan(std::span<const std::size_t> example_ids, std::size_t seq_len, double ratio,
                          std::uint64_t epoch_seed);
/// Same, with example ids 0..B-1.
MaskPlan sample_mask_plan(std::size_t batch, std::size_t seq_len, double ratio, std::uint64_t epoch_seed);

struct MaskSplit {
  Tensor z_visible;    // [B, S_v, d]
  Tensor z_masked;     // [B, S_m, d], original content rows
  Tensor pos_visible;  // [B, S_v, d] rows of the position table
  Tensor pos_masked;   // [B, S_m, d]
};

/// Gathers visible and masked rows of `seq` plus the matching position rows.
MaskSplit split(const EmbeddedSequence& seq, const MaskPlan& plan, const Tensor& positions);

/// Position-table rows for each example's index list: [B, n, d].
Tensor position_rows(const Tensor& positions, const std::vector<std::vector<std::size_t>>& rows);

/// Queries for the decoupled encoder: z_mask + P[position] for every masked slot.
Tensor masked_queries(const MaskPlan& plan, const Tensor& z_mask, const Tensor& positions);

TIMEMAE_END_NAMESPACE
