#include "timemae/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "timemae/ops.hpp"
#include "timemae/rng.hpp"

TIMEMAE_BEGIN_NAMESPACE

void MaskPlan::validate() const {
  if (masked.size() != visible.size()) throw ContractError("mask plan sides differ in batch size");
  for (std::size_t b = 0; b < masked.size(); ++b) {
    if (masked[b].size() != n_masked() || visible[b].size() != n_visible()) {
      throw ContractError("mask plan cardinalities differ between examples");
    }
    std::vector<int> seen(seq_len, 0);
    for (auto s : masked[b]) {
      if (s >= seq_len) throw ContractError("masked index out of range");
      ++seen[s];
    }
    for (auto s : visible[b]) {
      if (s >= seq_len) throw ContractError("visible index out of range");
      ++seen[s];
    }
    for (auto c : seen) {
      if (c != 1) throw ContractError("mask plan is not a partition of the positions");
    }
    if (!std::is_sorted(masked[b].begin(), masked[b].end()) ||
        !std::is_sorted(visible[b].begin(), visible[b].end())) {
      throw ContractError("mask plan index lists must be sorted");
    }
  }
}

std::size_t mask_count(std::size_t seq_len, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must lie in (0, 1)");
  if (seq_len < 2) {
    throw ContractError("need at least 2 slices to form visible and masked sets, got " +
                        std::to_string(seq_len));
  }
  // Small bias so products like 0.7 * 5 = 3.4999999999999996 still round up.
  auto n = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(seq_len) + 0.5 + 1e-9));
  return std::clamp<std::size_t>(n, 1, seq_len - 1);
}

MaskPlan sample_mask_plan(std::span<const std::size_t> example_ids, std::size_t seq_len, double ratio,
                          std::uint64_t epoch_seed) {
  std::size_t n_masked = mask_count(seq_len, ratio);
  MaskPlan plan;
  plan.ratio = ratio;
  plan.seq_len = seq_len;
  plan.masked.resize(example_ids.size());
  plan.visible.resize(example_ids.size());
  Rng root(epoch_seed);
  std::vector<std::size_t> order(seq_len);
  for (std::size_t i = 0; i < example_ids.size(); ++i) {
    Rng rng = root.derive(example_ids[i]);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Partial Fisher-Yates: the first n_masked entries are a uniform subset.
    for (std::size_t k = 0; k < n_masked; ++k) {
      std::size_t j = k + rng.below(seq_len - k);
      std::swap(order[k], order[j]);
    }
    auto& m = plan.masked[i];
    auto& v = plan.visible[i];
    m.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_masked));
    v.assign(order.begin() + static_cast<std::ptrdiff_t>(n_masked), order.end());
    std::sort(m.begin(), m.end());
    std::sort(v.begin(), v.end());
  }
  return plan;
}

MaskPlan sample_mask_plan(std::size_t batch, std::size_t seq_len, double ratio, std::uint64_t epoch_seed) {
  std::vector<std::size_t> ids(batch);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return sample_mask_plan(ids, seq_len, ratio, epoch_seed);
}

Tensor position_rows(const Tensor& positions, const std::vector<std::vector<std::size_t>>& rows) {
  std::size_t B = rows.size();
  std::size_t n = B ? rows[0].size() : 0;
  std::vector<std::size_t> flat;
  flat.reserve(B * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw ContractError("position index lists differ in length");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return reshape(embedding(positions, flat), {B, n, positions.dim(1)});
}

MaskSplit split(const EmbeddedSequence& seq, const MaskPlan& plan, const Tensor& positions) {
  if (seq.z.rank() != 3) throw DimensionError("split expects [B, S, d], got " + shape_str(seq.z.shape()));
  if (seq.z.dim(0) != plan.batch() || seq.z.dim(1) != plan.seq_len) {
    throw ContractError("mask plan for " + std::to_string(plan.batch()) + "x" + std::to_string(plan.seq_len) +
                        " does not match sequence " + shape_str(seq.z.shape()));
  }
  MaskSplit out;
  out.z_visible = gather_rows(seq.z, plan.visible);
  out.z_masked = gather_rows(seq.z, plan.masked);
  out.pos_visible = position_rows(positions, plan.visible);
  out.pos_masked = position_rows(positions, plan.masked);
  return out;
}

Tensor masked_queries(const MaskPlan& plan, const Tensor& z_mask, const Tensor& positions) {
  if (z_mask.shape() != Shape{positions.dim(1)}) {
    throw DimensionError("z_mask " + shape_str(z_mask.shape()) + " does not match position width " +
                         std::to_string(positions.dim(1)));
  }
  return add(position_rows(positions, plan.masked), z_mask);
}

TIMEMAE_END_NAMESPACE
