#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "timemae/config.hpp"
#include "timemae/dataset.hpp"
#include "timemae/encoder.hpp"
#include "timemae/featurizer.hpp"
#include "timemae/masking.hpp"
#include "timemae/optim.hpp"
#include "timemae/tokenizer.hpp"

TIMEMAE_BEGIN_NAMESPACE

/// Every tensor the pre-training stage owns.
struct ModelState {
  PretrainConfig config;
  FeaturizerParams featurizer;
  Tensor z_mask;  // [d], shared query content for every masked slot
  EncoderParams visible;
  EncoderParams decoupled;
  EncoderParams target;  // momentum copy of `visible`, never optimized
  Codebook codebook;

  /// Fresh state drawn from config.seed. The target starts as a copy of the
  /// visible encoder.
  static ModelState init(const PretrainConfig& config, std::size_t channels, std::size_t max_slices);

  SliceConfig slice_config() const { return {config.sigma, config.d_model}; }
  std::size_t channels() const { return featurizer.channels(); }

  template <class F>
  void visit(F&& f) {
    featurizer.visit("featurizer", f);
    f("z_mask", z_mask);
    visible.visit("visible", f);
    decoupled.visit("decoupled", f);
    target.visit("target", f);
    codebook.visit("codebook", f);
  }
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    visit([&](const std::string& name, Tensor& t) { f(prefix.empty() ? name : prefix + "." + name, t); });
  }

  /// Everything the optimizer updates: all parameters except the target encoder.
  ParamList trainable() const;
  ParamList all_params() const { return collect_params(*this, ""); }
};

/// Codeword classification: cross-entropy of logits F_rows C^T against the
/// (straight-through) target assignment, averaged over masked slots.
/// `predicted` is [B, S_m, d] or [N, d]; `targets` is [N, K].
Tensor mcc_loss(const Tensor& predicted, const Tensor& codes, const Tensor& targets);
/// Mean squared difference over all entries.
Tensor mrr_loss(const Tensor& predicted, const Tensor& target_reps);

struct LossReport {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double l_cls = 0;
  double l_align = 0;
  double l_total = 0;
  double perplexity = 0;
  double tau = 0;
  std::vector<std::size_t> usage_counts;  // codeword histogram of this step

  /// One JSON object on a single line (usage counts omitted).
  std::string to_json() const;
};

struct StepContext {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global step counter, keys the stochastic streams
  double tau = 1.0;
  bool training = true;
};

/// All intermediate values of one forward pass.
struct PretrainForward {
  MaskPlan plan;
  MaskSplit split;
  Tensor visible_out;  // [B, S_v, d]
  Tensor predicted;    // [B, S_m, d], undefined when the decoupled branch is skipped
  Tensor target_reps;  // [B, S_m, d], stop-gradient
  QuantizeResult tokens;
  Tensor l_cls;
  Tensor l_align;
  Tensor l_total;
};

/// Featurize, mask, encode, tokenize, and build the joint loss. With
/// `run_decoupled` false it stops after the visible encoder.
PretrainForward pretrain_forward(const TimeSeriesBatch& batch, std::span<const std::size_t> example_ids,
                                 const ModelState& state, const StepContext& ctx, bool run_decoupled = true);

/// Model state plus optimizer state and counters.
class PretrainSession {
 public:
  explicit PretrainSession(ModelState state);

  ModelState& state() { return state_; }
  const ModelState& state() const { return state_; }
  Adam& optimizer() { return optimizer_; }
  std::size_t global_step() const { return step_; }

  /// One optimizer step followed by the momentum update. A non-finite loss
  /// throws DivergenceError before any parameter changes.
  LossReport step(const TimeSeriesBatch& batch, std::span<const std::size_t> example_ids,
                  std::size_t epoch, double tau);

 private:
  ModelState state_;
  Adam optimizer_;
  std::size_t step_ = 0;
};

/// Free-function form of PretrainSession::step with the configured tau.
LossReport pretrain_step(PretrainSession& session, const TimeSeriesBatch& batch,
                         std::span<const std::size_t> example_ids, std::size_t epoch);

struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double l_cls = 0;
  double l_align = 0;
  double l_total = 0;
  /// Perplexity of the codeword usage pooled over the whole epoch.
  double perplexity = 0;

  std::string to_json() const;
};

struct PretrainHooks {
  std::function<void(const LossReport&)> on_step;
  std::function<void(const EpochSummary&)> on_epoch;
};

/// Tau for a given global step: constant, or linear from tau to tau_final.
double tau_at(const PretrainConfig& cfg, std::size_t step, std::size_t total_steps);

/// Runs cfg.epochs epochs, reshuffling and re-masking each epoch.
std::vector<EpochSummary> pretrain_loop(const TimeSeriesBatch& data, PretrainSession& session,
                                        const PretrainHooks& hooks = {});

TIMEMAE_END_NAMESPACE
