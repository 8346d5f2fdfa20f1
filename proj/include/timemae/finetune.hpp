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
#include "timemae/layers.hpp"
#include "timemae/pretrain.hpp"

TIMEMAE_BEGIN_NAMESPACE

/// Affine map from the pooled representation to class logits.
struct ClassifierHead {
  Linear linear;  // weight [d, n_classes]

  /// Zero weights and bias: the first prediction is uniform.
  static ClassifierHead zeros(std::size_t d_model, std::size_t n_classes);
  std::size_t n_classes() const { return linear.weight.dim(1); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    linear.visit(prefix, f);
  }
};

/// Featurizer + visible encoder + head: everything downstream classification uses.
struct DownstreamModel {
  PretrainConfig config;
  FeaturizerParams featurizer;
  EncoderParams encoder;
  ClassifierHead head;

  /// Independent copies of the state's featurizer and visible encoder plus a
  /// zero head.
  static DownstreamModel from_state(const ModelState& state, std::size_t n_classes);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    const std::string p = prefix.empty() ? "" : prefix + ".";
    featurizer.visit(p + "featurizer", f);
    encoder.visit(p + "visible", f);
    head.visit(p + "head", f);
  }
  /// Featurizer and encoder tensors, i.e. everything FineLast keeps frozen.
  ParamList encoder_params() const;
};

/// Featurize without masking, add positions, run the visible encoder over all
/// S slices: [B, ceil(T / sigma), d]. Throws CompatibilityError if the batch
/// does not match the featurizer (channels) or the position table (length).
Tensor encode_full(const TimeSeriesBatch& batch, const FeaturizerParams& featurizer, const EncoderParams& encoder,
                   bool training, Rng& rng);
Tensor encode_full(const TimeSeriesBatch& batch, const DownstreamModel& model);

/// Number of slices that contain no zero padding (at least 1).
std::size_t unpadded_slices(std::size_t length, std::size_t sigma);

/// Mean over the first `pooled_slices` slices (0 = all) of reps [B, S, d].
Tensor mean_pool(const Tensor& reps, std::size_t pooled_slices = 0);
/// mean_pool followed by the head: logits [B, n_classes].
Tensor pool_and_classify(const Tensor& reps, const ClassifierHead& head, std::size_t pooled_slices = 0);

struct EvalReport {
  FinetuneMode mode = FinetuneMode::FineLast;
  std::size_t n_examples = 0;
  double accuracy = 0;
  double macro_f1 = 0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][prediction]

  std::string to_json() const;
};

/// Accuracy, per-class precision/recall/F1 and macro-F1. A class with no
/// true and no predicted examples (or P + R = 0) gets F1 = 0.
EvalReport classification_metrics(std::span<const std::size_t> predictions,
                                  std::span<const std::uint32_t> labels, std::size_t n_classes);

/// Eval-mode forward: argmax class per example.
std::vector<std::size_t> predict(const DownstreamModel& model, const TimeSeriesBatch& batch,
                                 bool pool_include_padding = true);
EvalReport evaluate(const DownstreamModel& model, const TimeSeriesBatch& data, FinetuneMode mode,
                    bool pool_include_padding = true);

/// Pooled representations [B, d] in eval mode (row-major).
std::vector<Real> pooled_embeddings(const DownstreamModel& model, const TimeSeriesBatch& batch,
                                    bool pool_include_padding = true);

struct FinetuneEpoch {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  bool has_test = false;
  double test_accuracy = 0;
  double test_macro_f1 = 0;

  std::string to_json() const;
};

struct FinetuneResult {
  DownstreamModel model;
  std::vector<FinetuneEpoch> curve;
  EvalReport report;  // on the held-out set when given, else on the training set
};

/// Trains the head (FineLast) or everything (FineAll) with Adam on the
/// labelled training set; reports on `test` after every epoch when given.
FinetuneResult finetune(DownstreamModel model, const TimeSeriesBatch& train, const TimeSeriesBatch* test,
                        const FinetuneConfig& cfg,
                        const std::function<void(const FinetuneEpoch&)>& on_epoch = {});

TIMEMAE_END_NAMESPACE
