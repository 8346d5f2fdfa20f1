#include "timemae/finetune.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "timemae/errors.hpp"
#include "timemae/ops.hpp"
#include "timemae/optim.hpp"

TIMEMAE_BEGIN_NAMESPACE

ClassifierHead ClassifierHead::zeros(std::size_t d_model, std::size_t n_classes) {
  if (n_classes < 2) throw ConfigError("classifier head needs at least 2 classes");
  return {Linear::zeros(d_model, n_classes)};
}

DownstreamModel DownstreamModel::from_state(const ModelState& state, std::size_t n_classes) {
  DownstreamModel m;
  m.config = state.config;
  m.featurizer = deep_copy(state.featurizer);
  m.encoder = deep_copy(state.visible);
  m.head = ClassifierHead::zeros(state.config.d_model, n_classes);
  return m;
}

ParamList DownstreamModel::encoder_params() const {
  ParamList out = collect_params(featurizer, "featurizer");
  for (auto& p : collect_params(encoder, "visible")) out.push_back(p);
  return out;
}

Tensor encode_full(const TimeSeriesBatch& batch, const FeaturizerParams& featurizer, const EncoderParams& encoder,
                   bool training, Rng& rng) {
  if (batch.channels != featurizer.channels()) {
    throw CompatibilityError("data has " + std::to_string(batch.channels) + " channels, model expects m=" +
                             std::to_string(featurizer.channels()));
  }
  if (encoder.config.d_model != featurizer.d_model()) {
    throw CompatibilityError("encoder width d=" + std::to_string(encoder.config.d_model) +
                             " differs from featurizer width d=" + std::to_string(featurizer.d_model()));
  }
  SliceConfig slices{featurizer.sigma(), featurizer.d_model()};
  std::size_t s = slices.num_slices(batch.length);
  if (s > featurizer.max_slices()) {
    throw CompatibilityError("series of length T=" + std::to_string(batch.length) + " gives S=" +
                             std::to_string(s) + " slices at sigma=" + std::to_string(featurizer.sigma()) +
                             ", position table has " + std::to_string(featurizer.max_slices()) + " rows");
  }
  EmbeddedSequence seq = add_positions(featurize(batch, featurizer), featurizer.positions);
  return visible_encode(seq.z, encoder, training, rng);
}

Tensor encode_full(const TimeSeriesBatch& batch, const DownstreamModel& model) {
  NoGradGuard guard;
  Rng unused(0);
  return encode_full(batch, model.featurizer, model.encoder, false, unused);
}

std::size_t unpadded_slices(std::size_t length, std::size_t sigma) { return std::max<std::size_t>(1, length / sigma); }

Tensor mean_pool(const Tensor& reps, std::size_t pooled_slices) {
  if (reps.rank() != 3) throw DimensionError("mean_pool expects [B, S, d], got " + shape_str(reps.shape()));
  if (pooled_slices == 0 || pooled_slices >= reps.dim(1)) return mean(reps, 1);
  return mean(slice(reps, 1, 0, pooled_slices), 1);
}

Tensor pool_and_classify(const Tensor& reps, const ClassifierHead& head, std::size_t pooled_slices) {
  return head.linear(mean_pool(reps, pooled_slices));
}

std::string EvalReport::to_json() const {
  nlohmann::json j = {{"type", "eval"},         {"mode", to_string(mode)}, {"n_examples", n_examples},
                      {"accuracy", accuracy},   {"macro_f1", macro_f1},    {"precision", precision},
                      {"recall", recall},       {"f1", f1},                {"confusion", confusion}};
  return j.dump();
}

EvalReport classification_metrics(std::span<const std::size_t> predictions, std::span<const std::uint32_t> labels,
                                  std::size_t n_classes) {
  if (predictions.size() != labels.size()) {
    throw ContractError("metrics: " + std::to_string(predictions.size()) + " predictions for " +
                        std::to_string(labels.size()) + " labels");
  }
  EvalReport r;
  r.n_examples = labels.size();
  r.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes || predictions[i] >= n_classes) {
      throw DataError("metrics: class index out of range at example " + std::to_string(i));
    }
    ++r.confusion[labels[i]][predictions[i]];
    if (labels[i] == predictions[i]) ++correct;
  }
  r.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  r.precision.assign(n_classes, 0.0);
  r.recall.assign(n_classes, 0.0);
  r.f1.assign(n_classes, 0.0);
  double f1_sum = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::size_t tp = r.confusion[c][c], predicted = 0, actual = 0;
    for (std::size_t k = 0; k < n_classes; ++k) {
      predicted += r.confusion[k][c];
      actual += r.confusion[c][k];
    }
    double p = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    double rc = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
    r.precision[c] = p;
    r.recall[c] = rc;
    r.f1[c] = (p + rc) > 0 ? 2 * p * rc / (p + rc) : 0.0;
    f1_sum += r.f1[c];
  }
  r.macro_f1 = n_classes ? f1_sum / static_cast<double>(n_classes) : 0.0;
  return r;
}

namespace {

std::size_t pooled_count(const DownstreamModel& model, std::size_t length, bool include_padding) {
  return include_padding ? 0 : unpadded_slices(length, model.featurizer.sigma());
}

std::vector<std::size_t> row_argmax(const Tensor& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  auto d = logits.data();
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (d[i * k + j] > d[i * k + best]) best = j;
    }
    out[i] = best;
  }
  return out;
}

const std::vector<std::uint32_t>& require_labels(const TimeSeriesBatch& data, std::size_t n_classes) {
  if (!data.labels) throw DataError("fine-tuning and evaluation need labelled data");
  for (std::size_t i = 0; i < data.labels->size(); ++i) {
    if ((*data.labels)[i] >= n_classes) {
      throw DataError("label " + std::to_string((*data.labels)[i]) + " at example " + std::to_string(i) +
                      " is out of range for " + std::to_string(n_classes) + " classes");
    }
  }
  return *data.labels;
}

}  // namespace

std::vector<Real> pooled_embeddings(const DownstreamModel& model, const TimeSeriesBatch& batch,
                                    bool pool_include_padding) {
  NoGradGuard guard;
  Tensor pooled = mean_pool(encode_full(batch, model), pooled_count(model, batch.length, pool_include_padding));
  return {pooled.data().begin(), pooled.data().end()};
}

std::vector<std::size_t> predict(const DownstreamModel& model, const TimeSeriesBatch& batch,
                                 bool pool_include_padding) {
  NoGradGuard guard;
  Tensor logits = pool_and_classify(encode_full(batch, model), model.head,
                                    pooled_count(model, batch.length, pool_include_padding));
  return row_argmax(logits);
}

EvalReport evaluate(const DownstreamModel& model, const TimeSeriesBatch& data, FinetuneMode mode,
                    bool pool_include_padding) {
  const auto& labels = require_labels(data, model.head.n_classes());
  EvalReport r = classification_metrics(predict(model, data, pool_include_padding), labels, model.head.n_classes());
  r.mode = mode;
  return r;
}

std::string FinetuneEpoch::to_json() const {
  nlohmann::json j = {{"type", "finetune_epoch"}, {"epoch", epoch}, {"train_loss", train_loss},
                      {"train_accuracy", train_accuracy}};
  if (has_test) {
    j["test_accuracy"] = test_accuracy;
    j["test_macro_f1"] = test_macro_f1;
  }
  return j.dump();
}

FinetuneResult finetune(DownstreamModel model, const TimeSeriesBatch& train, const TimeSeriesBatch* test,
                        const FinetuneConfig& cfg, const std::function<void(const FinetuneEpoch&)>& on_epoch) {
  const std::size_t n_classes = model.head.n_classes();
  const auto& labels = require_labels(train, n_classes);
  if (test) require_labels(*test, n_classes);
  if (train.n_examples == 0) throw DataError("fine-tuning needs a nonempty training set");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be >= 1");

  const std::size_t pooled = pooled_count(model, train.length, cfg.pool_include_padding);
  const bool fine_last = cfg.mode == FinetuneMode::FineLast;
  Rng root = Rng(cfg.seed).derive("finetune");

  // FineLast never changes the encoder, so its pooled features are computed once.
  Tensor features;
  if (fine_last) {
    NoGradGuard guard;
    features = mean_pool(encode_full(train, model), pooled);
  }

  Adam optimizer(fine_last ? collect_params(model.head, "head") : collect_params(model, ""), AdamConfig{cfg.lr});
  FinetuneResult result;
  std::size_t step = 0;
  const std::size_t d = model.featurizer.d_model();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto plan = batch_indices(train.n_examples, cfg.batch_size, root.derive("shuffle", epoch).seed());
    FinetuneEpoch row;
    row.epoch = epoch;
    std::size_t correct = 0;
    for (const auto& idx : plan) {
      optimizer.zero_grad();
      std::vector<std::size_t> targets(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) targets[i] = labels[idx[i]];
      Tensor logits;
      if (fine_last) {
        std::vector<Real> rows(idx.size() * d);
        auto src = features.data();
        for (std::size_t i = 0; i < idx.size(); ++i) {
          std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d,
                      rows.begin() + static_cast<std::ptrdiff_t>(i * d));
        }
        logits = model.head.linear(Tensor::from({idx.size(), d}, std::move(rows)));
      } else {
        Rng step_rng = root.derive("step", step);
        TimeSeriesBatch mb = train.select(idx);
        logits = pool_and_classify(encode_full(mb, model.featurizer, model.encoder, true, step_rng), model.head,
                                   pooled);
      }
      Tensor loss = cross_entropy(logits, targets);
      if (!std::isfinite(loss.item())) {
        throw DivergenceError("non-finite fine-tuning loss at epoch " + std::to_string(epoch));
      }
      auto pred = row_argmax(logits);
      for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == targets[i];
      row.train_loss += loss.item() * static_cast<double>(idx.size());
      backward(loss);
      optimizer.step();
      ++step;
    }
    row.train_loss /= static_cast<double>(train.n_examples);
    row.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.n_examples);
    if (test) {
      EvalReport r = evaluate(model, *test, cfg.mode, cfg.pool_include_padding);
      row.has_test = true;
      row.test_accuracy = r.accuracy;
      row.test_macro_f1 = r.macro_f1;
    }
    if (on_epoch) on_epoch(row);
    result.curve.push_back(row);
  }
  result.report = evaluate(model, test ? *test : train, cfg.mode, cfg.pool_include_padding);
  result.model = std::move(model);
  return result;
}

TIMEMAE_END_NAMESPACE
