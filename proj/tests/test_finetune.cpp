#include <gtest/gtest.h>

#include <numeric>

#include "test_util.hpp"
#include "timemae/finetune.hpp"

using namespace timemae;
using testutil::random_tensor;

namespace {

PretrainConfig small_config() {
  PretrainConfig c;
  c.sigma = 4;
  c.d_model = 8;
  c.heads = 2;
  c.visible_depth = 1;
  c.decoupled_depth = 1;
  c.codebook_size = 8;
  c.dropout = 0.1;
  c.seed = 9;
  return c;
}

DownstreamModel small_model(const TimeSeriesBatch& data, std::size_t n_classes) {
  PretrainConfig c = small_config();
  ModelState s = ModelState::init(c, data.channels, SliceConfig{c.sigma, c.d_model}.num_slices(data.length));
  return DownstreamModel::from_state(s, n_classes);
}

/// Two classes that differ only in their constant level.
TimeSeriesBatch level_dataset(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  TimeSeriesBatch b;
  b.n_examples = n;
  b.length = 16;
  b.channels = 1;
  b.labels = std::vector<std::uint32_t>();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t c = i % 2;
    b.labels->push_back(c);
    for (std::size_t t = 0; t < 16; ++t) b.values.push_back(static_cast<float>((c ? 2.0 : -2.0) + rng.normal(0, 0.2)));
  }
  return b;
}

TEST(MeanPool, ConstantRowsPoolToThatRow) {
  Tensor row = Tensor::from({1, 1, 3}, {1.5, -2, 0.25});
  Tensor pooled = mean_pool(concat({row, row, row, row}, 1));
  EXPECT_EQ(testutil::values(pooled), testutil::values(reshape(row, {1, 3})));
}

TEST(MeanPool, PrefixCountAndSliceOrderInvariance) {
  Tensor reps = Tensor::from({1, 3, 1}, {1, 2, 9});
  EXPECT_FLOAT_EQ(mean_pool(reps, 2).data()[0], 1.5f);
  Tensor reversed = Tensor::from({1, 3, 1}, {9, 2, 1});
  EXPECT_FLOAT_EQ(mean_pool(reps).data()[0], mean_pool(reversed).data()[0]);
  EXPECT_EQ(unpadded_slices(10, 4), 2u);
  EXPECT_EQ(unpadded_slices(3, 4), 1u);
}

TEST(PoolAndClassify, ZeroHeadGivesBias) {
  ClassifierHead head = ClassifierHead::zeros(4, 3);
  std::vector<Real> bias{0.3, -1, 2};
  std::copy(bias.begin(), bias.end(), head.linear.bias.mutable_data().begin());
  Rng rng(1);
  Tensor logits = pool_and_classify(random_tensor({5, 6, 4}, rng), head);
  ASSERT_EQ(logits.shape(), (Shape{5, 3}));
  for (std::size_t i = 0; i < 15; ++i) EXPECT_EQ(logits.data()[i], bias[i % 3]);
}

TEST(Metrics, PerfectPredictions) {
  std::vector<std::size_t> pred{0, 1, 2, 1};
  std::vector<std::uint32_t> truth{0, 1, 2, 1};
  EvalReport r = classification_metrics(pred, truth, 3);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.macro_f1, 1.0);
}

TEST(Metrics, AllZeroOnBalancedBinary) {
  std::vector<std::size_t> pred{0, 0, 0, 0};
  std::vector<std::uint32_t> truth{0, 1, 0, 1};
  EvalReport r = classification_metrics(pred, truth, 2);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.5);
  EXPECT_NEAR(r.macro_f1, 1.0 / 3.0, 1e-12);
}

TEST(Metrics, BalancedDiagonalHasAccuracyEqualToMacroF1) {
  std::vector<std::size_t> pred{0, 1, 1, 0};
  std::vector<std::uint32_t> truth{0, 0, 1, 1};
  EvalReport r = classification_metrics(pred, truth, 2);
  EXPECT_DOUBLE_EQ(r.accuracy, r.macro_f1);
}

TEST(Metrics, AgreeWithConfusionMatrixOracle) {
  Rng rng(2);
  const std::size_t K = 4, N = 1000;
  std::vector<std::size_t> pred(N);
  std::vector<std::uint32_t> truth(N);
  for (std::size_t i = 0; i < N; ++i) {
    truth[i] = static_cast<std::uint32_t>(rng.below(K));
    // Bias toward the truth, and never predict class 3.
    pred[i] = rng.uniform() < 0.5 ? truth[i] : rng.below(K);
    if (pred[i] == 3) pred[i] = 0;
  }
  std::vector<std::vector<double>> cm(K, std::vector<double>(K, 0));
  for (std::size_t i = 0; i < N; ++i) cm[truth[i]][pred[i]] += 1;
  double correct = 0, f1_sum = 0;
  for (std::size_t k = 0; k < K; ++k) {
    double tp = cm[k][k], col = 0, row = 0;
    for (std::size_t j = 0; j < K; ++j) {
      col += cm[j][k];
      row += cm[k][j];
    }
    correct += tp;
    double p = col > 0 ? tp / col : 0, r = row > 0 ? tp / row : 0;
    f1_sum += (p + r) > 0 ? 2 * p * r / (p + r) : 0;
  }
  EvalReport r = classification_metrics(pred, truth, K);
  EXPECT_NEAR(r.accuracy, correct / N, 1e-12);
  EXPECT_NEAR(r.macro_f1, f1_sum / K, 1e-12);
  EXPECT_EQ(r.f1[3], 0.0);
  for (std::size_t a = 0; a < K; ++a) {
    for (std::size_t b = 0; b < K; ++b) EXPECT_EQ(r.confusion[a][b], static_cast<std::size_t>(cm[a][b]));
  }
}

TEST(Metrics, OutOfRangeLabelIsDataError) {
  std::vector<std::size_t> pred{0};
  std::vector<std::uint32_t> truth{5};
  EXPECT_THROW(classification_metrics(pred, truth, 2), DataError);
}

TEST(EncodeFull, ShapeAndEvalDeterminism) {
  TimeSeriesBatch data = make_synthetic(2, 2, 18, 2, 1);
  DownstreamModel m = small_model(data, 2);
  Tensor a = encode_full(data, m);
  EXPECT_EQ(a.shape(), (Shape{4, 5, 8}));
  EXPECT_TRUE(testutil::bitwise_equal(a, encode_full(data, m)));
}

TEST(EncodeFull, IncompatibleDataIsNamed) {
  TimeSeriesBatch data = make_synthetic(2, 2, 16, 2, 1);
  DownstreamModel m = small_model(data, 2);
  try {
    encode_full(make_synthetic(2, 2, 16, 3, 1), m);
    FAIL() << "expected CompatibilityError";
  } catch (const CompatibilityError& e) {
    EXPECT_NE(std::string(e.what()).find("channels"), std::string::npos);
  }
  EXPECT_THROW(encode_full(make_synthetic(2, 2, 64, 2, 1), m), CompatibilityError);
}

TEST(Finetune, FineLastKeepsEncoderBitIdentical) {
  TimeSeriesBatch data = make_synthetic(6, 2, 16, 2, 3);
  DownstreamModel m = small_model(data, 2);
  std::vector<std::vector<Real>> before;
  for (const auto& [name, t] : m.encoder_params()) before.push_back(testutil::values(t));
  FinetuneConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  FinetuneResult r = finetune(m, data, nullptr, cfg);
  auto after = r.model.encoder_params();
  ASSERT_EQ(after.size(), before.size());
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(testutil::values(after[i].second), before[i]) << after[i].first;
  double head_norm = 0;
  for (Real w : r.model.head.linear.weight.data()) head_norm += std::abs(w);
  EXPECT_GT(head_norm, 0.0);
}

TEST(Finetune, FineAllUpdatesEncoder) {
  TimeSeriesBatch data = make_synthetic(6, 2, 16, 2, 3);
  DownstreamModel m = small_model(data, 2);
  std::vector<Real> before = testutil::values(m.encoder.blocks[0].ff1.weight);
  std::vector<Real> pos_before = testutil::values(m.featurizer.positions);
  FinetuneConfig cfg;
  cfg.mode = FinetuneMode::FineAll;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  FinetuneResult r = finetune(m, data, nullptr, cfg);
  EXPECT_NE(testutil::values(r.model.encoder.blocks[0].ff1.weight), before);
  EXPECT_NE(testutil::values(r.model.featurizer.positions), pos_before);
  EXPECT_EQ(r.report.mode, FinetuneMode::FineAll);
}

TEST(Finetune, FineLastSeparatesConstructedClassesWithin200Steps) {
  TimeSeriesBatch data = level_dataset(40, 4);
  DownstreamModel m = small_model(data, 2);
  FinetuneConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 40;  // 5 batches per epoch: 200 steps
  FinetuneResult r = finetune(m, data, nullptr, cfg);
  EXPECT_EQ(r.curve.size(), 40u);
  EXPECT_EQ(r.report.accuracy, 1.0);
}

TEST(Finetune, ReportsHeldOutCurve) {
  TimeSeriesBatch train = level_dataset(20, 5), test = level_dataset(10, 6);
  DownstreamModel m = small_model(train, 2);
  FinetuneConfig cfg;
  cfg.epochs = 2;
  std::size_t seen = 0;
  FinetuneResult r = finetune(m, train, &test, cfg, [&](const FinetuneEpoch& e) {
    ++seen;
    EXPECT_TRUE(e.has_test);
  });
  EXPECT_EQ(seen, 2u);
  EXPECT_EQ(r.report.n_examples, 10u);
}

TEST(Finetune, LabelOutOfRangeIsDataError) {
  TimeSeriesBatch data = make_synthetic(3, 3, 16, 2, 1);
  DownstreamModel m = small_model(data, 2);
  FinetuneConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(finetune(m, data, nullptr, cfg), DataError);
  data.labels.reset();
  EXPECT_THROW(finetune(small_model(data, 2), data, nullptr, cfg), DataError);
}

TEST(DownstreamModel, CopiesStateTensors) {
  PretrainConfig c = small_config();
  ModelState s = ModelState::init(c, 2, 4);
  DownstreamModel m = DownstreamModel::from_state(s, 3);
  EXPECT_TRUE(testutil::bitwise_equal(m.encoder.blocks[0].ff1.weight, s.visible.blocks[0].ff1.weight));
  m.encoder.blocks[0].ff1.weight.mutable_data()[0] += 1;
  EXPECT_FALSE(testutil::bitwise_equal(m.encoder.blocks[0].ff1.weight, s.visible.blocks[0].ff1.weight));
  EXPECT_EQ(m.head.n_classes(), 3u);
}

}  // namespace
