#include <gtest/gtest.h>

#include "test_util.hpp"
#include "timemae/featurizer.hpp"

using namespace timemae;
using testutil::random_tensor;

namespace {

TimeSeriesBatch ramp(std::size_t n, std::size_t T, std::size_t m) {
  TimeSeriesBatch b;
  b.n_examples = n;
  b.length = T;
  b.channels = m;
  for (std::size_t i = 0; i < n * T * m; ++i) b.values.push_back(static_cast<float>(i + 1));
  return b;
}

TEST(SliceConfig, SliceCount) {
  EXPECT_EQ((SliceConfig{8, 4}.num_slices(128)), 16u);
  EXPECT_EQ((SliceConfig{4, 4}.num_slices(10)), 3u);
  EXPECT_EQ((SliceConfig{1, 4}.num_slices(10)), 10u);
  EXPECT_THROW((SliceConfig{0, 4}.validate()), ConfigError);
}

TEST(SliceConfig, CountStrictlyDecreasesWithSigma) {
  const std::size_t T = 128;
  std::size_t prev = SliceConfig{1, 4}.num_slices(T);
  for (std::size_t sigma : {2, 4, 8, 12, 16, 32}) {
    std::size_t s = SliceConfig{sigma, 4}.num_slices(T);
    EXPECT_LT(s, prev);
    prev = s;
  }
}

TEST(PadAndSlice, NoPaddingWhenSigmaDividesT) {
  Tensor s = pad_and_slice(ramp(1, 128, 1), SliceConfig{8, 4});
  EXPECT_EQ(s.shape(), (Shape{1, 16, 8, 1}));
  EXPECT_EQ(s.data().back(), 128.0f);
}

TEST(PadAndSlice, LastSliceZeroPadded) {
  Tensor s = pad_and_slice(ramp(1, 10, 1), SliceConfig{4, 4});
  ASSERT_EQ(s.shape(), (Shape{1, 3, 4, 1}));
  std::vector<Real> last(s.data().begin() + 8, s.data().end());
  EXPECT_EQ(last, (std::vector<Real>{9, 10, 0, 0}));
}

TEST(PadAndSlice, PointwiseModeWithSigmaOne) {
  Tensor s = pad_and_slice(ramp(2, 5, 3), SliceConfig{1, 4});
  EXPECT_EQ(s.shape(), (Shape{2, 5, 1, 3}));
}

TEST(PadAndSlice, UnsliceReconstructsBitwise) {
  TimeSeriesBatch b = make_synthetic(2, 2, 13, 3, 4);
  for (std::size_t sigma : {1, 3, 4, 13, 20}) {
    EXPECT_EQ(unslice(pad_and_slice(b, SliceConfig{sigma, 4}), b.length), b.values) << sigma;
  }
}

TEST(ConvProject, ZeroWeightsGiveBias) {
  Rng rng(1);
  FeaturizerParams p = FeaturizerParams::init(SliceConfig{4, 3}, 2, 8, rng);
  for (auto& v : p.conv_weight.mutable_data()) v = 0;
  std::vector<Real> bias{0.5, -1, 2};
  std::copy(bias.begin(), bias.end(), p.conv_bias.mutable_data().begin());
  Tensor z = conv_project(pad_and_slice(ramp(2, 10, 2), SliceConfig{4, 3}), p).z;
  ASSERT_EQ(z.shape(), (Shape{2, 3, 3}));
  for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_EQ(z.data()[i], bias[i % 3]);
}

TEST(ConvProject, MatchesExplicitAffineMapPerSlice) {
  // Oracle: flatten each slice to R^{sigma*m} and apply W, b by hand.
  Rng rng(2);
  const std::size_t sigma = 3, m = 2, d = 4;
  FeaturizerParams p = FeaturizerParams::init(SliceConfig{sigma, d}, m, 4, rng);
  Tensor slices = random_tensor({1, 2, sigma, m}, rng);
  Tensor z = conv_project(slices, p).z;
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t o = 0; o < d; ++o) {
      double acc = p.conv_bias.data()[o];
      for (std::size_t k = 0; k < sigma; ++k) {
        for (std::size_t c = 0; c < m; ++c) {
          acc += p.conv_weight.at({o, c, k}) * slices.at({0, s, k, c});
        }
      }
      EXPECT_NEAR(z.at({0, s, o}), acc, 1e-5);
    }
  }
}

TEST(ConvProject, PermutingSlicesPermutesRows) {
  Rng rng(3);
  FeaturizerParams p = FeaturizerParams::init(SliceConfig{2, 5}, 3, 4, rng);
  Tensor slices = random_tensor({1, 4, 2, 3}, rng);
  std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<Real> permuted;
  for (auto s : perm) {
    auto row = slice(slices, 1, s, 1);
    permuted.insert(permuted.end(), row.data().begin(), row.data().end());
  }
  Tensor a = conv_project(slices, p).z;
  Tensor b = conv_project(Tensor::from({1, 4, 2, 3}, permuted), p).z;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t o = 0; o < 5; ++o) EXPECT_EQ(b.at({0, i, o}), a.at({0, perm[i], o}));
  }
}

TEST(ConvProject, CommutesWithExamplePermutation) {
  Rng rng(4);
  TimeSeriesBatch data = make_synthetic(2, 2, 12, 2, 1);
  FeaturizerParams p = FeaturizerParams::init(SliceConfig{4, 6}, 2, 3, rng);
  Tensor full = featurize(data, p).z;
  Tensor rev = featurize(data.select({3, 2, 1, 0}), p).z;
  const std::size_t per = 3 * 6;
  for (std::size_t e = 0; e < 4; ++e) {
    for (std::size_t i = 0; i < per; ++i) EXPECT_EQ(rev.data()[e * per + i], full.data()[(3 - e) * per + i]);
  }
}

TEST(ConvProject, ShapeMismatchIsDimensionError) {
  Rng rng(5);
  FeaturizerParams p = FeaturizerParams::init(SliceConfig{4, 3}, 2, 4, rng);
  EXPECT_THROW(conv_project(Tensor::zeros({1, 2, 3, 2}), p), DimensionError);
  EXPECT_THROW(conv_project(Tensor::zeros({1, 2, 4}), p), DimensionError);
}

TEST(Featurize, ChannelMismatchIsCompatibilityError) {
  Rng rng(6);
  FeaturizerParams p = FeaturizerParams::init(SliceConfig{4, 3}, 2, 4, rng);
  EXPECT_THROW(featurize(ramp(1, 8, 3), p), CompatibilityError);
}

TEST(AddPositions, ZeroTableIsIdentityAndZeroInputGivesRows) {
  Rng rng(7);
  Tensor z = random_tensor({2, 3, 4}, rng);
  EmbeddedSequence out = add_positions({z, false}, Tensor::zeros({5, 4}));
  EXPECT_TRUE(testutil::bitwise_equal(out.z, z));
  EXPECT_TRUE(out.positions_added);

  Tensor P = random_tensor({5, 4}, rng);
  Tensor rows = add_positions({Tensor::zeros({2, 3, 4}), false}, P).z;
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(rows.at({b, s, k}), P.at({s, k}));
    }
  }
}

TEST(AddPositions, DoubleApplicationAndOverlongSequenceRejected) {
  Rng rng(8);
  Tensor P = random_tensor({3, 4}, rng);
  EmbeddedSequence once = add_positions({Tensor::zeros({1, 3, 4}), false}, P);
  EXPECT_THROW(add_positions(once, P), ContractError);
  EXPECT_THROW(add_positions({Tensor::zeros({1, 4, 4}), false}, P), ContractError);
}

TEST(AddPositions, BreaksPermutationEquivariance) {
  Rng rng(9);
  Tensor z = random_tensor({1, 3, 4}, rng);
  Tensor P = random_tensor({3, 4}, rng);
  std::vector<std::size_t> perm{1, 2, 0};
  std::vector<Real> pv;
  for (auto s : perm) {
    auto r = slice(z, 1, s, 1);
    pv.insert(pv.end(), r.data().begin(), r.data().end());
  }
  Tensor a = add_positions({z, false}, P).z;
  Tensor b = add_positions({Tensor::from({1, 3, 4}, pv), false}, P).z;
  double diff = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) diff += std::abs(b.at({0, i, k}) - a.at({0, perm[i], k}));
  }
  EXPECT_GT(diff, 1e-3);
}

}  // namespace
