#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "test_util.hpp"
#include "timemae/pretrain.hpp"

using namespace timemae;
using testutil::random_tensor;

namespace {

PretrainConfig toy_config() {
  PretrainConfig c;
  c.sigma = 4;
  c.d_model = 8;
  c.heads = 2;
  c.visible_depth = 1;
  c.decoupled_depth = 1;
  c.codebook_size = 8;
  c.batch_size = 8;
  c.epochs = 2;
  c.dropout = 0.1;
  c.seed = 5;
  return c;
}

struct Toy {
  TimeSeriesBatch data = make_synthetic(4, 2, 24, 2, 3);
  std::vector<std::size_t> ids = std::vector<std::size_t>(8);
  Toy() { std::iota(ids.begin(), ids.end(), 0); }
};

ModelState toy_state(const PretrainConfig& c, const Toy& toy) {
  return ModelState::init(c, toy.data.channels, SliceConfig{c.sigma, c.d_model}.num_slices(toy.data.length));
}

double grad_norm(const Tensor& t) {
  double n = 0;
  for (Real g : t.grad()) n += static_cast<double>(g) * g;
  return n;
}

TEST(MccLoss, ZeroPredictionsGiveLogK) {
  Rng rng(1);
  Tensor codes = random_tensor({6, 4}, rng);
  std::vector<std::size_t> idx{0, 3, 5};
  EXPECT_NEAR(mcc_loss(Tensor::zeros({1, 3, 4}), codes, one_hot(idx, 6)).item(), std::log(6.0), 1e-6);
}

TEST(MccLoss, ScaledTargetCodewordGivesSmallLoss) {
  const std::size_t K = 4;
  Tensor codes = Tensor::zeros({K, K});
  for (std::size_t k = 0; k < K; ++k) codes.mutable_data()[k * K + k] = 1;
  std::vector<std::size_t> idx{2, 0, 3};
  std::vector<Real> rows;
  for (auto t : idx) {
    for (std::size_t k = 0; k < K; ++k) rows.push_back(k == t ? 10 : 0);
  }
  EXPECT_LT(mcc_loss(Tensor::from({3, K}, rows), codes, one_hot(idx, K)).item(), 0.01);
}

TEST(MccLoss, ShapeMismatchIsDimensionError) {
  EXPECT_THROW(mcc_loss(Tensor::zeros({2, 4}), Tensor::zeros({3, 5}), Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(mcc_loss(Tensor::zeros({2, 4}), Tensor::zeros({3, 4}), Tensor::zeros({3, 3})), DimensionError);
}

TEST(MrrLoss, ZeroForEqualInputsAndEpsilonSquaredForShift) {
  Rng rng(2);
  Tensor t = random_tensor({2, 3, 4}, rng);
  EXPECT_EQ(mrr_loss(t, t).item(), 0);
  EXPECT_NEAR(mrr_loss(add_scalar(t, Real(0.1)), t).item(), 0.01, 1e-6);
  EXPECT_THROW(mrr_loss(t, Tensor::zeros({2, 4, 3})), DimensionError);
}

TEST(ModelState, TargetStartsAsCopyOfVisible) {
  Toy toy;
  ModelState s = toy_state(toy_config(), toy);
  auto v = collect_params(s.visible, "");
  auto x = collect_params(s.target, "");
  ASSERT_EQ(v.size(), x.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_TRUE(testutil::bitwise_equal(v[i].second, x[i].second));
    EXPECT_NE(v[i].second.data().data(), x[i].second.data().data());
  }
}

TEST(PretrainStep, TotalIsWeightedSumOfTerms) {
  Toy toy;
  PretrainConfig c = toy_config();
  c.alpha = 0.7;
  c.beta = 3.0;
  PretrainSession session(toy_state(c, toy));
  for (int i = 0; i < 4; ++i) {
    LossReport r = pretrain_step(session, toy.data, toy.ids, 0);
    EXPECT_NEAR(r.l_total, c.alpha * r.l_cls + c.beta * r.l_align, 1e-6 * std::max(1.0, r.l_total));
  }
}

TEST(PretrainForward, AlignOnlyLeavesCodebookWithoutGradient) {
  Toy toy;
  PretrainConfig c = toy_config();
  c.alpha = 0;
  c.beta = 1;
  ModelState s = toy_state(c, toy);
  PretrainForward f = pretrain_forward(toy.data, toy.ids, s, {0, 0, 1.0, true});
  backward(f.l_total);
  EXPECT_EQ(grad_norm(s.codebook.codes), 0.0);
  EXPECT_GT(grad_norm(s.decoupled.blocks[0].ff1.weight), 0.0);
}

TEST(PretrainForward, ClassificationOnlyStillTrainsCodebook) {
  Toy toy;
  PretrainConfig c = toy_config();
  c.alpha = 1;
  c.beta = 0;
  ModelState s = toy_state(c, toy);
  PretrainForward f = pretrain_forward(toy.data, toy.ids, s, {0, 0, 1.0, true});
  EXPECT_GT(f.l_align.item(), 0);
  backward(f.l_total);
  EXPECT_GT(grad_norm(s.codebook.codes), 0.0);
}

TEST(PretrainForward, TargetsIgnoreTheMaskQueryVector) {
  Toy toy;
  PretrainConfig c = toy_config();
  ModelState s = toy_state(c, toy);
  StepContext eval{0, 0, 1.0, false};
  PretrainForward a = pretrain_forward(toy.data, toy.ids, s, eval);
  for (auto& v : s.z_mask.mutable_data()) v = 50;
  PretrainForward b = pretrain_forward(toy.data, toy.ids, s, eval);
  EXPECT_EQ(a.tokens.indices, b.tokens.indices);
  EXPECT_FALSE(testutil::bitwise_equal(a.predicted, b.predicted));
}

TEST(PretrainForward, VisibleOutputUnaffectedByDecoupledBranch) {
  Toy toy;
  ModelState s = toy_state(toy_config(), toy);
  StepContext ctx{1, 3, 1.0, true};
  PretrainForward full = pretrain_forward(toy.data, toy.ids, s, ctx);
  PretrainForward visible_only = pretrain_forward(toy.data, toy.ids, s, ctx, false);
  EXPECT_TRUE(testutil::bitwise_equal(full.visible_out, visible_only.visible_out));
}

TEST(PretrainStep, SameSeedReplaysBitwise) {
  Toy toy;
  PretrainConfig c = toy_config();
  PretrainSession a(toy_state(c, toy)), b(toy_state(c, toy));
  for (int i = 0; i < 3; ++i) {
    LossReport ra = pretrain_step(a, toy.data, toy.ids, 0);
    LossReport rb = pretrain_step(b, toy.data, toy.ids, 0);
    EXPECT_EQ(ra.to_json(), rb.to_json());
    EXPECT_EQ(ra.l_total, rb.l_total);
  }
}

TEST(PretrainStep, TargetEncoderFollowsClosedFormMovingAverage) {
  Toy toy;
  PretrainConfig c = toy_config();
  c.eta = 0.9;
  c.check_target_grads = true;
  PretrainSession session(toy_state(c, toy));
  auto snapshot = [](EncoderParams& p) {
    std::vector<std::vector<double>> out;
    p.visit("", [&](const std::string&, Tensor& t) { out.emplace_back(t.data().begin(), t.data().end()); });
    return out;
  };
  auto xi = snapshot(session.state().visible);
  for (int i = 0; i < 3; ++i) {
    pretrain_step(session, toy.data, toy.ids, 0);
    auto theta = snapshot(session.state().visible);
    for (std::size_t p = 0; p < xi.size(); ++p) {
      for (std::size_t j = 0; j < xi[p].size(); ++j) xi[p][j] = c.eta * xi[p][j] + (1 - c.eta) * theta[p][j];
    }
  }
  auto got = snapshot(session.state().target);
  for (std::size_t p = 0; p < xi.size(); ++p) {
    for (std::size_t j = 0; j < xi[p].size(); ++j) ASSERT_NEAR(got[p][j], xi[p][j], 1e-6);
  }
}

TEST(PretrainStep, NonFiniteLossThrowsBeforeUpdating) {
  Toy toy;
  PretrainSession session(toy_state(toy_config(), toy));
  session.state().codebook.codes.mutable_data()[0] = std::numeric_limits<Real>::quiet_NaN();
  std::vector<Real> before = testutil::values(session.state().visible.blocks[0].ff1.weight);
  EXPECT_THROW(pretrain_step(session, toy.data, toy.ids, 0), DivergenceError);
  EXPECT_EQ(testutil::values(session.state().visible.blocks[0].ff1.weight), before);
  EXPECT_EQ(session.global_step(), 0u);
}

TEST(PretrainStep, TargetEncoderIsNotOptimized) {
  Toy toy;
  ModelState s = toy_state(toy_config(), toy);
  auto trainable = s.trainable();
  for (const auto& [name, t] : trainable) EXPECT_FALSE(name.starts_with("target")) << name;
  EXPECT_EQ(trainable.size() + collect_params(s.target, "").size(), s.all_params().size());
}

TEST(Adam, MatchesReferenceOverRandomSteps) {
  Rng rng(3);
  std::vector<Tensor> params{random_tensor({3, 4}, rng, -1, 1, true), random_tensor({5}, rng, -1, 1, true)};
  std::vector<std::vector<double>> ref, m, v;
  for (auto& p : params) {
    ref.emplace_back(p.data().begin(), p.data().end());
    m.emplace_back(p.numel(), 0.0);
    v.emplace_back(p.numel(), 0.0);
  }
  AdamMoments moments = AdamMoments::zeros_like(params);
  const AdamConfig cfg{1e-3, 0.9, 0.999, 1e-8};
  for (int t = 1; t <= 100; ++t) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i].zero_grad();
      Tensor g = random_tensor(params[i].shape(), rng, -2, 2);
      backward(sum(mul(params[i], g)));
      for (std::size_t j = 0; j < ref[i].size(); ++j) {
        const double gj = g.data()[j];
        m[i][j] = 0.9 * m[i][j] + 0.1 * gj;
        v[i][j] = 0.999 * v[i][j] + 0.001 * gj * gj;
        const double mh = m[i][j] / (1 - std::pow(0.9, t));
        const double vh = v[i][j] / (1 - std::pow(0.999, t));
        ref[i][j] -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
      }
    }
    adam_step(params, moments, cfg);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < ref[i].size(); ++j) EXPECT_NEAR(params[i].data()[j], ref[i][j], 1e-6);
  }
}

TEST(Adam, ZeroGradientLeavesFreshParametersAndDecaysMoments) {
  Tensor p = Tensor::from({2}, {1, -1}, true);
  std::vector<Tensor> params{p};
  AdamMoments moments = AdamMoments::zeros_like(params);
  backward(sum(mul_scalar(p, 0)));
  adam_step(params, moments, {});
  EXPECT_EQ(testutil::values(p), (std::vector<Real>{1, -1}));

  p.zero_grad();
  backward(sum(p));
  adam_step(params, moments, {});
  const Real m1 = moments.first[0][0], v1 = moments.second[0][0];
  p.zero_grad();
  backward(sum(mul_scalar(p, 0)));
  adam_step(params, moments, {});
  EXPECT_FLOAT_EQ(moments.first[0][0], 0.9f * m1);
  EXPECT_FLOAT_EQ(moments.second[0][0], 0.999f * v1);
}

TEST(Adam, StepOnSquareDescends) {
  Tensor x = Tensor::from({1}, {1}, true);
  std::vector<Tensor> params{x};
  AdamMoments moments = AdamMoments::zeros_like(params);
  backward(sum(mul(x, x)));
  adam_step(params, moments, {1e-3});
  EXPECT_LT(x.data()[0], 1);
  EXPECT_NEAR(x.data()[0], 1 - 1e-3, 1e-6);
}

TEST(TauAt, ConstantUnlessAnnealing) {
  PretrainConfig c;
  c.tau = 1.0;
  EXPECT_EQ(tau_at(c, 7, 11), 1.0);
  c.tau_final = 0.5;
  EXPECT_DOUBLE_EQ(tau_at(c, 0, 11), 1.0);
  EXPECT_DOUBLE_EQ(tau_at(c, 5, 11), 0.75);
  EXPECT_DOUBLE_EQ(tau_at(c, 10, 11), 0.5);
}

TEST(PretrainLoop, RunsEveryEpochAndCallsHooks) {
  Toy toy;
  PretrainConfig c = toy_config();
  c.epochs = 3;
  c.batch_size = 3;
  c.check_target_grads = true;
  PretrainSession session(toy_state(c, toy));
  std::size_t steps = 0, epochs = 0;
  auto summary = pretrain_loop(toy.data, session,
                               {[&](const LossReport& r) {
                                  ++steps;
                                  EXPECT_TRUE(std::isfinite(r.l_total));
                                },
                                [&](const EpochSummary&) { ++epochs; }});
  ASSERT_EQ(summary.size(), 3u);
  EXPECT_EQ(epochs, 3u);
  EXPECT_EQ(steps, 9u);  // ceil(8 / 3) batches per epoch
  EXPECT_EQ(session.global_step(), 9u);
  for (const auto& e : summary) {
    EXPECT_GE(e.perplexity, 1.0);
    EXPECT_LE(e.perplexity, 8.0);
  }
}

TEST(LossReport, JsonHasOneLineAndFields) {
  LossReport r;
  r.l_cls = 1.5;
  std::string j = r.to_json();
  EXPECT_EQ(j.find('\n'), std::string::npos);
  EXPECT_NE(j.find("\"l_cls\":1.5"), std::string::npos);
}

}  // namespace
