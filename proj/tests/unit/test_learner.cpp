#include <gtest/gtest.h>

#include <cmath>

#include "fedsample/error.hpp"
#include "fedsample/learner.hpp"
#include "fedsample/rng.hpp"
#include "gradcheck.hpp"

using namespace fedsample;

namespace {

ModelSpec spec(ModelKind kind, std::size_t d = 5, std::size_t h = 7, std::size_t c = 3) {
  ModelSpec s;
  s.kind = kind;
  s.input_dim = d;
  s.hidden_dim = kind == ModelKind::mlp1 ? h : 0;
  s.n_classes = kind == ModelKind::quadratic ? 0 : c;
  return s;
}

Samples data_for(const ModelSpec& s, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return oracle::random_batch(s, n, rng);
}

ParamVector zeros(const ModelSpec& s) {
  ParamVector p;
  p.shape = s.layout();
  p.data.assign(s.param_count(), 0.0);
  return p;
}

}  // namespace

TEST(ModelSpec, ParamCountsAndLayout) {
  EXPECT_EQ(spec(ModelKind::mlp1, 20, 32, 10).param_count(), 20u * 32 + 32 + 32 * 10 + 10);
  EXPECT_EQ(spec(ModelKind::mlp1, 784, 128, 10).param_count(), 101770u);
  EXPECT_EQ(spec(ModelKind::logistic, 20, 0, 10).param_count(), 210u);
  EXPECT_EQ(spec(ModelKind::quadratic, 9).param_count(), 9u);
  const auto p = init_params(spec(ModelKind::mlp1), 3);
  EXPECT_NO_THROW(p.check_shape());
  EXPECT_EQ(p.shape.front().name, "dense1.weight");
}

TEST(ModelSpec, ParseKind) {
  EXPECT_EQ(parse_model_kind("quadratic-diagnostic"), ModelKind::quadratic);
  EXPECT_EQ(parse_model_kind("mlp1"), ModelKind::mlp1);
  EXPECT_THROW(parse_model_kind("cnn"), Error);
}

TEST(InitParams, BoundedAndDeterministic) {
  const auto s = spec(ModelKind::mlp1, 16, 4, 3);
  const auto p = init_params(s, 42);
  EXPECT_EQ(p, init_params(s, 42));
  EXPECT_NE(p, init_params(s, 43));
  for (std::size_t i = 0; i < 16 * 4 + 4; ++i) EXPECT_LE(std::abs(p.data[i]), 0.25);
  for (std::size_t i = 16 * 4 + 4; i < p.size(); ++i) EXPECT_LE(std::abs(p.data[i]), 0.5);
}

TEST(LossAndGrad, ZeroParamsGiveLogC) {
  for (auto kind : {ModelKind::logistic, ModelKind::mlp1}) {
    for (std::size_t c : {2u, 3u, 10u}) {
      const auto s = spec(kind, 5, 7, c);
      const auto lg = loss_and_grad(s, zeros(s), data_for(s, 11, c));
      EXPECT_NEAR(lg.loss, std::log(static_cast<double>(c)), 1e-15);
    }
  }
}

TEST(LossAndGrad, QuadraticGradientIsTheta) {
  const auto s = spec(ModelKind::quadratic, 6);
  const auto p = init_params(s, 9);
  const auto lg = loss_and_grad(s, p, data_for(s, 3, 1));
  EXPECT_EQ(lg.grad.data, p.data);
  double sq = 0.0;
  for (double v : p.data) sq += v * v;
  EXPECT_EQ(lg.loss, 0.5 * sq);
}

TEST(LossAndGrad, FiniteDifferenceOracle) {
  for (auto kind : {ModelKind::logistic, ModelKind::mlp1, ModelKind::quadratic}) {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
      const auto r = oracle::gradient_check(oracle::gradcheck_spec(kind), 1000 + seed);
      EXPECT_LE(r.rel_error, 1e-6) << to_string(kind) << " seed " << seed << ": " << r.analytic << " vs "
                                   << r.numeric;
    }
  }
}

TEST(LossAndGrad, Errors) {
  const auto s = spec(ModelKind::logistic);
  auto data = data_for(s, 4, 0);
  auto p = zeros(s);
  try {
    p.data[0] = NAN;
    loss_and_grad(s, p, data);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::numeric_error);
  }
  p.data[0] = 0.0;
  data.features.cols = 4;
  EXPECT_THROW(loss_and_grad(s, p, data), Error);
  auto bad_label = data_for(s, 4, 0);
  bad_label.labels[2] = 3;
  EXPECT_THROW(loss_and_grad(s, p, bad_label), Error);
  p.data.pop_back();
  EXPECT_THROW(loss_and_grad(s, p, data_for(s, 4, 0)), Error);
}

TEST(LocalTrain, ZeroLearningRateAndZeroEpochs) {
  const auto s = spec(ModelKind::mlp1);
  const auto start = init_params(s, 1);
  const auto data = data_for(s, 23, 2);

  TrainOptions opts{3, 5, 0.0, 7, {}};
  auto r = local_train(s, start, data, opts);
  EXPECT_EQ(r.params_after, start);
  EXPECT_EQ(r.update_norm, 0.0);
  EXPECT_EQ(r.steps_taken, 3u * 5);

  opts = {0, 5, 0.1, 7, TrackSpec::all()};
  r = local_train(s, start, data, opts);
  EXPECT_EQ(r.params_after, start);
  EXPECT_EQ(r.steps_taken, 0u);
  ASSERT_EQ(r.trajectory.size(), start.size());
  EXPECT_EQ(r.trajectory[0].size(), 1u);
}

TEST(LocalTrain, StepCountKeepsPartialBatch) {
  const auto s = spec(ModelKind::logistic);
  const auto data = data_for(s, 23, 4);
  const auto r = local_train(s, init_params(s, 0), data, {2, 10, 0.1, 1, TrackSpec::subsample(5, 3)});
  EXPECT_EQ(r.steps_taken, 2u * 3);
  EXPECT_EQ(r.n_samples, 23u);
  ASSERT_EQ(r.tracked.size(), 5u);
  for (const auto& t : r.trajectory) EXPECT_EQ(t.size(), r.steps_taken + 1);
}

TEST(LocalTrain, QuadraticFullBatchStep) {
  const auto s = spec(ModelKind::quadratic, 8);
  const auto start = init_params(s, 5);
  const auto data = data_for(s, 12, 0);
  // Power-of-two rates make w - eta*w and (1 - eta)*w the same double.
  for (double eta : {0.5, 0.25}) {
    const auto r = local_train(s, start, data, {1, 12, eta, 3, {}});
    for (std::size_t i = 0; i < start.size(); ++i) EXPECT_EQ(r.params_after.data[i], (1.0 - eta) * start.data[i]);
  }
  for (double eta : {0.1, 0.3}) {
    const auto r = local_train(s, start, data, {1, 12, eta, 3, {}});
    for (std::size_t i = 0; i < start.size(); ++i) {
      EXPECT_DOUBLE_EQ(r.params_after.data[i], (1.0 - eta) * start.data[i]);
    }
  }
}

TEST(LocalTrain, QuadraticLossDecreasesEveryStep) {
  const auto s = spec(ModelKind::quadratic, 10);
  const auto r = local_train(s, init_params(s, 8), data_for(s, 30, 1), {3, 4, 0.3, 2, TrackSpec::all()});
  double prev = INFINITY;
  for (std::size_t step = 0; step <= r.steps_taken; ++step) {
    double loss = 0.0;
    for (const auto& t : r.trajectory) loss += 0.5 * t[step] * t[step];
    EXPECT_LT(loss, prev);
    prev = loss;
  }
}

TEST(LocalTrain, DeterministicAndNormExact) {
  const auto s = spec(ModelKind::mlp1);
  const auto start = init_params(s, 1);
  const auto data = data_for(s, 40, 2);
  const TrainOptions opts{2, 8, 0.05, 99, TrackSpec::all()};
  const auto a = local_train(s, start, data, opts);
  const auto b = local_train(s, start, data, opts);
  EXPECT_EQ(a.params_after, b.params_after);
  EXPECT_EQ(a.update_norm, b.update_norm);
  for (std::size_t c = 0; c < a.trajectory.size(); ++c) EXPECT_EQ(a.trajectory[c].values(), b.trajectory[c].values());
  EXPECT_EQ(a.update_norm, l2_distance(a.params_after, start));
  EXPECT_GT(a.update_norm, 0.0);

  auto other = opts;
  other.seed = 100;
  EXPECT_NE(local_train(s, start, data, other).params_after, a.params_after);
}

TEST(LocalTrain, Errors) {
  const auto s = spec(ModelKind::logistic);
  const auto start = init_params(s, 1);
  Samples empty;
  empty.features.cols = 5;
  EXPECT_THROW(local_train(s, start, empty, {}), Error);
  EXPECT_THROW(local_train(s, start, data_for(s, 4, 0), {1, 0, 0.1, 0, {}}), Error);
  try {
    local_train(s, start, data_for(s, 4, 0), {5, 1, 1e308, 0, {}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::numeric_error);
  }
}

TEST(TrackSpec, Indices) {
  EXPECT_TRUE(TrackSpec::none().indices(10).empty());
  EXPECT_EQ(TrackSpec::all().indices(3), (std::vector<std::size_t>{0, 1, 2}));
  const auto sub = TrackSpec::subsample(4, 7).indices(100);
  ASSERT_EQ(sub.size(), 4u);
  EXPECT_TRUE(std::is_sorted(sub.begin(), sub.end()));
  EXPECT_EQ(sub, TrackSpec::subsample(4, 7).indices(100));
  EXPECT_EQ(TrackSpec::automatic(50, 0).mode, TrackSpec::Mode::all);
  EXPECT_EQ(TrackSpec::automatic(kAutoTrackLimit, 0).mode, TrackSpec::Mode::subsample);
}
