// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#include <gtest/gtest.h>
#include <omp.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "duolab/binaryduo.hpp"
#include "duolab/errors.hpp"
#include "duolab/train.hpp"

using namespace duolab;

namespace {

Dataset separable(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.classes = 2;
  d.inputs = Matrix(2, n);
  for (std::size_t t = 0; t < n; ++t) {
    const int y = static_cast<int>(t % 2);
    d.labels.push_back(y);
    d.inputs(0, t) = (y ? 2.0 : -2.0) + 0.5 * rng.normal();
    d.inputs(1, t) = rng.normal();
  }
  return d;
}

Network small_classifier(std::uint64_t seed, int levels = 3) {
  Rng rng(seed);
  return make_classifier(2, {8}, 2, levels, Ste::relu1(), rng);
}

}  // namespace

TEST(Loss, MseExample) {
  const LossResult r = mse_loss(Matrix{{1.0, 2.0}}, Matrix{{0.0, 4.0}});
  EXPECT_DOUBLE_EQ(r.loss, (1.0 + 4.0) / 4.0);
  EXPECT_DOUBLE_EQ(r.grad(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(r.grad(0, 1), -1.0);
  EXPECT_THROW(mse_loss(Matrix(1, 2), Matrix(2, 2)), ShapeError);
  EXPECT_THROW(mse_loss(Matrix(1, 0), Matrix(1, 0)), ShapeError);
}

TEST(Loss, MseGradientMatchesFiniteDifference) {
  Rng rng(3);
  Matrix p = gaussian_matrix(rng, 3, 5);
  const Matrix t = gaussian_matrix(rng, 3, 5);
  const LossResult r = mse_loss(p, t);
  const double h = 1e-6;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p.values()[i];
    p.values()[i] = keep + h;
    const double up = mse_loss(p, t).loss;
    p.values()[i] = keep - h;
    const double down = mse_loss(p, t).loss;
    p.values()[i] = keep;
    EXPECT_NEAR((up - down) / (2 * h), r.grad.values()[i], 1e-8);
  }
}

TEST(Loss, SoftmaxExample) {
  const std::vector<int> y{0};
  const LossResult r = softmax_xent_loss(Matrix{{0.0}, {0.0}}, y);
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(r.grad(0, 0), -0.5, 1e-15);
  EXPECT_NEAR(r.grad(1, 0), 0.5, 1e-15);
}

TEST(Loss, SoftmaxStableForLargeLogits) {
  const std::vector<int> y{1};
  const LossResult r = softmax_xent_loss(Matrix{{1000.0}, {0.0}}, y);
  EXPECT_NEAR(r.loss, 1000.0, 1e-9);
  EXPECT_TRUE(r.grad.all_finite());
}

TEST(Loss, SoftmaxGradientMatchesFiniteDifference) {
  Rng rng(4);
  Matrix z = gaussian_matrix(rng, 4, 3);
  const std::vector<int> y{2, 0, 3};
  const LossResult r = softmax_xent_loss(z, y);
  const double h = 1e-6;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double keep = z.values()[i];
    z.values()[i] = keep + h;
    const double up = softmax_xent_loss(z, y).loss;
    z.values()[i] = keep - h;
    const double down = softmax_xent_loss(z, y).loss;
    z.values()[i] = keep;
    EXPECT_NEAR((up - down) / (2 * h), r.grad.values()[i], 1e-8);
  }
}

TEST(Loss, SoftmaxRejectsBadLabels) {
  const std::vector<int> bad{2};
  EXPECT_THROW(softmax_xent_loss(Matrix{{0.0}, {1.0}}, bad), std::out_of_range);
  const std::vector<int> two{0, 1};
  EXPECT_THROW(softmax_xent_loss(Matrix{{0.0}, {1.0}}, two), ShapeError);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  OptimState s;
  s.learning_rate = 0.1;
  std::vector<double> p{1.0, -1.0};
  const std::vector<double> g{3.0, -0.5};
  adamw_step(p, g, s);
  EXPECT_NEAR(p[0], 0.9, 1e-7);
  EXPECT_NEAR(p[1], -0.9, 1e-7);
  EXPECT_EQ(s.step, 1u);
}

TEST(AdamW, DecoupledWeightDecayWithZeroGradient) {
  OptimState s;
  s.learning_rate = 0.1;
  s.weight_decay = 0.5;
  std::vector<double> p{2.0};
  const std::vector<double> g{0.0};
  adamw_step(p, g, s);
  EXPECT_DOUBLE_EQ(p[0], 2.0 * (1.0 - 0.05));
}

TEST(AdamW, MatchesIndependentOracle) {
  Rng rng(9);
  const std::size_t d = 5;
  std::vector<double> p(d), q(d), m(d, 0.0), v(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) p[i] = q[i] = rng.normal();
  OptimState s;
  s.learning_rate = 0.01;
  s.weight_decay = 0.1;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.01, wd = 0.1;
  for (int step = 1; step <= 100; ++step) {
    std::vector<double> g(d);
    for (std::size_t i = 0; i < d; ++i) g[i] = std::sin(q[i] * step) + 0.1 * step;
    std::vector<double> gp = g;
    adamw_step(p, gp, s, step > 50 ? 0.5 : 1.0);
    const double a = step > 50 ? lr * 0.5 : lr;
    for (std::size_t i = 0; i < d; ++i) {
      q[i] -= a * wd * q[i];
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, step));
      const double vh = v[i] / (1 - std::pow(b2, step));
      q[i] -= a * mh / (std::sqrt(vh) + eps);
    }
    // The oracle reads q for its gradient; keep the two in lockstep.
    for (std::size_t i = 0; i < d; ++i) ASSERT_NEAR(p[i], q[i], 1e-12) << "step " << step;
  }
}

TEST(AdamW, Errors) {
  OptimState s;
  std::vector<double> p{1.0, 2.0, 3.0};
  const std::vector<double> g{0.0, std::numeric_limits<double>::quiet_NaN(), 0.0};
  try {
    adamw_step(p, g, s);
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos);
  }
  const std::vector<double> short_g{0.0};
  EXPECT_THROW(adamw_step(p, short_g, s), ShapeError);
}

TEST(TrainPlan, Validation) {
  TrainPlan p;
  EXPECT_NO_THROW(p.validate());
  p.batch_size = 0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = TrainPlan{};
  p.learning_rate = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = TrainPlan{};
  p.lr_schedule = {{5, 0.1}, {5, 0.01}};
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.lr_schedule = {{40, 0.1}};
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.lr_schedule = {{5, 0.1}, {10, 0.01}};
  EXPECT_NO_THROW(p.validate());
  EXPECT_DOUBLE_EQ(p.multiplier_at(0), 1.0);
  EXPECT_DOUBLE_EQ(p.multiplier_at(7), 0.1);
  EXPECT_DOUBLE_EQ(p.multiplier_at(29), 0.01);
}

TEST(Train, SeparableProblemIsLearned) {
  const Dataset d = separable(400, 1);
  TrainPlan plan;
  plan.epochs = 50;
  plan.learning_rate = 1e-2;
  plan.batch_size = 50;
  const TrainResult r = train(small_classifier(2), d, plan);
  ASSERT_EQ(r.history.size(), 50u);
  EXPECT_GE(accuracy(r.network, d), 0.99);
  EXPECT_EQ(r.network.mode, Mode::Inference);
  EXPECT_EQ(r.history.front().stage, "pretrain");
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
}

TEST(Train, ZeroEpochsLeavesNetwork) {
  const Network net = small_classifier(2);
  TrainPlan plan;
  plan.epochs = 0;
  const TrainResult r = train(net, separable(20, 1), plan);
  EXPECT_EQ(r.network, net);
  EXPECT_TRUE(r.history.empty());
}

TEST(Train, ReproducibleAndWorkerInvariant) {
  const Dataset d = separable(200, 5);
  TrainPlan plan;
  plan.epochs = 4;
  plan.learning_rate = 5e-3;
  plan.batch_size = 32;
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const TrainResult a = train(small_classifier(3), d, plan, &d, "stage-a");
  omp_set_num_threads(4);
  const TrainResult b = train(small_classifier(3), d, plan, &d, "stage-a");
  omp_set_num_threads(saved);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].test_acc, b.history[i].test_acc);
    EXPECT_EQ(a.history[i].stage, "stage-a");
  }
  EXPECT_EQ(a.network, b.network);

  plan.seed = 2;
  const TrainResult c = train(small_classifier(3), d, plan);
  EXPECT_NE(c.network, a.network);
}

TEST(Train, RegressionHistoryHasNoAccuracy) {
  Rng rng(6);
  const Network teacher = make_network(3, {{4, ActivationSpec::full_precision()}, {1, ActivationSpec::linear()}}, rng);
  const Dataset d = teacher_regression(teacher, 64, rng);
  const Network student = make_network(3, {{4, ActivationSpec::full_precision()}, {1, ActivationSpec::linear()}}, rng);
  TrainPlan plan;
  plan.epochs = 2;
  plan.batch_size = 16;
  const TrainResult r = train(student, d, plan);
  EXPECT_TRUE(std::isnan(r.history[0].train_acc));
  EXPECT_TRUE(std::isnan(r.history[0].test_acc));
  EXPECT_TRUE(std::isfinite(r.history[0].train_loss));
}

TEST(Train, DivergenceNamesEpochAndBatch) {
  Dataset d = separable(20, 1);
  for (double& v : d.inputs.values()) v *= std::numeric_limits<double>::infinity();
  Rng rng(1);
  const Network net = make_network(2, {{2, ActivationSpec::linear(), false, true}}, rng);
  TrainPlan plan;
  plan.epochs = 1;
  plan.batch_size = 10;
  try {
    train(net, d, plan);
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0, batch 0"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsMismatchedInput) {
  const Dataset d = separable(20, 1);
  Rng rng(1);
  const Network net = make_classifier(3, {4}, 2, 3, Ste::relu1(), rng);
  EXPECT_THROW(train(net, d, TrainPlan{}), ShapeError);
}

TEST(Mixture, DeterministicAndBalanced) {
  const TrainTestSplit a = gaussian_mixture(7, 4, 8, 400, 100);
  const TrainTestSplit b = gaussian_mixture(7, 4, 8, 400, 100);
  EXPECT_EQ(a.train.inputs, b.train.inputs);
  EXPECT_EQ(a.test.labels, b.test.labels);
  const TrainTestSplit c = gaussian_mixture(8, 4, 8, 400, 100);
  EXPECT_NE(a.train.inputs, c.train.inputs);
  std::vector<int> counts(4, 0);
  for (int y : a.train.labels) ++counts[static_cast<std::size_t>(y)];
  for (int k : counts) EXPECT_EQ(k, 100);
  EXPECT_EQ(a.train.size(), 400u);
  EXPECT_EQ(a.test.size(), 100u);
  EXPECT_NO_THROW(a.train.validate());
}

TEST(Mixture, ClassMeansSeparate) {
  const TrainTestSplit s = gaussian_mixture(1, 2, 16, 4000, 0, 3.0);
  std::vector<double> m0(16, 0.0), m1(16, 0.0);
  for (std::size_t t = 0; t < s.train.size(); ++t)
    for (std::size_t r = 0; r < 16; ++r) (s.train.labels[t] ? m1 : m0)[r] += s.train.inputs(r, t) / 2000.0;
  double dist2 = 0.0;
  for (std::size_t r = 0; r < 16; ++r) dist2 += (m0[r] - m1[r]) * (m0[r] - m1[r]);
  // Mean difference has variance 2 sep^2 / dim per coordinate: E|d|^2 = 18.
  EXPECT_GT(dist2, 4.0);
  EXPECT_LT(dist2, 50.0);
}

TEST(Dataset, SubsetAndValidation) {
  const Dataset d = separable(10, 1);
  const std::vector<std::size_t> cols{3, 0};
  const Dataset s = d.subset(cols);
  EXPECT_EQ(s.size(), 2u);
  EXPECT_EQ(s.labels[0], d.labels[3]);
  EXPECT_EQ(s.inputs(1, 1), d.inputs(1, 0));
  Dataset bad = d;
  bad.labels[0] = 5;
  EXPECT_THROW(bad.validate(), std::out_of_range);
  bad = d;
  bad.labels.pop_back();
  EXPECT_THROW(bad.validate(), ShapeError);
}
