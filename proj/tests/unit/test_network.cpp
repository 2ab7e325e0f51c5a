// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#include <gtest/gtest.h>
#include <omp.h>

#include <cmath>

#include "duolab/network.hpp"

using namespace duolab;

namespace {

// Scalar loss sum(C .* F(X)) so that d loss / d F = C.
double linear_functional(const Matrix& out, const Matrix& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out.values()[i] * c.values()[i];
  return s;
}

double evaluate(const Network& net, const Matrix& x, const Matrix& c) {
  return linear_functional(forward_frozen(net, x).output, c);
}

void randomize_bn(Network& net, Rng& rng) {
  for (Layer& l : net.layers) {
    if (!l.bn) continue;
    for (std::size_t u = 0; u < l.width(); ++u) {
      l.bn->gamma[u] = 0.5 + rng.uniform();
      l.bn->beta[u] = 0.3 * rng.normal();
      l.bn->running_mean[u] = 0.2 * rng.normal();
      l.bn->running_var[u] = 0.5 + rng.uniform();
    }
  }
}

double relative_fd_error(Network net, const Matrix& x, Rng& rng) {
  const Matrix c = gaussian_matrix(rng, net.output_dim(), x.cols());
  const ForwardResult fr = forward_frozen(net, x);
  const GradientBundle g = backward(net, fr.cache, c);
  Vector theta = flatten_parameters(net);
  EXPECT_EQ(g.total.size(), theta.size());
  Vector fd(theta.size());
  const double h = 1e-6;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double t0 = theta[i];
    theta[i] = t0 + h;
    assign_parameters(net, theta);
    const double up = evaluate(net, x, c);
    theta[i] = t0 - h;
    assign_parameters(net, theta);
    const double down = evaluate(net, x, c);
    theta[i] = t0;
    fd[i] = (up - down) / (2 * h);
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    num += (g.total[i] - fd[i]) * (g.total[i] - fd[i]);
    den += fd[i] * fd[i];
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST(Forward, IdentityLayerPassesInputThrough) {
  Network net;
  Layer l;
  l.weights = Matrix{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  l.act = ActivationSpec::linear();
  net.layers.push_back(l);
  Rng rng(1);
  const Matrix x = gaussian_matrix(rng, 3, 5);
  EXPECT_EQ(forward(net, x).output, x);
  EXPECT_EQ(predict(net, x), x);
}

TEST(Forward, SaturatedBinaryLayerOutputsOnes) {
  Network net;
  Layer h;
  h.weights = Matrix(4, 2, 1.0);
  h.act = ActivationSpec::quantized(2);
  Layer o;
  o.weights = Matrix(1, 4, 1.0);
  o.act = ActivationSpec::linear();
  net.layers = {h, o};
  const Matrix x(2, 3, 2.0);
  const ForwardResult fr = forward(net, x);
  for (double v : fr.cache.layers[1].input.values()) EXPECT_EQ(v, 1.0);
  for (double v : fr.output.values()) EXPECT_EQ(v, 4.0);
}

TEST(Forward, RejectsBadInput) {
  Rng rng(2);
  Network net = make_network(3, {{4, ActivationSpec::quantized(3)}, {2, ActivationSpec::linear()}}, rng);
  EXPECT_THROW(forward(net, Matrix(3, 0)), ShapeError);
  EXPECT_THROW(forward(net, Matrix(4, 2)), ShapeError);
  EXPECT_THROW(predict(net, Matrix(4, 2)), ShapeError);
}

TEST(NetworkValidate, ChainingAndFinalActivation) {
  Rng rng(3);
  Network net = make_network(3, {{4, ActivationSpec::quantized(3), true}, {2, ActivationSpec::linear()}}, rng);
  EXPECT_NO_THROW(net.validate());
  Network bad = net;
  bad.layers[1].weights = Matrix(2, 5);
  EXPECT_THROW(bad.validate(), ShapeError);
  bad = net;
  bad.layers[1].act = ActivationSpec::quantized(2);
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = net;
  bad.layers[0].bn->gamma.pop_back();
  EXPECT_THROW(bad.validate(), ShapeError);
}

TEST(BatchNormForward, InferenceFormulaAndRunningStats) {
  Rng rng(4);
  Network net = make_network(2, {{3, ActivationSpec::linear(), true}}, rng);
  randomize_bn(net, rng);
  const Matrix x = gaussian_matrix(rng, 2, 6);
  net.mode = Mode::Inference;
  const Matrix z = matmul(net.layers[0].weights, x);
  const Matrix y = predict(net, x);
  const BatchNorm& bn = *net.layers[0].bn;
  for (std::size_t u = 0; u < 3; ++u)
    for (std::size_t t = 0; t < 6; ++t)
      EXPECT_NEAR(y(u, t), bn.gamma[u] * (z(u, t) - bn.running_mean[u]) / std::sqrt(bn.running_var[u] + bn.eps) + bn.beta[u],
                  1e-12);

  net.mode = Mode::Training;
  const BatchNorm before = *net.layers[0].bn;
  forward(net, x);
  const BatchNorm& after = *net.layers[0].bn;
  for (std::size_t u = 0; u < 3; ++u) {
    double m = 0.0;
    for (std::size_t t = 0; t < 6; ++t) m += z(u, t);
    m /= 6.0;
    double q = 0.0;
    for (std::size_t t = 0; t < 6; ++t) q += (z(u, t) - m) * (z(u, t) - m);
    EXPECT_NEAR(after.running_mean[u], 0.9 * before.running_mean[u] + 0.1 * m, 1e-12);
    EXPECT_NEAR(after.running_var[u], 0.9 * before.running_var[u] + 0.1 * q / 5.0, 1e-12);
    EXPECT_GT(after.running_var[u], 0.0);
  }
}

TEST(Backward, MatchesFiniteDifferencesOnSmoothNets) {
  Rng rng(5);
  {
    Network net = make_network(3, {{4, ActivationSpec::linear(), false, true}, {3, ActivationSpec::linear(), false, true},
                                   {2, ActivationSpec::linear(), false, true}}, rng);
    EXPECT_LE(relative_fd_error(net, gaussian_matrix(rng, 3, 7), rng), 1e-4);
  }
  {
    Network net = make_network(3, {{5, ActivationSpec::full_precision(Ste::swish_sign(2.0)), true},
                                   {4, ActivationSpec::full_precision(Ste::swish_sign(2.0)), true},
                                   {2, ActivationSpec::linear(), false, true}}, rng);
    randomize_bn(net, rng);
    net.mode = Mode::Training;
    EXPECT_LE(relative_fd_error(net, gaussian_matrix(rng, 3, 9), rng), 1e-4);
  }
  {
    Network net = make_network(4, {{6, ActivationSpec::full_precision(Ste::polynomial()), true},
                                   {3, ActivationSpec::linear(), false, true}}, rng);
    randomize_bn(net, rng);
    net.mode = Mode::Inference;
    EXPECT_LE(relative_fd_error(net, gaussian_matrix(rng, 4, 8), rng), 1e-4);
  }
}

TEST(Backward, SteepSteBlocksGradientFarFromThreshold) {
  Network net;
  Layer h;
  h.weights = Matrix{{1.0, 0.0}, {0.0, 1.0}};
  h.act = ActivationSpec::quantized(2, Ste::steep(4));
  Layer o;
  o.weights = Matrix{{1.0, -2.0}};
  o.act = ActivationSpec::linear();
  net.layers = {h, o};
  const Matrix x{{3.0, -2.0, 5.0}, {-4.0, 2.5, 0.9}};  // every pre-activation outside [0.375, 0.625]
  const ForwardResult fr = forward(net, x);
  const GradientBundle g = backward(net, fr.cache, Matrix(1, 3, 1.0));
  for (double v : g.per_layer[0]) EXPECT_EQ(v, 0.0);
}

TEST(Backward, ZeroLossGradientGivesZeroBundle) {
  Rng rng(6);
  Network net = make_network(3, {{4, ActivationSpec::quantized(3), true}, {2, ActivationSpec::linear(), false, true}}, rng);
  const Matrix x = gaussian_matrix(rng, 3, 5);
  const ForwardResult fr = forward(net, x);
  const GradientBundle g = backward(net, fr.cache, Matrix(2, 5));
  for (double v : g.total) EXPECT_EQ(v, 0.0);
  std::size_t total = 0;
  for (const auto& b : g.per_layer) total += b.size();
  EXPECT_EQ(total, g.total.size());
  EXPECT_EQ(total, net.parameter_count());
}

TEST(Backward, StaleCacheRejected) {
  Rng rng(7);
  Network net = make_network(3, {{4, ActivationSpec::quantized(3)}, {2, ActivationSpec::linear()}}, rng);
  const Matrix x = gaussian_matrix(rng, 3, 5);
  const ForwardResult fr = forward(net, x);
  net.layers[0].weights(0, 0) += 1.0;
  EXPECT_THROW(backward(net, fr.cache, Matrix(2, 5)), std::invalid_argument);
  EXPECT_THROW(backward(net, forward(net, x).cache, Matrix(3, 5)), ShapeError);
}

TEST(Parameters, FlattenAssignRoundTrip) {
  Rng rng(8);
  Network net = make_network(3, {{4, ActivationSpec::quantized(3), true}, {2, ActivationSpec::linear(), false, true}}, rng);
  const Vector theta = flatten_parameters(net);
  EXPECT_EQ(theta.size(), net.parameter_count());
  EXPECT_EQ(net.weight_count(), 3u * 4 + 4 * 2);
  Vector shifted = theta;
  for (double& v : shifted) v += 1.0;
  Network other = net;
  assign_parameters(other, shifted);
  EXPECT_EQ(flatten_parameters(other), shifted);
  assign_parameters(other, theta);
  EXPECT_EQ(other, net);
  EXPECT_THROW(assign_parameters(other, Vector(theta.size() - 1)), ShapeError);
  const auto [begin, end] = weight_range(net, 1);
  EXPECT_EQ(end - begin, 8u);
}

TEST(Predict, MatchesFrozenForwardForAnyThreadCount) {
  Rng rng(9);
  Network net = make_network(5, {{7, ActivationSpec::quantized(3), true}, {6, ActivationSpec::quantized(2), true},
                                 {3, ActivationSpec::linear(), false, true}}, rng);
  randomize_bn(net, rng);
  net.mode = Mode::Inference;
  const Matrix x = gaussian_matrix(rng, 5, 1000);
  const Matrix ref = forward_frozen(net, x).output;
  const int saved = omp_get_max_threads();
  for (int threads : {1, 3}) {
    omp_set_num_threads(threads);
    EXPECT_EQ(predict(net, x), ref);
  }
  omp_set_num_threads(saved);
}

TEST(Init, HeScaling) {
  Rng rng(10);
  Network net = make_network(400, {{300, ActivationSpec::quantized(2), true}, {1, ActivationSpec::linear()}}, rng);
  double q = 0.0;
  for (double v : net.layers[0].weights.values()) q += v * v;
  EXPECT_NEAR(q / net.layers[0].weights.size(), 2.0 / 400.0, 0.05 * 2.0 / 400.0);
  for (double g : net.layers[0].bn->gamma) EXPECT_EQ(g, 1.0);
  for (double b : net.layers[0].bn->beta) EXPECT_EQ(b, 0.0);
}
