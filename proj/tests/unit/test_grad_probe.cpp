// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#include <gtest/gtest.h>
#include <omp.h>

#include <cmath>
#include <limits>

#include "duolab/duo_transform.hpp"
#include "duolab/grad_probe.hpp"

using namespace duolab;

namespace {

double sq(std::span<const double> t) { return t[0] * t[0]; }

struct Quadratic {
  Matrix a;  // symmetric
  Vector b;
  double c;
  double operator()(std::span<const double> x) const {
    double s = c;
    for (std::size_t i = 0; i < b.size(); ++i) {
      s += b[i] * x[i];
      for (std::size_t j = 0; j < b.size(); ++j) s += 0.5 * x[i] * a(i, j) * x[j];
    }
    return s;
  }
  Vector gradient(std::span<const double> x) const {
    Vector g = b;
    for (std::size_t i = 0; i < b.size(); ++i)
      for (std::size_t j = 0; j < b.size(); ++j) g[i] += a(i, j) * x[j];
    return g;
  }
};

Quadratic random_quadratic(Rng& rng, std::size_t d) {
  Quadratic q{Matrix(d, d), Vector(d), rng.normal()};
  for (std::size_t i = 0; i < d; ++i) {
    q.b[i] = rng.normal();
    for (std::size_t j = 0; j <= i; ++j) q.a(i, j) = q.a(j, i) = rng.normal();
  }
  return q;
}

Network probe_net(std::uint64_t seed, ActivationSpec act, bool bn) {
  Rng rng(seed);
  Network net = make_network(6, {{5, act, bn}, {4, act, bn}, {2, ActivationSpec::linear()}}, rng);
  net.mode = Mode::Inference;
  if (bn)
    for (Layer& l : net.layers)
      if (l.bn)
        for (std::size_t u = 0; u < l.width(); ++u) {
          l.bn->gamma[u] = 0.3 + rng.uniform();
          l.bn->beta[u] = 0.5 + 0.3 * rng.normal();
          l.bn->running_mean[u] = 0.1 * rng.normal();
          l.bn->running_var[u] = 0.5 + rng.uniform();
        }
  return net;
}

}  // namespace

TEST(Cdg, Examples) {
  EXPECT_EQ(cdg(sq, Vector{1.0}, 0.5)[0], 2.0);
  EXPECT_EQ(cdg(sq, Vector{0.0}, 0.37)[0], 0.0);
  auto step = [](std::span<const double> t) { return t[0] >= 0.3 ? 1.0 : 0.0; };
  EXPECT_EQ(cdg(step, Vector{0.0}, 0.5)[0], 1.0);
  EXPECT_THROW(cdg(sq, Vector{1.0}, 0.0), std::invalid_argument);
}

TEST(Cdg, ExactOnQuadratics) {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const Quadratic q = random_quadratic(rng, 7);
    Vector x(7);
    for (double& v : x) v = rng.normal();
    const Vector exact = q.gradient(x);
    for (double eps : {1e-3, 0.1, 1.0}) {
      const Vector g = cdg(std::cref(q), x, eps);
      for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g[i], exact[i], 1e-10) << "eps " << eps;
    }
  }
}

TEST(Cdg, AntisymmetricUnderNegation) {
  Rng rng(2);
  const Quadratic q = random_quadratic(rng, 5);
  auto neg = [&](std::span<const double> x) { return -q(x); };
  const Vector x{0.3, -1.0, 2.0, 0.1, 0.7};
  const Vector a = cdg(std::cref(q), x, 0.01), b = cdg(neg, x, 0.01);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(a[i], -b[i]);
}

TEST(Cdg, NonFiniteNamesCoordinate) {
  auto f = [](std::span<const double> x) { return x[2] > 0.5 ? std::numeric_limits<double>::infinity() : 0.0; };
  try {
    cdg(f, Vector{0.0, 0.0, 0.0, 0.0}, 1.0);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 2"), std::string::npos) << e.what();
  }
}

TEST(Cdg, IndependentOfWorkerCount) {
  Rng rng(3);
  const Quadratic q = random_quadratic(rng, 40);
  Vector x(40, 0.5);
  EXPECT_EQ(cdg(std::cref(q), x, 1e-3, 1), cdg(std::cref(q), x, 1e-3, 4));
}

TEST(Esg, ConstantAndEvenLossesGiveZero) {
  Rng rng(4);
  auto constant = [](std::span<const double>) { return 3.5; };
  for (double v : esg(constant, Vector(6, 1.0), 0.1, 50, rng)) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(esg(sq, Vector{0.0}, 0.3, 100, rng)[0], 0.0);
}

TEST(Esg, LinearSlopeWithinChiSquareBound) {
  // Estimator = 3 mean(e_i^2); with N = 1e4 the chi-square(N)/N standard
  // deviation is sqrt(2/N) ~ 0.014, so +-0.15 on the slope is > 3.5 sigma.
  Rng rng(5);
  auto lin = [](std::span<const double> t) { return 3.0 * t[0]; };
  const double g = esg(lin, Vector{0.7}, 0.01, 10000, rng)[0];
  EXPECT_NEAR(g, 3.0, 0.15);
}

TEST(Esg, TrialMeanWithinThreeStandardErrors) {
  Rng rng(6);
  const Vector slope{1.0, -2.0, 0.5};
  auto lin = [&](std::span<const double> t) { return slope[0] * t[0] + slope[1] * t[1] + slope[2] * t[2]; };
  constexpr int trials = 200;
  std::vector<Vector> est;
  for (int i = 0; i < trials; ++i) est.push_back(esg(lin, Vector{0.0, 0.0, 0.0}, 0.05, 16, rng));
  for (std::size_t d = 0; d < 3; ++d) {
    double m = 0.0, q = 0.0;
    for (const Vector& e : est) m += e[d];
    m /= trials;
    for (const Vector& e : est) q += (e[d] - m) * (e[d] - m);
    const double se = std::sqrt(q / (trials - 1) / trials);
    EXPECT_LE(std::abs(m - slope[d]), 3.0 * se) << "dim " << d;
  }
}

TEST(Esg, DeterministicAndWorkerIndependent) {
  Rng rng(7);
  const Quadratic q = random_quadratic(rng, 9);
  Rng a(100), b(100);
  EXPECT_EQ(esg(std::cref(q), Vector(9, 0.2), 0.1, 64, a, 1), esg(std::cref(q), Vector(9, 0.2), 0.1, 64, b, 3));
  EXPECT_THROW(esg(std::cref(q), Vector(9, 0.2), 0.0, 64, a), std::invalid_argument);
  EXPECT_THROW(esg(std::cref(q), Vector(9, 0.2), 0.1, 0, a), std::invalid_argument);
}

TEST(NetworkLossEval, PureAndMatchesManualMse) {
  Network net = probe_net(8, ActivationSpec::quantized(3), true);
  Rng rng(9);
  const Matrix x = gaussian_matrix(rng, 6, 50), t = gaussian_matrix(rng, 2, 50);
  const NetworkLoss loss(net, x, t);
  const Vector theta = flatten_parameters(net);
  const Matrix y = predict(net, x);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y.values()[i] - t.values()[i]) * (y.values()[i] - t.values()[i]);
  EXPECT_EQ(loss(theta), loss(theta));
  EXPECT_NEAR(loss(theta), s / 100.0, 1e-12);
  EXPECT_EQ(loss.weights_only(flatten_weights(net)), loss(theta));
  EXPECT_THROW(NetworkLoss(net, x, Matrix(3, 50)), ShapeError);
}

TEST(FreezeBatchStatistics, MatchesTrainingModeOutput) {
  Network net = probe_net(10, ActivationSpec::full_precision(), true);
  Rng rng(11);
  const Matrix x = gaussian_matrix(rng, 6, 40);
  net.mode = Mode::Training;
  const Matrix batch_out = forward_frozen(net, x).output;
  freeze_batch_statistics(net, x);
  EXPECT_EQ(net.mode, Mode::Inference);
  const Matrix frozen_out = predict(net, x);
  for (std::size_t i = 0; i < batch_out.size(); ++i) EXPECT_NEAR(batch_out.values()[i], frozen_out.values()[i], 1e-12);
}

TEST(NetworkCdg, AgreesWithReferenceKernel) {
  Rng rng(12);
  const Matrix x = gaussian_matrix(rng, 6, 300);
  const std::vector<std::pair<ActivationSpec, bool>> cases = {
      {ActivationSpec::quantized(2), false},
      {ActivationSpec::quantized(3), false},
      {ActivationSpec::quantized(3), true},
      {ActivationSpec::quantized(4, Ste::steep(2)), true},
      {ActivationSpec::full_precision(), false},
      {ActivationSpec::full_precision(Ste::steep(4)), true},
      {ActivationSpec::full_precision(Ste::swish_sign()), true},
      {ActivationSpec::linear(), false},
  };
  std::uint64_t seed = 20;
  for (const auto& [act, bn] : cases) {
    const Network net = probe_net(seed++, act, bn);
    const Matrix t = predict(probe_net(seed++, act, bn), x);
    for (double eps : {1e-3, 0.05}) {
      const Vector fast = network_cdg(net, x, t, eps);
      const Vector ref = reference::network_cdg(net, x, t, eps);
      ASSERT_EQ(fast.size(), ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i)
        ASSERT_NEAR(fast[i], ref[i], 1e-9 * (1.0 + std::abs(ref[i]))) << to_string(act) << " bn=" << bn << " i=" << i;
    }
  }
}

TEST(NetworkCdg, HandlesSharedWeightedSums) {
  Network net = probe_net(40, ActivationSpec::quantized(3), true);
  const Network dec = decouple(net).network;
  Rng rng(41);
  const Matrix x = gaussian_matrix(rng, 6, 200);
  const Matrix t = gaussian_matrix(rng, 2, 200);
  const Vector fast = network_cdg(dec, x, t, 0.02);
  const Vector ref = reference::network_cdg(dec, x, t, 0.02);
  for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(fast[i], ref[i], 1e-9 * (1.0 + std::abs(ref[i])));
}

TEST(NetworkCdg, BitIdenticalAcrossWorkerCounts) {
  const Network net = probe_net(50, ActivationSpec::quantized(2), false);
  Rng rng(51);
  const Matrix x = gaussian_matrix(rng, 6, 2000), t = gaussian_matrix(rng, 2, 2000);
  const Vector one = network_cdg(net, x, t, 1e-3, 1);
  EXPECT_EQ(network_cdg(net, x, t, 1e-3, 2), one);
  EXPECT_EQ(network_cdg(net, x, t, 1e-3, 7), one);
}

TEST(NetworkCdg, RejectsTrainingModeBatchNormAndBadShapes) {
  Network net = probe_net(60, ActivationSpec::quantized(3), true);
  Rng rng(61);
  const Matrix x = gaussian_matrix(rng, 6, 10), t = gaussian_matrix(rng, 2, 10);
  net.mode = Mode::Training;
  EXPECT_THROW(network_cdg(net, x, t, 1e-3), std::invalid_argument);
  net.mode = Mode::Inference;
  EXPECT_THROW(network_cdg(net, x, Matrix(2, 9), 1e-3), ShapeError);
  EXPECT_THROW(network_cdg(net, x, t, -1.0), std::invalid_argument);
}
