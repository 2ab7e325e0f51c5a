// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#pragma once

#include <functional>
#include <span>

#include "duolab/core_math.hpp"
#include "duolab/network.hpp"

namespace duolab {

/// Scalar loss of a flattened parameter vector. Must be pure and safe to call
/// concurrently from several threads.
using LossEvaluator = std::function<double(std::span<const double>)>;

/// Coordinate discrete gradient: component i is
/// (f(theta + eps e_i) - f(theta - eps e_i)) / (2 eps).
///
/// Coordinates are split across `workers` OpenMP threads (0 = runtime
/// default); each result is written by index so the output does not depend on
/// scheduling. Throws NonFiniteError naming the first bad coordinate.
Vector cdg(const LossEvaluator& loss, std::span<const double> theta, double epsilon, int workers = 0);

/// Antithetic evolution-strategy gradient with N Gaussian directions:
/// (1 / 2 N sigma) sum_i (f(theta + sigma e_i) - f(theta - sigma e_i)) e_i.
/// Directions are drawn serially from `rng`; loss pairs run in parallel.
Vector esg(const LossEvaluator& loss, std::span<const double> theta, double sigma, std::size_t n_samples, Rng& rng,
           int workers = 0);

/// (1 / 2n) sum of squared output errors of `net` on a fixed dataset, as a
/// function of the flattened parameters (see flatten_parameters).
///
/// The network is evaluated with inference semantics. Call
/// freeze_batch_statistics first when it has batch norm, unless
/// `recompute_batch_stats` is set, in which case each evaluation normalizes
/// with the batch statistics of the dataset at that parameter point.
class NetworkLoss {
 public:
  NetworkLoss(Network net, Matrix inputs, Matrix targets, bool recompute_batch_stats = false);

  double operator()(std::span<const double> theta) const;
  /// Loss as a function of the weight entries only (other parameters fixed).
  double weights_only(std::span<const double> weights) const;

  std::size_t dimension() const noexcept { return dimension_; }
  const Network& network() const noexcept { return net_; }

  LossEvaluator evaluator() const;
  LossEvaluator weights_evaluator() const;

 private:
  double loss_of(const Network& net) const;

  Network net_;
  Matrix inputs_;
  Matrix targets_;
  bool recompute_;
  std::size_t dimension_;
};

/// Sets every BN layer's running statistics to the batch statistics of
/// `inputs` at the current parameters and switches to inference mode.
void freeze_batch_statistics(Network& net, const Matrix& inputs);

Vector flatten_weights(const Network& net);

/// CDG of the MSE loss with respect to every weight entry (layer order,
/// row-major), for a network in inference mode.
///
/// Each probe moves one weight, which changes one weighted sum; only samples
/// whose activation actually changes are propagated downstream, using cached
/// activations for everything else. Matches reference::network_cdg up to
/// rounding of the incremental sums.
Vector network_cdg(const Network& net, const Matrix& inputs, const Matrix& targets, double epsilon, int workers = 0);

namespace reference {

/// Two full forward passes per weight, single threaded.
Vector network_cdg(const Network& net, const Matrix& inputs, const Matrix& targets, double epsilon);

}  // namespace reference

}  // namespace duolab
