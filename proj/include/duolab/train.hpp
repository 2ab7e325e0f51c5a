// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "duolab/network.hpp"

namespace duolab {

struct LossResult {
  double loss = 0.0;
  Matrix grad;  ///< d loss / d prediction
};

/// (1/2n) sum of squared errors; grad = (pred - target) / n.
LossResult mse_loss(const Matrix& pred, const Matrix& target);

/// Mean softmax cross-entropy over columns (max-shifted);
/// grad = (softmax - onehot) / n. Throws std::out_of_range for bad labels.
LossResult softmax_xent_loss(const Matrix& logits, std::span<const int> labels);

/// Adam with decoupled weight decay. Per step:
///   theta <- theta (1 - lr wd)
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   theta <- theta - lr m_hat / (sqrt(v_hat) + eps)
struct OptimState {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t step = 0;
  Vector m;
  Vector v;
};

/// One AdamW update. `lr_scale` multiplies the learning rate (and with it
/// the decay) for schedules. Throws NonFiniteError on NaN/Inf gradients.
void adamw_step(std::span<double> params, std::span<const double> grads, OptimState& state, double lr_scale = 1.0);

enum class Task { Regression, Classification };

struct Dataset {
  Matrix inputs;   ///< features x samples
  Matrix targets;  ///< regression targets, outputs x samples
  std::vector<int> labels;
  int classes = 0;
  Task task = Task::Classification;

  std::size_t size() const noexcept { return inputs.cols(); }
  void validate() const;
  Dataset subset(std::span<const std::size_t> columns) const;
};

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

/// Seeded mixture of `classes` isotropic unit-variance Gaussians in `dim`
/// dimensions, class means drawn as N(0, separation^2 / dim * I) so the
/// expected distance between means does not depend on `dim`. Labels
/// are balanced round-robin before shuffling.
TrainTestSplit gaussian_mixture(std::uint64_t seed, int classes = 4, std::size_t dim = 32,
                                std::size_t n_train = 2000, std::size_t n_test = 500, double separation = 3.0);

/// Gaussian inputs with targets produced by `teacher`.
Dataset teacher_regression(const Network& teacher, std::size_t samples, Rng& rng);

enum class Stage { Pretrain, Finetune, Scratch };

struct TrainPlan {
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  /// (epoch, multiplier) pairs: from that epoch on lr = learning_rate * multiplier.
  std::vector<std::pair<std::size_t, double>> lr_schedule;
  std::size_t batch_size = 100;
  std::uint64_t seed = 1;
  Stage stage = Stage::Pretrain;

  void validate() const;
  double multiplier_at(std::size_t epoch) const;
};

struct EpochRecord {
  std::string stage;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;  ///< NaN for regression
  double test_acc = 0.0;   ///< NaN for regression or without test set
};

struct TrainResult {
  Network network;
  std::vector<EpochRecord> history;
};

/// Mini-batch AdamW training with the STE coarse gradient. The epoch order of
/// samples comes from Rng(plan.seed).child("data-order"), so runs with equal
/// seeds see identical batches whatever network they train. Returns the
/// network in inference mode. Throws NonFiniteError on divergence.
TrainResult train(Network net, const Dataset& data, const TrainPlan& plan, const Dataset* test = nullptr,
                  const std::string& stage_label = "");

/// Fraction of columns whose argmax matches the label (inference semantics).
double accuracy(const Network& net, const Dataset& data);

std::string to_string(Stage stage);

}  // namespace duolab
