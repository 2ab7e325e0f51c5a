// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "duolab/duo_transform.hpp"
#include "duolab/train.hpp"

namespace duolab {

struct BinaryDuoConfig {
  std::vector<std::size_t> baseline_widths{64, 64};
  WidthMode mode = WidthMode::Half;
  TrainPlan pretrain;
  /// Defaults to the pretrain plan with lr x 0.02 and weight decay / 20.
  std::optional<TrainPlan> finetune;
  Ste ste = Ste::relu1();
  std::uint64_t seed = 1;
  std::size_t equivalence_trials = 20;
  /// Pretrained coupled model; when set the coupled arm skips training.
  std::optional<Network> coupled_init;

  TrainPlan resolved_finetune() const;
};

struct ArmResult {
  std::vector<std::size_t> widths;  ///< activation units per hidden layer
  std::size_t weight_count = 0;
  std::size_t parameter_count = 0;
  std::vector<EpochRecord> history;
};

struct BinaryDuoResult {
  double baseline_acc = 0.0;
  double coupled_acc = 0.0;
  double decoupled_acc_pre_ft = 0.0;
  double decoupled_acc_post_ft = 0.0;
  double scratch_acc = 0.0;

  ArmResult baseline;
  ArmResult coupled;
  ArmResult decoupled;  ///< fine-tune history
  ArmResult scratch;
  EquivalenceReport equivalence;

  Network coupled_network;
  Network decoupled_network;  ///< before fine-tuning
  Network finetuned_network;
  DecoupleMap map;
};

/// Hidden layers: bias-free, batch-normalized, quantized; output: linear with bias.
Network make_classifier(std::size_t input_dim, const std::vector<std::size_t>& widths, int classes, int levels,
                        const Ste& ste, Rng& rng);

/// Fresh He-initialized weights, zero biases, BN reset to identity. Keeps the
/// architecture (including shared weighted sums).
void reinitialize(Network& net, Rng& rng);

/// Activation units per hidden layer.
std::vector<std::size_t> hidden_widths(const Network& net);

/// Baseline binary arm, coupled ternary arm, decouple + verify, fine-tune, and
/// the decoupled architecture trained from scratch. All arms use the same
/// data order. Accuracies are on `test`. Throws TransformError if the
/// decoupled model disagrees with the coupled one before fine-tuning.
BinaryDuoResult run_binaryduo(const BinaryDuoConfig& cfg, const Dataset& train_set, const Dataset& test);

}  // namespace duolab
