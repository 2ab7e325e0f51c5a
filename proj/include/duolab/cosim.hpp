// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "duolab/grad_probe.hpp"

namespace duolab {

/// Toy setting for measuring gradient mismatch: Gaussian inputs X (width x
/// samples), an evaluating network F and an independently initialized target
/// network F* of the same shape, loss (1/2n) sum (F(X) - F*(X))^2.
///
/// `weight_layers` counts weight matrices: all but the last are width x width
/// and use `activation`, the last is 1 x width and linear. No bias, no BN.
struct CosimConfig {
  std::size_t weight_layers = 3;
  std::size_t width = 32;
  std::size_t samples = 100000;
  ActivationSpec activation = ActivationSpec::quantized(2);
  double epsilon = 1e-3;
  std::uint64_t seed = 1;
  int workers = 0;
  /// Use the evaluating network as its own target (zero loss at theta).
  bool target_is_model = false;
};

struct CosimReport {
  std::string experiment;  ///< "cdg" or "esg"
  std::vector<double> per_layer_cosim;
  double total_cosim = 0.0;
  double epsilon_or_sigma = 0.0;
  std::uint64_t seed = 0;
  std::size_t sample_count = 0;
  std::size_t esg_directions = 0;  ///< N for esg, 0 for cdg
  std::string activation_desc;
  std::string ste_desc;
};

/// Dataset, both networks and the coarse gradient, built once per config so
/// sweeps share them.
struct CosimSetup {
  CosimConfig config;
  Network model;
  Network target;
  Matrix inputs;
  Matrix targets;
  GradientBundle coarse;  ///< weight gradients, one block per layer

  static CosimSetup build(const CosimConfig& cfg);
};

/// Per-layer and concatenated cosine between the coarse gradient and a
/// reference gradient laid out like flatten_weights. A zero block on either
/// side throws UndefinedSimilarityError naming the layer.
CosimReport compare_gradients(const CosimSetup& setup, const Vector& reference, const std::string& experiment,
                              double epsilon_or_sigma, std::size_t esg_directions = 0);

CosimReport run_cosim_experiment(const CosimConfig& cfg);

std::vector<CosimReport> epsilon_sweep(const CosimConfig& cfg, const std::vector<double>& epsilons);

/// ESG counterpart; the same N directions (scaled by sigma) are used at every sigma.
std::vector<CosimReport> sigma_sweep(const CosimConfig& cfg, const std::vector<double>& sigmas,
                                     std::size_t n_samples = 1024);

/// ESG of the harness loss over the model weights, directions drawn from
/// Rng(seed).child("esg").
Vector cosim_esg(const CosimSetup& setup, double sigma, std::size_t n_samples);

std::string layer_label(std::size_t index);  ///< "fc1", "fc2", ...

}  // namespace duolab
