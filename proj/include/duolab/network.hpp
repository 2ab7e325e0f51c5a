// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "duolab/activation.hpp"
#include "duolab/core_math.hpp"

namespace duolab {

struct BatchNorm {
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  /// gamma = 1, beta = 0, running stats (0, 1).
  static BatchNorm identity(std::size_t units);
  std::size_t size() const noexcept { return gamma.size(); }

  friend bool operator==(const BatchNorm&, const BatchNorm&) = default;
};

/// Fully connected block: weighted sum -> (replicate) -> (BatchNorm) -> activation.
///
/// `weights` is fan_out x fan_in. Each weighted sum feeds `replicas`
/// consecutive BN/activation units, so the layer emits fan_out * replicas
/// values; unit u = j * replicas + q reads weighted sum j. Replicas > 1 only
/// arise from decoupling, where the units differ in their BN bias.
struct Layer {
  Matrix weights;
  Vector bias;  ///< empty when absent
  std::optional<BatchNorm> bn;
  ActivationSpec act;
  std::size_t replicas = 1;

  std::size_t fan_in() const noexcept { return weights.cols(); }
  std::size_t sums() const noexcept { return weights.rows(); }
  std::size_t width() const noexcept { return weights.rows() * replicas; }
  bool has_bias() const noexcept { return !bias.empty(); }
  /// weights + bias + gamma + beta.
  std::size_t parameter_count() const noexcept;

  friend bool operator==(const Layer&, const Layer&) = default;
};

enum class Mode : std::uint8_t { Training = 0, Inference = 1 };

struct Network {
  std::vector<Layer> layers;
  Mode mode = Mode::Training;

  std::size_t input_dim() const { return layers.front().fan_in(); }
  std::size_t output_dim() const { return layers.back().width(); }
  std::size_t parameter_count() const;
  /// Weight entries only (no bias / BN), the count used for size budgets.
  std::size_t weight_count() const;

  /// Throws ShapeError / std::invalid_argument when the layer chain is
  /// inconsistent or the last activation is not linear.
  void validate() const;

  friend bool operator==(const Network&, const Network&) = default;
};

struct LayerShape {
  std::size_t width;
  ActivationSpec act;
  bool batch_norm = false;
  bool bias = false;
};

/// He-initialized network, N(0, 2 / fan_in) weights, zero bias, identity BN.
Network make_network(std::size_t input_dim, const std::vector<LayerShape>& shapes, Rng& rng);

/// Per-layer parameter blocks; each block is the layer's weights (row-major),
/// then bias, then BN gamma, then BN beta. `total` concatenates the blocks in
/// layer order and is the flattening used by flatten_parameters.
struct GradientBundle {
  std::vector<Vector> per_layer;
  Vector total;

  static GradientBundle from_blocks(std::vector<Vector> blocks);
};

Vector flatten_parameters(const Network& net);
void assign_parameters(Network& net, std::span<const double> theta);
/// Flattened index range [first, last) of layer i's weight matrix.
std::pair<std::size_t, std::size_t> weight_range(const Network& net, std::size_t layer);

struct LayerCache {
  Matrix input;      ///< fan_in x n, activation entering the layer
  Matrix pre_bn;     ///< width x n, replicated weighted sums (+bias)
  Matrix normalized; ///< width x n, x-hat (BN layers only)
  Matrix act_in;     ///< width x n, quantizer / activation input
  Vector inv_std;    ///< per unit, BN layers only
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Mode mode = Mode::Training;
  std::uint64_t fingerprint = 0;
};

struct ForwardResult {
  Matrix output;
  ForwardCache cache;
};

/// Forward pass over a batch (columns are samples). In training mode BN uses
/// batch statistics and updates the running statistics in `net`.
ForwardResult forward(Network& net, const Matrix& batch);

/// Forward pass that never touches running statistics. Training-mode BN still
/// normalizes with batch statistics.
ForwardResult forward_frozen(const Network& net, const Matrix& batch);

/// Output only, inference semantics, columns processed in independent blocks.
Matrix predict(const Network& net, const Matrix& batch);

/// Coarse gradient: backprop with each activation derivative replaced by the
/// STE derivative. `loss_grad` is d loss / d output. Throws
/// std::invalid_argument if the cache was produced for different parameters.
GradientBundle backward(const Network& net, const ForwardCache& cache, const Matrix& loss_grad);

/// Hash of shapes and parameter bytes; identifies the state a cache belongs to.
std::uint64_t network_fingerprint(const Network& net);

}  // namespace duolab
