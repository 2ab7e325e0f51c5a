// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#pragma once

#include <string>
#include <vector>

#include "duolab/network.hpp"

namespace duolab {

enum class WidthMode { Half, Quarter };

/// Coupled width for a baseline width: floor(n / sqrt 2) for Half,
/// floor(n / 2) for Quarter. Throws std::invalid_argument for n < 2.
std::size_t plan_width(std::size_t n_baseline, WidthMode mode);

/// BN bias offsets that turn one L-level unit into L-1 binary units, in
/// ascending order: 0.5 - (2i - 1) / (2(L - 1)) for i = L-1 .. 1.
std::vector<double> decouple_shifts(int levels);

struct DecoupledUnit {
  std::size_t source_unit;
  double shift;
  double fanout_scale;
};

struct DecoupledLayer {
  std::size_t layer;
  int levels;
  std::size_t replication;   ///< L - 1
  bool shared_weighted_sum;  ///< Half: replicas read one weighted sum; Quarter: rows are copied
  std::vector<DecoupledUnit> units;
};

struct DecoupleMap {
  WidthMode mode = WidthMode::Half;
  std::vector<DecoupledLayer> layers;
};

struct DecoupleResult {
  Network network;
  DecoupleMap map;
};

/// Replace every hidden L-level activation unit by L-1 binary units.
///
/// Unit u becomes units [u (L-1), (u+1)(L-1)) with the same incoming weights,
/// gamma and running statistics, BN bias beta + shift, and each outgoing weight
/// of u copied to every replica and scaled by 1 / (L - 1). In Half mode the
/// replicas share the weighted sum (the layer's replica count grows); in
/// Quarter mode the weight rows themselves are copied so the decoupled layer
/// is an ordinary layer of twice the width.
///
/// Requires inference mode, BN before every hidden activation and L >= 3
/// everywhere; throws TransformError otherwise.
DecoupleResult decouple(const Network& net, WidthMode mode = WidthMode::Half);

struct EquivalenceReport {
  double max_abs_diff = 0.0;
  bool pass = false;
  std::size_t resampled = 0;  ///< inputs redrawn for lying near a threshold
};

/// Runs both networks in inference mode on `trials` Gaussian batches and
/// compares outputs; pass iff max |difference| <= 1e-9. Inputs that bring any
/// quantizer input of `coupled` within 1e-9 of a threshold are redrawn.
EquivalenceReport verify_equivalence(const Network& coupled, const Network& decoupled, const DecoupleMap& map,
                                     std::size_t trials, Rng& rng, std::size_t batch_size = 64);

std::string to_string(WidthMode mode);
WidthMode parse_width_mode(const std::string& text);

/// JSON text of the map (stable key order, one document).
std::string decouple_map_to_json(const DecoupleMap& map);
DecoupleMap decouple_map_from_json(const std::string& text);

}  // namespace duolab
