// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace duolab {

enum class SteKind { ReLU1, Steep, SwishSign, Polynomial, Identity };

/// Backward surrogate for a quantizer, together with the differentiable
/// approximation g it is the derivative of. All approximations live in the
/// [0, 1] output frame of the quantizer.
///
/// SwishSign and Polynomial are defined in the literature on [-1, 1]; they are
/// mapped here through u = 2x - 1, y = (h(u) + 1) / 2. Their constants are
/// configuration, not fixed facts: SwishSign uses beta = 5 unless given.
struct Ste {
  SteKind kind = SteKind::ReLU1;
  /// Slope for Steep, beta for SwishSign, unused otherwise.
  double param = 0.0;

  static Ste relu1() { return {SteKind::ReLU1, 0.0}; }
  static Ste steep(double slope) { return {SteKind::Steep, slope}; }
  static Ste swish_sign(double beta = 5.0) { return {SteKind::SwishSign, beta}; }
  static Ste polynomial() { return {SteKind::Polynomial, 0.0}; }
  static Ste identity() { return {SteKind::Identity, 0.0}; }

  friend bool operator==(const Ste&, const Ste&) = default;
};

/// Forward quantizer (level count, or none for full precision) plus STE.
///
/// Full precision means the STE's approximation g is the actual activation and
/// backward uses its exact derivative; with Ste::identity() the unit is linear.
struct ActivationSpec {
  std::optional<int> levels;
  Ste ste;

  static ActivationSpec quantized(int levels, Ste ste = Ste::relu1()) { return {levels, ste}; }
  static ActivationSpec full_precision(Ste ste = Ste::relu1()) { return {std::nullopt, ste}; }
  static ActivationSpec linear() { return {std::nullopt, Ste::identity()}; }

  bool is_quantized() const noexcept { return levels.has_value(); }
  bool is_linear() const noexcept { return !levels && ste.kind == SteKind::Identity; }

  friend bool operator==(const ActivationSpec&, const ActivationSpec&) = default;
};

/// round(clip(x, 0, 1) * (L - 1)) / (L - 1), ties rounded away from zero.
double quantize(double x, int levels);

namespace detail {
// quantize() without the level check; `steps` = L - 1. floor() plus the
// exact fractional part equals std::round for non-negative input.
inline double quantize_steps(double x, double steps) {
  const double y = std::clamp(x, 0.0, 1.0) * steps;
  const double r = std::floor(y);
  return (r + (y - r >= 0.5 ? 1.0 : 0.0)) / steps;
}
}  // namespace detail

/// Input values at which quantize(., levels) jumps: (2i - 1) / (2(L - 1)).
std::vector<double> quantizer_thresholds(int levels);

/// g(x). Identity has no approximation and throws std::invalid_argument.
double ste_forward_approx(double x, const Ste& ste);

/// g'(x); 1 everywhere for Identity.
double ste_derivative(double x, const Ste& ste);

double activate(double x, const ActivationSpec& act);

/// out[i] = activate(in[i], act); sizes must match.
void activate_all(std::span<const double> in, std::span<double> out, const ActivationSpec& act);
double activation_derivative(double x, const ActivationSpec& act);

struct CumulativeDifference {
  double value = 0.0;
  double error_estimate = 0.0;
};

/// Integral of |quantize(x, levels) - g(x)| over the real line, by adaptive
/// Gauss-Kronrod quadrature on the pieces between jumps and kinks.
/// Throws std::runtime_error carrying the achieved error when it exceeds
/// max(tolerance, tolerance * value, 1e-8) per piece.
CumulativeDifference cumulative_difference(const Ste& ste, int levels, double tolerance = 1e-10);

std::string to_string(const Ste& ste);
std::string to_string(const ActivationSpec& act);

/// Accepts relu1, steep<slope> (e.g. steep4), steep:<slope>, swishsign,
/// swishsign:<beta>, poly, identity.
Ste parse_ste(const std::string& text);

/// Accepts binary, ternary, <k>bit, levels<L>, full (alias fp), linear.
/// The STE is supplied separately.
ActivationSpec parse_activation(const std::string& text, Ste ste);

}  // namespace duolab
