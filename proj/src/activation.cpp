// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#include "duolab/activation.hpp"
#include "duolab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace duolab {

namespace {

// SwishSign on [-1, 1] (BNN+): 2 sigmoid(bu) (1 + bu (1 - sigmoid(bu))) - 1.
double swish_sign(double u, double beta) {
  const double bu = beta * u;
  const double s = 1.0 / (1.0 + std::exp(-bu));
  return 2.0 * s * (1.0 + bu * (1.0 - s)) - 1.0;
}

double swish_sign_derivative(double u, double beta) {
  const double bu = beta * u;
  const double s = 1.0 / (1.0 + std::exp(-bu));
  // d/du of the above: 2 b s (1 - s) (2 + bu (1 - 2 s)).
  return 2.0 * beta * s * (1.0 - s) * (2.0 + bu * (1.0 - 2.0 * s));
}

// Bi-Real ApproxSign on [-1, 1].
double approx_sign(double u) {
  if (u < -1.0) return -1.0;
  if (u < 0.0) return 2.0 * u + u * u;
  if (u < 1.0) return 2.0 * u - u * u;
  return 1.0;
}

double approx_sign_derivative(double u) {
  if (u < -1.0 || u >= 1.0) return 0.0;
  return u < 0.0 ? 2.0 + 2.0 * u : 2.0 - 2.0 * u;
}

void check_levels(int levels) {
  if (levels < 2) throw std::invalid_argument("quantizer needs at least 2 levels");
}

// Points where g has a kink or |quantize - g| may be non-smooth, plus an
// interval outside which quantize == g to double precision.
struct Support {
  double lo, hi;
  std::vector<double> kinks;
};

Support approximation_support(const Ste& ste) {
  switch (ste.kind) {
    case SteKind::ReLU1:
      return {0.0, 1.0, {}};
    case SteKind::Steep: {
      const double half = 0.5 / ste.param;
      return {0.5 - half, 0.5 + half, {}};
    }
    case SteKind::Polynomial:
      return {0.0, 1.0, {0.5}};
    case SteKind::SwishSign: {
      // |h(u) -/+ 1| < 1e-30 once beta |u| > 75.
      const double half = 0.5 * 75.0 / ste.param;
      return {0.5 - half, 0.5 + half, {}};
    }
    case SteKind::Identity:
      break;
  }
  throw std::invalid_argument("identity STE has no bounded approximation");
}

}  // namespace

double quantize(double x, int levels) {
  check_levels(levels);
  return detail::quantize_steps(x, static_cast<double>(levels - 1));
}

std::vector<double> quantizer_thresholds(int levels) {
  check_levels(levels);
  std::vector<double> t;
  for (int i = 1; i < levels; ++i) t.push_back((2.0 * i - 1.0) / (2.0 * (levels - 1)));
  return t;
}

double ste_forward_approx(double x, const Ste& ste) {
  switch (ste.kind) {
    case SteKind::ReLU1:
      return std::clamp(x, 0.0, 1.0);
    case SteKind::Steep:
      return std::clamp(ste.param * (x - 0.5) + 0.5, 0.0, 1.0);
    case SteKind::SwishSign:
      return 0.5 * (swish_sign(2.0 * x - 1.0, ste.param) + 1.0);
    case SteKind::Polynomial:
      return 0.5 * (approx_sign(2.0 * x - 1.0) + 1.0);
    case SteKind::Identity:
      break;
  }
  throw std::invalid_argument("identity STE has no forward approximation");
}

double ste_derivative(double x, const Ste& ste) {
  switch (ste.kind) {
    case SteKind::ReLU1:
      return (x >= 0.0 && x <= 1.0) ? 1.0 : 0.0;
    case SteKind::Steep:
      return std::abs(x - 0.5) <= 0.5 / ste.param ? ste.param : 0.0;
    case SteKind::SwishSign:
      // chain rule: du/dx = 2 and dy/dh = 1/2 cancel.
      return swish_sign_derivative(2.0 * x - 1.0, ste.param);
    case SteKind::Polynomial:
      return approx_sign_derivative(2.0 * x - 1.0);
    case SteKind::Identity:
      return 1.0;
  }
  return 0.0;
}

double activate(double x, const ActivationSpec& act) {
  if (act.levels) return quantize(x, *act.levels);
  if (act.ste.kind == SteKind::Identity) return x;
  return ste_forward_approx(x, act.ste);
}

void activate_all(std::span<const double> in, std::span<double> out, const ActivationSpec& act) {
  if (in.size() != out.size()) throw ShapeError("activate_all: size mismatch");
  if (act.levels) {
    check_levels(*act.levels);
    const double steps = static_cast<double>(*act.levels - 1);
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = detail::quantize_steps(in[i], steps);
  } else if (act.ste.kind == SteKind::Identity) {
    std::copy(in.begin(), in.end(), out.begin());
  } else if (act.ste.kind == SteKind::ReLU1) {
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::clamp(in[i], 0.0, 1.0);
  } else {
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = ste_forward_approx(in[i], act.ste);
  }
}

double activation_derivative(double x, const ActivationSpec& act) {
  return ste_derivative(x, act.ste);
}

CumulativeDifference cumulative_difference(const Ste& ste, int levels, double tolerance) {
  check_levels(levels);
  const Support support = approximation_support(ste);

  std::vector<double> cuts = quantizer_thresholds(levels);
  cuts.insert(cuts.end(), support.kinks.begin(), support.kinks.end());
  cuts.push_back(support.lo);
  cuts.push_back(support.hi);
  // quantize saturates at 0 and 1 while g may still be moving (or vice versa).
  cuts.push_back(0.0);
  cuts.push_back(1.0);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  const double lo = std::min(support.lo, 0.0);
  const double hi = std::max(support.hi, 1.0);
  auto integrand = [&](double x) { return std::abs(quantize(x, levels) - ste_forward_approx(x, ste)); };

  CumulativeDifference out;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double a = cuts[i], b = cuts[i + 1];
    if (a < lo || b > hi || b <= a) continue;
    double err = 0.0;
    const double piece =
        boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, a, b, 20, tolerance, &err);
    out.value += piece;
    out.error_estimate += err;
  }
  // Roundoff bounds the estimate on very short pieces; 1e-8 absolute is accepted.
  const double allowed = std::max({tolerance, tolerance * out.value, 1e-8}) * static_cast<double>(cuts.size());
  if (out.error_estimate > allowed) {
    std::ostringstream msg;
    msg << "cumulative_difference(" << to_string(ste) << ", L=" << levels
        << ") did not converge: achieved error " << out.error_estimate;
    throw std::runtime_error(msg.str());
  }
  return out;
}

std::string to_string(const Ste& ste) {
  std::ostringstream s;
  switch (ste.kind) {
    case SteKind::ReLU1:
      return "relu1";
    case SteKind::Steep:
      s << "steep" << ste.param;
      return s.str();
    case SteKind::SwishSign:
      if (ste.param == 5.0) return "swishsign";
      s << "swishsign:" << ste.param;
      return s.str();
    case SteKind::Polynomial:
      return "poly";
    case SteKind::Identity:
      return "identity";
  }
  return "?";
}

std::string to_string(const ActivationSpec& act) {
  if (!act.levels) return act.ste.kind == SteKind::Identity ? "linear" : "full";
  switch (*act.levels) {
    case 2:
      return "binary";
    case 3:
      return "ternary";
    default:
      break;
  }
  const int l = *act.levels;
  if ((l & (l - 1)) == 0) {
    int bits = 0;
    while ((1 << bits) < l) ++bits;
    return std::to_string(bits) + "bit";
  }
  return "levels" + std::to_string(l);
}

Ste parse_ste(const std::string& text) {
  auto number_after = [&](std::size_t pos) {
    std::size_t used = 0;
    const std::string rest = text.substr(pos);
    double v = 0.0;
    try {
      v = std::stod(rest, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != rest.size() || !(v > 0.0)) throw std::invalid_argument("bad STE parameter in '" + text + "'");
    return v;
  };
  if (text == "relu1") return Ste::relu1();
  if (text == "poly" || text == "polynomial") return Ste::polynomial();
  if (text == "identity") return Ste::identity();
  if (text == "swishsign") return Ste::swish_sign();
  if (text.rfind("swishsign:", 0) == 0) return Ste::swish_sign(number_after(10));
  if (text.rfind("steep:", 0) == 0) return Ste::steep(number_after(6));
  if (text.rfind("steep", 0) == 0 && text.size() > 5) return Ste::steep(number_after(5));
  throw std::invalid_argument("unknown STE '" + text + "'");
}

ActivationSpec parse_activation(const std::string& text, Ste ste) {
  if (text == "binary") return ActivationSpec::quantized(2, ste);
  if (text == "ternary") return ActivationSpec::quantized(3, ste);
  if (text == "full" || text == "fp") {
    if (ste.kind == SteKind::Identity) return ActivationSpec::linear();
    return ActivationSpec::full_precision(ste);
  }
  if (text == "linear") return ActivationSpec::linear();
  try {
    if (text.size() > 3 && text.substr(text.size() - 3) == "bit") {
      const int bits = std::stoi(text.substr(0, text.size() - 3));
      if (bits >= 1 && bits <= 16) return ActivationSpec::quantized(1 << bits, ste);
    }
    if (text.rfind("levels", 0) == 0) {
      const int l = std::stoi(text.substr(6));
      if (l >= 2) return ActivationSpec::quantized(l, ste);
    }
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("unknown activation '" + text + "'");
}

}  // namespace duolab
