// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#include "duolab/duo_transform.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

namespace duolab {

namespace {

constexpr double kEquivalenceTolerance = 1e-9;
constexpr double kThresholdMargin = 1e-9;

bool near_threshold(const Network& net, const ForwardCache& cache, std::size_t t) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const ActivationSpec& act = net.layers[i].act;
    if (!act.levels) continue;
    const std::vector<double> thresholds = quantizer_thresholds(*act.levels);
    const Matrix& y = cache.layers[i].act_in;
    for (std::size_t u = 0; u < y.rows(); ++u) {
      const double v = y(u, t);
      for (double th : thresholds)
        if (std::abs(v - th) < kThresholdMargin) return true;
    }
  }
  return false;
}

}  // namespace

std::size_t plan_width(std::size_t n_baseline, WidthMode mode) {
  if (n_baseline < 2) throw std::invalid_argument("plan_width: baseline width must be at least 2");
  std::size_t w = 0;
  if (mode == WidthMode::Half) {
    w = static_cast<std::size_t>(std::floor(static_cast<double>(n_baseline) / std::numbers::sqrt2));
    // Guard the floor against rounding of the quotient.
    while ((w + 1) * (w + 1) * 2 <= n_baseline * n_baseline) ++w;
    while (w * w * 2 > n_baseline * n_baseline) --w;
  } else {
    w = n_baseline / 2;
  }
  if (w == 0) throw std::invalid_argument("plan_width: planned width is zero");
  return w;
}

std::vector<double> decouple_shifts(int levels) {
  if (levels < 3) throw TransformError("decouple: need at least 3 levels");
  std::vector<double> shifts;
  for (int i = 1; i < levels; ++i) shifts.push_back(0.5 - (2.0 * i - 1.0) / (2.0 * (levels - 1)));
  std::sort(shifts.begin(), shifts.end());
  return shifts;
}

DecoupleResult decouple(const Network& net, WidthMode mode) {
  net.validate();
  if (net.mode != Mode::Inference) throw TransformError("decouple: network must be in inference mode");
  if (net.layers.size() < 2) throw TransformError("decouple: no hidden layer to decouple");

  DecoupleResult res;
  res.map.mode = mode;
  Network& out = res.network;
  out.mode = Mode::Inference;
  out.layers = net.layers;

  for (std::size_t i = 0; i + 1 < net.layers.size(); ++i) {
    // Copy: layer i's columns were already expanded when layer i-1 was decoupled.
    const Layer src = out.layers[i];
    const std::string where = "decouple: layer " + std::to_string(i);
    if (!src.act.levels) throw TransformError(where + " has a full-precision activation");
    if (*src.act.levels == 2) throw TransformError(where + " is already binary (nothing to decouple)");
    if (!src.bn) throw TransformError(where + " has no batch norm before its activation");
    if (mode == WidthMode::Quarter && src.replicas != 1) {
      throw TransformError(where + " already has replicated units; quarter mode needs plain layers");
    }
    const int levels = *src.act.levels;
    const std::size_t rep = static_cast<std::size_t>(levels - 1);
    const std::vector<double> shifts = decouple_shifts(levels);
    const double scale = 1.0 / static_cast<double>(rep);
    const std::size_t old_width = src.width();

    Layer dst;
    dst.act = ActivationSpec::quantized(2, src.act.ste);
    if (mode == WidthMode::Half) {
      dst.weights = src.weights;
      dst.bias = src.bias;
      dst.replicas = src.replicas * rep;
    } else {
      dst.weights = Matrix(src.sums() * rep, src.fan_in());
      for (std::size_t j = 0; j < src.sums(); ++j)
        for (std::size_t p = 0; p < rep; ++p) {
          const auto row = src.weights.row(j);
          std::copy(row.begin(), row.end(), dst.weights.row(j * rep + p).begin());
          if (src.has_bias()) dst.bias.push_back(src.bias[j]);
        }
      dst.replicas = 1;
    }
    BatchNorm bn = *src.bn;
    for (Vector* v : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var}) v->assign(old_width * rep, 0.0);
    DecoupledLayer info{i, levels, rep, mode == WidthMode::Half, {}};
    for (std::size_t u = 0; u < old_width; ++u)
      for (std::size_t p = 0; p < rep; ++p) {
        const std::size_t nu = u * rep + p;
        bn.gamma[nu] = src.bn->gamma[u];
        bn.beta[nu] = src.bn->beta[u] + shifts[p];
        bn.running_mean[nu] = src.bn->running_mean[u];
        bn.running_var[nu] = src.bn->running_var[u];
        info.units.push_back({u, shifts[p], scale});
      }
    dst.bn = std::move(bn);
    out.layers[i] = std::move(dst);

    // Fan-out: each input column of the next layer is split into rep scaled copies.
    Layer& next = out.layers[i + 1];
    Matrix w(next.weights.rows(), old_width * rep);
    for (std::size_t s = 0; s < next.weights.rows(); ++s)
      for (std::size_t u = 0; u < old_width; ++u)
        for (std::size_t p = 0; p < rep; ++p) w(s, u * rep + p) = next.weights(s, u) * scale;
    next.weights = std::move(w);
    res.map.layers.push_back(std::move(info));
  }
  out.validate();
  return res;
}

EquivalenceReport verify_equivalence(const Network& coupled, const Network& decoupled, const DecoupleMap& map,
                                     std::size_t trials, Rng& rng, std::size_t batch_size) {
  coupled.validate();
  decoupled.validate();
  if (coupled.input_dim() != decoupled.input_dim() || coupled.output_dim() != decoupled.output_dim()) {
    throw ShapeError("verify_equivalence: networks have different input or output dimensions");
  }
  for (const DecoupledLayer& dl : map.layers) {
    if (dl.layer >= decoupled.layers.size() || decoupled.layers[dl.layer].width() != dl.units.size()) {
      throw ShapeError("verify_equivalence: decouple map does not describe the decoupled network");
    }
  }
  Network a = coupled, b = decoupled;
  a.mode = b.mode = Mode::Inference;

  EquivalenceReport rep;
  const std::size_t dim = a.input_dim();
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Matrix x = gaussian_matrix(rng, dim, batch_size);
    ForwardResult fa = forward_frozen(a, x);
    for (int attempt = 0; attempt < 100; ++attempt) {
      bool redrawn = false;
      for (std::size_t t = 0; t < batch_size; ++t) {
        if (!near_threshold(a, fa.cache, t)) continue;
        for (std::size_t r = 0; r < dim; ++r) x(r, t) = rng.normal();
        ++rep.resampled;
        redrawn = true;
      }
      if (!redrawn) break;
      fa = forward_frozen(a, x);
    }
    const Matrix ob = predict(b, x);
    const auto va = fa.output.values();
    const auto vb = ob.values();
    for (std::size_t k = 0; k < va.size(); ++k) rep.max_abs_diff = std::max(rep.max_abs_diff, std::abs(va[k] - vb[k]));
  }
  rep.pass = rep.max_abs_diff <= kEquivalenceTolerance;
  return rep;
}

std::string to_string(WidthMode mode) { return mode == WidthMode::Half ? "half" : "quarter"; }

WidthMode parse_width_mode(const std::string& text) {
  if (text == "half") return WidthMode::Half;
  if (text == "quarter") return WidthMode::Quarter;
  throw std::invalid_argument("unknown width mode '" + text + "' (expected half or quarter)");
}

std::string decouple_map_to_json(const DecoupleMap& map) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(map.mode);
  j["layers"] = nlohmann::ordered_json::array();
  for (const DecoupledLayer& l : map.layers) {
    nlohmann::ordered_json jl;
    jl["layer"] = l.layer;
    jl["levels"] = l.levels;
    jl["replication"] = l.replication;
    jl["shared_weighted_sum"] = l.shared_weighted_sum;
    jl["units"] = nlohmann::ordered_json::array();
    for (const DecoupledUnit& u : l.units) {
      jl["units"].push_back({{"source_unit", u.source_unit}, {"shift", u.shift}, {"fanout_scale", u.fanout_scale}});
    }
    j["layers"].push_back(std::move(jl));
  }
  return j.dump(2) + "\n";
}

DecoupleMap decouple_map_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    DecoupleMap map;
    map.mode = parse_width_mode(j.at("mode").get<std::string>());
    for (const auto& jl : j.at("layers")) {
      DecoupledLayer l{jl.at("layer").get<std::size_t>(), jl.at("levels").get<int>(),
                       jl.at("replication").get<std::size_t>(), jl.at("shared_weighted_sum").get<bool>(), {}};
      for (const auto& ju : jl.at("units")) {
        l.units.push_back({ju.at("source_unit").get<std::size_t>(), ju.at("shift").get<double>(),
                           ju.at("fanout_scale").get<double>()});
      }
      map.layers.push_back(std::move(l));
    }
    return map;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("decouple map: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("decouple map: ") + e.what());
  }
}

}  // namespace duolab
