// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#include "duolab/grad_probe.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace duolab {

namespace {

int thread_count(int workers) { return workers > 0 ? workers : omp_get_max_threads(); }

double mse(const Matrix& pred, const Matrix& target) {
  double s = 0.0;
  const auto p = pred.values();
  const auto t = target.values();
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  return s / (2.0 * static_cast<double>(pred.cols()));
}

// Per-unit inference transform from weighted sum to activation input,
// evaluated exactly as in the forward pass.
struct UnitAffine {
  bool bn = false;
  double mean = 0.0, inv_std = 1.0, gamma = 1.0, beta = 0.0;
  double operator()(double z) const { return bn ? gamma * ((z - mean) * inv_std) + beta : z; }
};

struct LayerView {
  const Layer* layer;
  std::vector<UnitAffine> affine;  // per unit
  Matrix z;      // sums x n
  Matrix a;      // width x n
  Matrix z_t;    // n x sums
  Matrix a_t;    // n x width
  // Activations with flat pieces (quantizers, clip-style approximations):
  // per unit, (breakpoint, tolerance) pairs in weighted-sum space. A sum
  // that stays inside one flat piece, clear of its ends, keeps its output.
  bool filter = false;
  std::size_t cuts_per_unit = 0;
  Vector cuts;
  std::vector<char> flat;         // per piece, in activation-input order
  std::vector<char> orientation;  // per unit: 0 increasing, 1 decreasing, 2 constant

  Matrix w_t;    // fan_in x sums
  int fast_kind = 0;  // 1 quantized, 2 clip to [0, 1], 0 generic
  double steps = 1.0;

  // Same expressions as activate(), inlined for the hot loop.
  double act(double x) const {
    if (fast_kind == 1) return detail::quantize_steps(x, steps);
    if (fast_kind == 2) return std::clamp(x, 0.0, 1.0);
    return activate(x, layer->act);
  }

  bool unchanged(std::size_t u, double z_old, double z_new) const {
    if (!filter) return false;
    if (orientation[u] == 2) return true;
    const double* c = cuts.data() + u * 2 * cuts_per_unit;
    std::size_t above = 0;
    for (std::size_t i = 0; i < cuts_per_unit; ++i) {
      const double tau = c[2 * i], tol = c[2 * i + 1];
      if (!(std::abs(z_old - tau) > tol && std::abs(z_new - tau) > tol)) return false;
      if ((z_old < tau) != (z_new < tau)) return false;
      above += z_old > tau ? 1 : 0;
    }
    return flat[orientation[u] == 0 ? above : cuts_per_unit - above] != 0;
  }
};

struct Change {
  std::size_t unit;
  double delta;
};

// Breakpoints in activation-input space and which pieces are constant.
bool flat_pieces(const ActivationSpec& act, Vector& breaks, std::vector<char>& flat) {
  if (act.is_quantized()) {
    breaks = quantizer_thresholds(*act.levels);
    flat.assign(breaks.size() + 1, 1);
    return true;
  }
  switch (act.ste.kind) {
    case SteKind::ReLU1:
    case SteKind::Polynomial:
      breaks = {0.0, 1.0};
      break;
    case SteKind::Steep:
      breaks = {0.5 - 0.5 / act.ste.param, 0.5 + 0.5 / act.ste.param};
      break;
    default:
      return false;
  }
  flat = {1, 0, 1};
  return true;
}

void build_cuts(LayerView& v) {
  const Layer& l = *v.layer;
  Vector t;
  if (!flat_pieces(l.act, t, v.flat)) return;
  v.filter = true;
  v.cuts_per_unit = t.size();
  v.cuts.assign(l.width() * 2 * t.size(), 0.0);
  v.orientation.assign(l.width(), 0);
  for (std::size_t u = 0; u < l.width(); ++u) {
    const UnitAffine& f = v.affine[u];
    const double slope = f.bn ? f.gamma * f.inv_std : 1.0;
    if (slope == 0.0) {
      v.orientation[u] = 2;
      continue;
    }
    v.orientation[u] = slope > 0.0 ? 0 : 1;
    double* c = v.cuts.data() + u * 2 * t.size();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double tau = f.bn ? f.mean + (t[i] - f.beta) / slope : t[i];
      if (!std::isfinite(tau)) {
        v.filter = false;
        return;
      }
      c[2 * i] = tau;
      c[2 * i + 1] = 1e-8 * (1.0 + std::abs(tau) + std::abs(f.mean)) + 1e-10 * (1.0 + std::abs(f.beta)) / std::abs(slope);
    }
  }
}

}  // namespace

Vector cdg(const LossEvaluator& loss, std::span<const double> theta, double epsilon, int workers) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("cdg: epsilon must be positive");
  const std::size_t dim = theta.size();
  Vector grad(dim, 0.0);
  std::size_t bad = std::numeric_limits<std::size_t>::max();
  std::string error;
#pragma omp parallel num_threads(thread_count(workers))
  {
    Vector probe(theta.begin(), theta.end());
#pragma omp for schedule(dynamic, 4)
    for (std::size_t i = 0; i < dim; ++i) {
      probe[i] = theta[i] + epsilon;
      const double plus = loss(probe);
      probe[i] = theta[i] - epsilon;
      const double minus = loss(probe);
      probe[i] = theta[i];
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
#pragma omp critical(duolab_cdg_error)
        bad = std::min(bad, i);
        continue;
      }
      grad[i] = (plus - minus) / (2.0 * epsilon);
    }
  }
  if (bad != std::numeric_limits<std::size_t>::max()) {
    throw NonFiniteError("cdg: non-finite loss when probing coordinate " + std::to_string(bad));
  }
  return grad;
}

Vector esg(const LossEvaluator& loss, std::span<const double> theta, double sigma, std::size_t n_samples, Rng& rng,
           int workers) {
  if (!(sigma > 0.0)) throw std::invalid_argument("esg: sigma must be positive");
  if (n_samples == 0) throw std::invalid_argument("esg: need at least one sample");
  const std::size_t dim = theta.size();
  Matrix directions = gaussian_matrix(rng, n_samples, dim);
  Vector diff(n_samples, 0.0);
  bool non_finite = false;
#pragma omp parallel num_threads(thread_count(workers))
  {
    Vector probe(dim);
#pragma omp for schedule(dynamic, 1)
    for (std::size_t i = 0; i < n_samples; ++i) {
      const auto e = directions.row(i);
      for (std::size_t d = 0; d < dim; ++d) probe[d] = theta[d] + sigma * e[d];
      const double plus = loss(probe);
      for (std::size_t d = 0; d < dim; ++d) probe[d] = theta[d] - sigma * e[d];
      const double minus = loss(probe);
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
#pragma omp atomic write
        non_finite = true;
      }
      diff[i] = plus - minus;
    }
  }
  if (non_finite) throw NonFiniteError("esg: non-finite loss value");
  Vector grad(dim, 0.0);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const auto e = directions.row(i);
    for (std::size_t d = 0; d < dim; ++d) grad[d] += diff[i] * e[d];
  }
  const double scale = 1.0 / (2.0 * static_cast<double>(n_samples) * sigma);
  for (double& g : grad) g *= scale;
  return grad;
}

NetworkLoss::NetworkLoss(Network net, Matrix inputs, Matrix targets, bool recompute_batch_stats)
    : net_(std::move(net)),
      inputs_(std::move(inputs)),
      targets_(std::move(targets)),
      recompute_(recompute_batch_stats),
      dimension_(net_.parameter_count()) {
  net_.validate();
  if (inputs_.rows() != net_.input_dim() || targets_.rows() != net_.output_dim() || inputs_.cols() != targets_.cols() ||
      inputs_.cols() == 0) {
    throw ShapeError("NetworkLoss: dataset does not match network");
  }
  if (recompute_) net_.mode = Mode::Training;
}

double NetworkLoss::loss_of(const Network& net) const {
  if (recompute_) return mse(forward_frozen(net, inputs_).output, targets_);
  return mse(predict(net, inputs_), targets_);
}

double NetworkLoss::operator()(std::span<const double> theta) const {
  Network probe = net_;
  assign_parameters(probe, theta);
  return loss_of(probe);
}

double NetworkLoss::weights_only(std::span<const double> weights) const {
  Network probe = net_;
  std::size_t pos = 0;
  for (Layer& l : probe.layers) {
    auto w = l.weights.values();
    if (pos + w.size() > weights.size()) throw ShapeError("weights_only: vector too short");
    std::copy(weights.begin() + pos, weights.begin() + pos + w.size(), w.begin());
    pos += w.size();
  }
  if (pos != weights.size()) throw ShapeError("weights_only: vector too long");
  return loss_of(probe);
}

LossEvaluator NetworkLoss::evaluator() const {
  return [this](std::span<const double> theta) { return (*this)(theta); };
}

LossEvaluator NetworkLoss::weights_evaluator() const {
  return [this](std::span<const double> w) { return weights_only(w); };
}

void freeze_batch_statistics(Network& net, const Matrix& inputs) {
  net.mode = Mode::Training;
  const ForwardResult fr = forward_frozen(net, inputs);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    Layer& l = net.layers[i];
    if (!l.bn) continue;
    const LayerCache& c = fr.cache.layers[i];
    const std::size_t n = c.pre_bn.cols();
    for (std::size_t u = 0; u < l.width(); ++u) {
      // Recompute mean/var exactly as the forward pass does.
      double s = 0.0;
      for (double v : c.pre_bn.row(u)) s += v;
      const double mean = s / static_cast<double>(n);
      double q = 0.0;
      for (double v : c.pre_bn.row(u)) q += (v - mean) * (v - mean);
      l.bn->running_mean[u] = mean;
      l.bn->running_var[u] = q / static_cast<double>(n);
    }
  }
  net.mode = Mode::Inference;
}

Vector flatten_weights(const Network& net) {
  Vector w;
  w.reserve(net.weight_count());
  for (const auto& l : net.layers) w.insert(w.end(), l.weights.values().begin(), l.weights.values().end());
  return w;
}

Vector network_cdg(const Network& net, const Matrix& inputs, const Matrix& targets, double epsilon, int workers) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("network_cdg: epsilon must be positive");
  if (net.mode != Mode::Inference) {
    bool has_bn = false;
    for (const auto& l : net.layers) has_bn = has_bn || l.bn.has_value();
    if (has_bn) throw std::invalid_argument("network_cdg: batch-norm networks must be in inference mode");
  }
  net.validate();
  if (inputs.rows() != net.input_dim() || targets.rows() != net.output_dim() || inputs.cols() != targets.cols() ||
      inputs.cols() == 0) {
    throw ShapeError("network_cdg: dataset does not match network");
  }
  const std::size_t n = inputs.cols();
  const std::size_t n_layers = net.layers.size();

  // Baseline pass with caches in both unit-major and sample-major layout.
  std::vector<LayerView> views(n_layers);
  {
    Network frozen = net;
    frozen.mode = Mode::Inference;
    const ForwardResult fr = forward_frozen(frozen, inputs);
    for (std::size_t i = 0; i < n_layers; ++i) {
      const Layer& l = net.layers[i];
      LayerView& v = views[i];
      v.layer = &l;
      v.affine.resize(l.width());
      if (l.bn) {
        for (std::size_t u = 0; u < l.width(); ++u) {
          v.affine[u] = UnitAffine{true, l.bn->running_mean[u], fr.cache.layers[i].inv_std[u], l.bn->gamma[u],
                                   l.bn->beta[u]};
        }
      }
      v.z = Matrix(l.sums(), n);
      for (std::size_t j = 0; j < l.sums(); ++j) {
        const auto src = fr.cache.layers[i].pre_bn.row(j * l.replicas);
        std::copy(src.begin(), src.end(), v.z.row(j).begin());
      }
      v.a = (i + 1 < n_layers) ? fr.cache.layers[i + 1].input : fr.output;
      build_cuts(v);
      v.w_t = l.weights.transposed();
      if (l.act.is_quantized()) {
        v.fast_kind = 1;
        v.steps = static_cast<double>(*l.act.levels - 1);
      } else if (l.act.ste.kind == SteKind::ReLU1) {
        v.fast_kind = 2;
      }
      v.z_t = v.z.transposed();
      v.a_t = v.a.transposed();
    }
  }
  // Residual F(X) - target, sample-major.
  const Matrix residual_t = [&] {
    Matrix r = views.back().a;
    auto rv = r.values();
    const auto tv = targets.values();
    for (std::size_t i = 0; i < rv.size(); ++i) rv[i] -= tv[i];
    return r.transposed();
  }();

  std::vector<std::size_t> offsets(n_layers + 1, 0);
  for (std::size_t i = 0; i < n_layers; ++i) offsets[i + 1] = offsets[i] + net.layers[i].weights.size();
  const std::size_t total = offsets.back();

  Vector grad(total, 0.0);
#pragma omp parallel num_threads(thread_count(workers))
  {
    std::vector<Change> cur, next;
    Vector dz;
    cur.reserve(64);
    next.reserve(64);

    // Sum over samples of [(R + dF)^2 - R^2] when weight (li, j, k) moves by d.
    auto probe = [&](std::size_t li, std::size_t j, std::size_t k, double d) {
      const LayerView& v = views[li];
      const Layer& l = *v.layer;
      const auto prev = li == 0 ? inputs.row(k) : views[li - 1].a.row(k);
      const auto zj = v.z.row(j);
      const std::size_t r = l.replicas;
      double acc = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        const double a_in = prev[t];
        if (a_in == 0.0) continue;
        const double z_new = zj[t] + d * a_in;
        cur.clear();
        for (std::size_t q = 0; q < r; ++q) {
          const std::size_t u = j * r + q;
          if (v.unchanged(u, zj[t], z_new)) continue;
          const double delta = v.act(v.affine[u](z_new)) - v.a(u, t);
          if (delta != 0.0) cur.push_back({u, delta});
        }
        for (std::size_t lj = li + 1; lj < n_layers && !cur.empty(); ++lj) {
          const LayerView& w = views[lj];
          const std::size_t sums = w.layer->sums();
          const std::size_t reps = w.layer->replicas;
          const auto z_row = w.z_t.row(t);
          const auto a_row = w.a_t.row(t);
          dz.assign(sums, 0.0);
          for (const Change& c : cur) {
            const double* wr = w.w_t.row(c.unit).data();
            for (std::size_t s = 0; s < sums; ++s) dz[s] += wr[s] * c.delta;
          }
          next.clear();
          for (std::size_t s = 0; s < sums; ++s) {
            if (dz[s] == 0.0) continue;
            const double zs = z_row[s] + dz[s];
            for (std::size_t q = 0; q < reps; ++q) {
              const std::size_t u = s * reps + q;
              if (w.unchanged(u, z_row[s], zs)) continue;
              const double delta = w.act(w.affine[u](zs)) - a_row[u];
              if (delta != 0.0) next.push_back({u, delta});
            }
          }
          std::swap(cur, next);
        }
        if (cur.empty()) continue;
        const auto res = residual_t.row(t);
        for (const Change& c : cur) acc += c.delta * (2.0 * res[c.unit] + c.delta);
      }
      return acc;
    };

#pragma omp for schedule(dynamic, 8)
    for (std::size_t idx = 0; idx < total; ++idx) {
      const std::size_t li = static_cast<std::size_t>(
          std::upper_bound(offsets.begin(), offsets.end(), idx) - offsets.begin() - 1);
      const std::size_t local = idx - offsets[li];
      const std::size_t cols = net.layers[li].fan_in();
      const std::size_t j = local / cols, k = local % cols;
      const double w0 = net.layers[li].weights(j, k);
      const double plus = probe(li, j, k, (w0 + epsilon) - w0);
      const double minus = probe(li, j, k, (w0 - epsilon) - w0);
      grad[idx] = (plus - minus) / (2.0 * static_cast<double>(n)) / (2.0 * epsilon);
    }
  }
  for (std::size_t i = 0; i < total; ++i) {
    if (!std::isfinite(grad[i])) throw NonFiniteError("network_cdg: non-finite loss at weight " + std::to_string(i));
  }
  return grad;
}

namespace reference {

Vector network_cdg(const Network& net, const Matrix& inputs, const Matrix& targets, double epsilon) {
  Network frozen = net;
  frozen.mode = Mode::Inference;
  const NetworkLoss loss(std::move(frozen), inputs, targets);
  return cdg(loss.weights_evaluator(), flatten_weights(net), epsilon, 1);
}

}  // namespace reference

}  // namespace duolab
