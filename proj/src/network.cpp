// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#include "duolab/network.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace duolab {

namespace {

constexpr std::size_t kPredictBlock = 256;

std::uint64_t fnv_bytes(std::uint64_t h, const void* p, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t fnv_doubles(std::uint64_t h, std::span<const double> v) {
  return fnv_bytes(h, v.data(), v.size() * sizeof(double));
}

void append(Vector& out, std::span<const double> v) { out.insert(out.end(), v.begin(), v.end()); }

// Weighted sum (+ bias), replicated rows, BN, activation for one layer.
// `batch_stats` selects training-mode BN; stats are written to `mean`/`var`.
void layer_forward(const Layer& layer, const Matrix& input, bool batch_stats, LayerCache& c, Matrix& out,
                   Vector* batch_mean, Vector* batch_var) {
  const std::size_t n = input.cols();
  const std::size_t r = layer.replicas;
  const std::size_t width = layer.width();
  Matrix z = matmul(layer.weights, input);
  if (layer.has_bias()) {
    for (std::size_t j = 0; j < z.rows(); ++j)
      for (double& v : z.row(j)) v += layer.bias[j];
  }
  if (r == 1) {
    c.pre_bn = std::move(z);
  } else {
    c.pre_bn = Matrix(width, n);
    for (std::size_t u = 0; u < width; ++u) std::memcpy(c.pre_bn.row(u).data(), z.row(u / r).data(), n * sizeof(double));
  }

  if (layer.bn) {
    const BatchNorm& bn = *layer.bn;
    c.normalized = Matrix(width, n);
    c.act_in = Matrix(width, n);
    c.inv_std.assign(width, 0.0);
    if (batch_mean) batch_mean->assign(width, 0.0);
    if (batch_var) batch_var->assign(width, 0.0);
#pragma omp parallel for schedule(static) if (width * n > 65536)
    for (std::size_t u = 0; u < width; ++u) {
      auto x = c.pre_bn.row(u);
      double mean, var;
      if (batch_stats) {
        double s = 0.0;
        for (double v : x) s += v;
        mean = s / static_cast<double>(n);
        double q = 0.0;
        for (double v : x) q += (v - mean) * (v - mean);
        var = q / static_cast<double>(n);
        if (batch_mean) (*batch_mean)[u] = mean;
        if (batch_var) (*batch_var)[u] = var;
      } else {
        mean = bn.running_mean[u];
        var = bn.running_var[u];
      }
      const double inv_std = 1.0 / std::sqrt(var + bn.eps);
      c.inv_std[u] = inv_std;
      auto xh = c.normalized.row(u);
      auto y = c.act_in.row(u);
      for (std::size_t t = 0; t < n; ++t) {
        xh[t] = (x[t] - mean) * inv_std;
        y[t] = bn.gamma[u] * xh[t] + bn.beta[u];
      }
    }
  } else {
    c.act_in = c.pre_bn;
  }

  out = Matrix(width, n);
  const auto in = c.act_in.values();
  auto o = out.values();
  if (layer.act.is_linear()) {
    std::memcpy(o.data(), in.data(), in.size() * sizeof(double));
  } else {
    activate_all(in, o, layer.act);
  }
}

ForwardResult forward_impl(const Network& net, const Matrix& batch, Network* stats_sink) {
  net.validate();
  if (batch.cols() == 0) throw ShapeError("forward: empty batch");
  if (batch.rows() != net.input_dim()) {
    throw ShapeError("forward: batch has " + std::to_string(batch.rows()) + " rows, network expects " +
                     std::to_string(net.input_dim()));
  }
  const bool training = net.mode == Mode::Training;
  ForwardResult res;
  res.cache.mode = net.mode;
  res.cache.layers.resize(net.layers.size());
  Matrix current = batch;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& layer = net.layers[i];
    LayerCache& c = res.cache.layers[i];
    c.input = std::move(current);
    Vector mean, var;
    Matrix out;
    layer_forward(layer, c.input, training, c, out, &mean, &var);
    if (training && layer.bn && stats_sink) {
      BatchNorm& bn = *stats_sink->layers[i].bn;
      const double n = static_cast<double>(batch.cols());
      const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
      for (std::size_t u = 0; u < bn.size(); ++u) {
        bn.running_mean[u] = (1.0 - bn.momentum) * bn.running_mean[u] + bn.momentum * mean[u];
        bn.running_var[u] = (1.0 - bn.momentum) * bn.running_var[u] + bn.momentum * var[u] * unbias;
      }
    }
    current = std::move(out);
  }
  res.output = std::move(current);
  res.cache.fingerprint = network_fingerprint(stats_sink ? *stats_sink : net);
  return res;
}

}  // namespace

BatchNorm BatchNorm::identity(std::size_t units) {
  BatchNorm bn;
  bn.gamma.assign(units, 1.0);
  bn.beta.assign(units, 0.0);
  bn.running_mean.assign(units, 0.0);
  bn.running_var.assign(units, 1.0);
  return bn;
}

std::size_t Layer::parameter_count() const noexcept {
  return weights.size() + bias.size() + (bn ? 2 * bn->size() : 0);
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.parameter_count();
  return n;
}

std::size_t Network::weight_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size();
  return n;
}

void Network::validate() const {
  if (layers.empty()) throw std::invalid_argument("network has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    const std::string where = "layer " + std::to_string(i);
    if (l.weights.empty()) throw ShapeError(where + ": empty weight matrix");
    if (l.replicas == 0) throw ShapeError(where + ": zero replicas");
    if (l.has_bias() && l.bias.size() != l.sums()) throw ShapeError(where + ": bias length mismatch");
    if (l.bn) {
      const std::size_t w = l.width();
      const BatchNorm& bn = *l.bn;
      if (bn.gamma.size() != w || bn.beta.size() != w || bn.running_mean.size() != w || bn.running_var.size() != w)
        throw ShapeError(where + ": batch-norm arrays do not match layer width");
    } else if (l.replicas != 1) {
      throw ShapeError(where + ": replicated units require batch norm");
    }
    if (l.act.levels && *l.act.levels < 2) throw std::invalid_argument(where + ": fewer than 2 levels");
    if (i > 0 && layers[i - 1].width() != l.fan_in()) {
      throw ShapeError(where + ": fan-in " + std::to_string(l.fan_in()) + " does not match previous width " +
                       std::to_string(layers[i - 1].width()));
    }
  }
  if (!layers.back().act.is_linear()) throw std::invalid_argument("final layer activation must be linear");
}

Network make_network(std::size_t input_dim, const std::vector<LayerShape>& shapes, Rng& rng) {
  Network net;
  std::size_t fan_in = input_dim;
  for (const auto& s : shapes) {
    Layer l;
    l.weights = gaussian_matrix(rng, s.width, fan_in);
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& w : l.weights.values()) w *= scale;
    if (s.bias) l.bias.assign(s.width, 0.0);
    if (s.batch_norm) l.bn = BatchNorm::identity(s.width);
    l.act = s.act;
    net.layers.push_back(std::move(l));
    fan_in = s.width;
  }
  net.validate();
  return net;
}

GradientBundle GradientBundle::from_blocks(std::vector<Vector> blocks) {
  GradientBundle g;
  g.per_layer = std::move(blocks);
  for (const auto& b : g.per_layer) append(g.total, b);
  return g;
}

Vector flatten_parameters(const Network& net) {
  Vector theta;
  theta.reserve(net.parameter_count());
  for (const auto& l : net.layers) {
    append(theta, l.weights.values());
    append(theta, l.bias);
    if (l.bn) {
      append(theta, l.bn->gamma);
      append(theta, l.bn->beta);
    }
  }
  return theta;
}

void assign_parameters(Network& net, std::span<const double> theta) {
  if (theta.size() != net.parameter_count()) throw ShapeError("assign_parameters: length mismatch");
  std::size_t pos = 0;
  auto take = [&](std::span<double> dst) {
    std::memcpy(dst.data(), theta.data() + pos, dst.size() * sizeof(double));
    pos += dst.size();
  };
  for (auto& l : net.layers) {
    take(l.weights.values());
    take(l.bias);
    if (l.bn) {
      take(l.bn->gamma);
      take(l.bn->beta);
    }
  }
}

std::pair<std::size_t, std::size_t> weight_range(const Network& net, std::size_t layer) {
  std::size_t pos = 0;
  for (std::size_t i = 0; i < layer; ++i) pos += net.layers[i].parameter_count();
  return {pos, pos + net.layers.at(layer).weights.size()};
}

std::uint64_t network_fingerprint(const Network& net) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& l : net.layers) {
    const std::uint64_t dims[3] = {l.weights.rows(), l.weights.cols(), l.replicas};
    h = fnv_bytes(h, dims, sizeof dims);
    h = fnv_doubles(h, l.weights.values());
    h = fnv_doubles(h, l.bias);
    if (l.bn) {
      h = fnv_doubles(h, l.bn->gamma);
      h = fnv_doubles(h, l.bn->beta);
      h = fnv_doubles(h, l.bn->running_mean);
      h = fnv_doubles(h, l.bn->running_var);
    }
  }
  return h;
}

ForwardResult forward(Network& net, const Matrix& batch) { return forward_impl(net, batch, &net); }

ForwardResult forward_frozen(const Network& net, const Matrix& batch) { return forward_impl(net, batch, nullptr); }

Matrix predict(const Network& net, const Matrix& batch) {
  net.validate();
  if (batch.cols() == 0) throw ShapeError("predict: empty batch");
  if (batch.rows() != net.input_dim()) throw ShapeError("predict: input dimension mismatch");
  const std::size_t n = batch.cols();
  const std::size_t blocks = (n + kPredictBlock - 1) / kPredictBlock;
  Matrix out(net.output_dim(), n);
#pragma omp parallel for schedule(dynamic) if (blocks > 1)
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t t0 = b * kPredictBlock;
    const std::size_t cols = std::min(kPredictBlock, n - t0);
    Matrix current(batch.rows(), cols);
    for (std::size_t r = 0; r < batch.rows(); ++r)
      std::memcpy(current.row(r).data(), batch.row(r).data() + t0, cols * sizeof(double));
    for (const Layer& layer : net.layers) {
      LayerCache c;
      Matrix next;
      layer_forward(layer, current, false, c, next, nullptr, nullptr);
      current = std::move(next);
    }
    for (std::size_t r = 0; r < out.rows(); ++r)
      std::memcpy(out.row(r).data() + t0, current.row(r).data(), cols * sizeof(double));
  }
  return out;
}

GradientBundle backward(const Network& net, const ForwardCache& cache, const Matrix& loss_grad) {
  if (cache.layers.size() != net.layers.size() || cache.fingerprint != network_fingerprint(net) ||
      cache.mode != net.mode) {
    throw std::invalid_argument("backward: cache does not belong to this network state (stale cache)");
  }
  const std::size_t n = cache.layers.front().input.cols();
  if (loss_grad.rows() != net.output_dim() || loss_grad.cols() != n) {
    throw ShapeError("backward: loss gradient shape does not match network output");
  }
  const bool training = cache.mode == Mode::Training;
  std::vector<Vector> blocks(net.layers.size());
  Matrix d_act = loss_grad;
  for (std::size_t ii = net.layers.size(); ii-- > 0;) {
    const Layer& layer = net.layers[ii];
    const LayerCache& c = cache.layers[ii];
    const std::size_t width = layer.width();
    const std::size_t r = layer.replicas;

    Matrix d_y = std::move(d_act);
    if (!layer.act.is_linear()) {
      auto dy = d_y.values();
      const auto y = c.act_in.values();
      for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= activation_derivative(y[i], layer.act);
    }

    Vector d_gamma, d_beta;
    Matrix d_pre;
    if (layer.bn) {
      const BatchNorm& bn = *layer.bn;
      d_gamma.assign(width, 0.0);
      d_beta.assign(width, 0.0);
      d_pre = Matrix(width, n);
      const double nn = static_cast<double>(n);
#pragma omp parallel for schedule(static) if (width * n > 65536)
      for (std::size_t u = 0; u < width; ++u) {
        const auto dy = d_y.row(u);
        const auto xh = c.normalized.row(u);
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
          sum_dy += dy[t];
          sum_dy_xh += dy[t] * xh[t];
        }
        d_gamma[u] = sum_dy_xh;
        d_beta[u] = sum_dy;
        const double g = bn.gamma[u] * c.inv_std[u];
        auto dx = d_pre.row(u);
        if (training) {
          for (std::size_t t = 0; t < n; ++t) dx[t] = g * (dy[t] - sum_dy / nn - xh[t] * sum_dy_xh / nn);
        } else {
          for (std::size_t t = 0; t < n; ++t) dx[t] = g * dy[t];
        }
      }
    } else {
      d_pre = std::move(d_y);
    }

    Matrix d_z;
    if (r == 1) {
      d_z = std::move(d_pre);
    } else {
      d_z = Matrix(layer.sums(), n);
      for (std::size_t j = 0; j < layer.sums(); ++j) {
        auto dz = d_z.row(j);
        for (std::size_t q = 0; q < r; ++q) {
          const auto src = d_pre.row(j * r + q);
          for (std::size_t t = 0; t < n; ++t) dz[t] += src[t];
        }
      }
    }

    Vector& block = blocks[ii];
    const Matrix d_w = matmul_nt(d_z, c.input);
    append(block, d_w.values());
    if (layer.has_bias()) {
      for (std::size_t j = 0; j < layer.sums(); ++j) {
        double s = 0.0;
        for (double v : d_z.row(j)) s += v;
        block.push_back(s);
      }
    }
    if (layer.bn) {
      append(block, d_gamma);
      append(block, d_beta);
    }
    if (ii > 0) d_act = matmul_tn(layer.weights, d_z);
  }
  return GradientBundle::from_blocks(std::move(blocks));
}

}  // namespace duolab
