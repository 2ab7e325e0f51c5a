// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#include "duolab/cosim.hpp"

#include <stdexcept>

namespace duolab {

namespace {

Network make_probe_network(const CosimConfig& cfg, Rng rng) {
  std::vector<LayerShape> shapes;
  for (std::size_t i = 0; i + 1 < cfg.weight_layers; ++i) shapes.push_back({cfg.width, cfg.activation});
  shapes.push_back({1, ActivationSpec::linear()});
  Network net = make_network(cfg.width, shapes, rng);
  net.mode = Mode::Inference;
  return net;
}

}  // namespace

std::string layer_label(std::size_t index) { return "fc" + std::to_string(index + 1); }

CosimSetup CosimSetup::build(const CosimConfig& cfg) {
  if (cfg.width == 0 || cfg.samples == 0 || cfg.weight_layers == 0) {
    throw std::invalid_argument("cosim: width, samples and weight_layers must be positive");
  }
  CosimSetup s;
  s.config = cfg;
  const Rng root(cfg.seed);
  Rng data_rng = root.child("data");
  s.inputs = gaussian_matrix(data_rng, cfg.width, cfg.samples);
  s.model = make_probe_network(cfg, root.child("model"));
  s.target = cfg.target_is_model ? s.model : make_probe_network(cfg, root.child("target"));
  s.targets = predict(s.target, s.inputs);

  const ForwardResult fr = forward_frozen(s.model, s.inputs);
  Matrix grad = fr.output;
  auto g = grad.values();
  const auto t = s.targets.values();
  const double inv_n = 1.0 / static_cast<double>(cfg.samples);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (g[i] - t[i]) * inv_n;
  s.coarse = backward(s.model, fr.cache, grad);
  return s;
}

CosimReport compare_gradients(const CosimSetup& setup, const Vector& reference, const std::string& experiment,
                              double epsilon_or_sigma, std::size_t esg_directions) {
  const Network& net = setup.model;
  if (reference.size() != net.weight_count()) throw ShapeError("compare_gradients: reference length mismatch");
  CosimReport rep;
  rep.experiment = experiment;
  rep.epsilon_or_sigma = epsilon_or_sigma;
  rep.seed = setup.config.seed;
  rep.sample_count = setup.config.samples;
  rep.esg_directions = esg_directions;
  rep.activation_desc = to_string(setup.config.activation);
  rep.ste_desc = to_string(setup.config.activation.ste);

  std::size_t pos = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const std::size_t len = net.layers[i].weights.size();
    const std::span<const double> ref(reference.data() + pos, len);
    const Vector& coarse = setup.coarse.per_layer[i];
    if (norm2(coarse) == 0.0) throw UndefinedSimilarityError(layer_label(i) + ": coarse gradient is zero");
    if (norm2(ref) == 0.0) throw UndefinedSimilarityError(layer_label(i) + ": " + experiment + " gradient is zero");
    rep.per_layer_cosim.push_back(cosine_similarity(coarse, ref));
    pos += len;
  }
  if (norm2(setup.coarse.total) == 0.0) throw UndefinedSimilarityError("total: coarse gradient is zero");
  rep.total_cosim = cosine_similarity(setup.coarse.total, reference);
  return rep;
}

CosimReport run_cosim_experiment(const CosimConfig& cfg) { return epsilon_sweep(cfg, {cfg.epsilon}).front(); }

std::vector<CosimReport> epsilon_sweep(const CosimConfig& cfg, const std::vector<double>& epsilons) {
  const CosimSetup setup = CosimSetup::build(cfg);
  std::vector<CosimReport> out;
  for (double eps : epsilons) {
    const Vector d = network_cdg(setup.model, setup.inputs, setup.targets, eps, cfg.workers);
    out.push_back(compare_gradients(setup, d, "cdg", eps));
  }
  return out;
}

Vector cosim_esg(const CosimSetup& setup, double sigma, std::size_t n_samples) {
  const NetworkLoss loss(setup.model, setup.inputs, setup.targets);
  Rng rng = Rng(setup.config.seed).child("esg");
  return esg(loss.weights_evaluator(), flatten_weights(setup.model), sigma, n_samples, rng, setup.config.workers);
}

std::vector<CosimReport> sigma_sweep(const CosimConfig& cfg, const std::vector<double>& sigmas,
                                     std::size_t n_samples) {
  const CosimSetup setup = CosimSetup::build(cfg);
  std::vector<CosimReport> out;
  for (double sigma : sigmas) out.push_back(compare_gradients(setup, cosim_esg(setup, sigma, n_samples), "esg", sigma, n_samples));
  return out;
}

}  // namespace duolab
