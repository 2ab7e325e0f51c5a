// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#include "duolab/binaryduo.hpp"

#include <cmath>
#include <stdexcept>

namespace duolab {

TrainPlan BinaryDuoConfig::resolved_finetune() const {
  if (finetune) return *finetune;
  TrainPlan p = pretrain;
  p.learning_rate = pretrain.learning_rate * 0.02;
  p.weight_decay = pretrain.weight_decay / 20.0;
  p.stage = Stage::Finetune;
  return p;
}

Network make_classifier(std::size_t input_dim, const std::vector<std::size_t>& widths, int classes, int levels,
                        const Ste& ste, Rng& rng) {
  if (classes < 2) throw std::invalid_argument("make_classifier: need at least 2 classes");
  std::vector<LayerShape> shapes;
  for (std::size_t w : widths) shapes.push_back({w, ActivationSpec::quantized(levels, ste), true, false});
  shapes.push_back({static_cast<std::size_t>(classes), ActivationSpec::linear(), false, true});
  Network net = make_network(input_dim, shapes, rng);
  net.mode = Mode::Inference;
  return net;
}

void reinitialize(Network& net, Rng& rng) {
  for (Layer& l : net.layers) {
    const double sd = std::sqrt(2.0 / static_cast<double>(l.fan_in()));
    for (double& w : l.weights.values()) w = sd * rng.normal();
    for (double& b : l.bias) b = 0.0;
    if (l.bn) {
      const double eps = l.bn->eps, mom = l.bn->momentum;
      l.bn = BatchNorm::identity(l.width());
      l.bn->eps = eps;
      l.bn->momentum = mom;
    }
  }
}

std::vector<std::size_t> hidden_widths(const Network& net) {
  std::vector<std::size_t> w;
  for (std::size_t i = 0; i + 1 < net.layers.size(); ++i) w.push_back(net.layers[i].width());
  return w;
}

namespace {

ArmResult summarize(const Network& net, std::vector<EpochRecord> history) {
  return {hidden_widths(net), net.weight_count(), net.parameter_count(), std::move(history)};
}

}  // namespace

BinaryDuoResult run_binaryduo(const BinaryDuoConfig& cfg, const Dataset& train_set, const Dataset& test) {
  if (train_set.task != Task::Classification || test.task != Task::Classification)
    throw std::invalid_argument("run_binaryduo: classification data required");
  if (cfg.baseline_widths.empty()) throw std::invalid_argument("run_binaryduo: no hidden layers");
  const TrainPlan ft = cfg.resolved_finetune();
  if (!(ft.learning_rate < cfg.pretrain.learning_rate))
    throw std::invalid_argument("run_binaryduo: fine-tune learning rate must be below the pretrain rate");

  const Rng root(cfg.seed);
  const std::size_t in = train_set.inputs.rows();
  const int classes = train_set.classes;
  TrainPlan pre = cfg.pretrain;
  pre.stage = Stage::Pretrain;
  BinaryDuoResult out;

  {
    Rng rng = root.child("baseline-init");
    Network net = make_classifier(in, cfg.baseline_widths, classes, 2, cfg.ste, rng);
    TrainResult r = train(std::move(net), train_set, pre, &test, "baseline");
    out.baseline_acc = accuracy(r.network, test);
    out.baseline = summarize(r.network, std::move(r.history));
  }

  std::vector<std::size_t> coupled_widths;
  for (std::size_t w : cfg.baseline_widths) coupled_widths.push_back(plan_width(w, cfg.mode));
  if (cfg.coupled_init) {
    const Network& net = *cfg.coupled_init;
    net.validate();
    if (net.input_dim() != in || net.output_dim() != static_cast<std::size_t>(classes))
      throw ShapeError("run_binaryduo: coupled checkpoint does not fit the dataset");
    out.coupled_acc = accuracy(net, test);
    out.coupled = summarize(net, {});
    out.coupled_network = net;
    out.coupled_network.mode = Mode::Inference;
  } else {
    Rng rng = root.child("coupled-init");
    Network net = make_classifier(in, coupled_widths, classes, 3, cfg.ste, rng);
    TrainResult r = train(std::move(net), train_set, pre, &test, "coupled");
    out.coupled_acc = accuracy(r.network, test);
    out.coupled = summarize(r.network, std::move(r.history));
    out.coupled_network = std::move(r.network);
  }

  DecoupleResult d = decouple(out.coupled_network, cfg.mode);
  Rng eq_rng = root.child("equivalence");
  out.equivalence = verify_equivalence(out.coupled_network, d.network, d.map, cfg.equivalence_trials, eq_rng);
  if (!out.equivalence.pass) throw TransformError("run_binaryduo: decoupled model is not equivalent to coupled model");
  out.decoupled_acc_pre_ft = accuracy(d.network, test);
  if (out.decoupled_acc_pre_ft != out.coupled_acc ||
      accuracy(d.network, train_set) != accuracy(out.coupled_network, train_set)) {
    throw TransformError("run_binaryduo: decoupled accuracy differs from coupled accuracy before fine-tuning");
  }
  out.decoupled_network = d.network;
  out.map = d.map;

  {
    TrainPlan p = ft;
    p.stage = Stage::Finetune;
    TrainResult r = train(d.network, train_set, p, &test, "finetune");
    out.decoupled_acc_post_ft = accuracy(r.network, test);
    out.decoupled = summarize(r.network, std::move(r.history));
    out.finetuned_network = std::move(r.network);
  }

  {
    Rng rng = root.child("scratch-init");
    Network net = d.network;
    reinitialize(net, rng);
    TrainPlan p = pre;
    p.stage = Stage::Scratch;
    TrainResult r = train(std::move(net), train_set, p, &test, "scratch");
    out.scratch_acc = accuracy(r.network, test);
    out.scratch = summarize(r.network, std::move(r.history));
  }
  return out;
}

}  // namespace duolab
