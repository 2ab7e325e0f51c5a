// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The duolab Authors

#include "duolab/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace duolab {

LossResult mse_loss(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ShapeError("mse_loss: shape mismatch");
  if (pred.cols() == 0) throw ShapeError("mse_loss: empty batch");
  const double n = static_cast<double>(pred.cols());
  LossResult r{0.0, Matrix(pred.rows(), pred.cols())};
  const auto p = pred.values();
  const auto t = target.values();
  auto g = r.grad.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = p[i] - t[i];
    r.loss += e * e;
    g[i] = e / n;
  }
  r.loss /= 2.0 * n;
  return r;
}

LossResult softmax_xent_loss(const Matrix& logits, std::span<const int> labels) {
  const std::size_t n = logits.cols(), c = logits.rows();
  if (labels.size() != n) throw ShapeError("softmax_xent_loss: label count mismatch");
  if (n == 0) throw ShapeError("softmax_xent_loss: empty batch");
  LossResult r{0.0, Matrix(c, n)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t t = 0; t < n; ++t) {
    const int y = labels[t];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw std::out_of_range("softmax_xent_loss: label " + std::to_string(y) + " out of range");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, logits(k, t));
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(logits(k, t) - mx);
    const double log_z = std::log(z);
    r.loss += log_z - (logits(static_cast<std::size_t>(y), t) - mx);
    for (std::size_t k = 0; k < c; ++k) {
      const double p = std::exp(logits(k, t) - mx - log_z);
      r.grad(k, t) = (p - (static_cast<int>(k) == y ? 1.0 : 0.0)) * inv_n;
    }
  }
  r.loss *= inv_n;
  return r;
}

void adamw_step(std::span<double> params, std::span<const double> grads, OptimState& s, double lr_scale) {
  if (params.size() != grads.size()) throw ShapeError("adamw_step: parameter/gradient length mismatch");
  if (s.m.empty() && s.v.empty()) {
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
  }
  if (s.m.size() != params.size() || s.v.size() != params.size()) throw ShapeError("adamw_step: state not congruent");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) throw NonFiniteError("adamw_step: non-finite gradient at index " + std::to_string(i));
  }
  ++s.step;
  const double lr = s.learning_rate * lr_scale;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  const double decay = 1.0 - lr * s.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] *= decay;
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
    const double m_hat = s.m[i] / bc1;
    const double v_hat = s.v[i] / bc2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + s.adam_eps);
  }
}

void Dataset::validate() const {
  if (inputs.cols() == 0) throw ShapeError("dataset is empty");
  if (task == Task::Classification) {
    if (labels.size() != inputs.cols()) throw ShapeError("dataset: label count does not match inputs");
    for (int y : labels)
      if (y < 0 || y >= classes) throw std::out_of_range("dataset: label out of range");
  } else if (targets.cols() != inputs.cols()) {
    throw ShapeError("dataset: target count does not match inputs");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> columns) const {
  Dataset d;
  d.task = task;
  d.classes = classes;
  d.inputs = Matrix(inputs.rows(), columns.size());
  for (std::size_t r = 0; r < inputs.rows(); ++r)
    for (std::size_t c = 0; c < columns.size(); ++c) d.inputs(r, c) = inputs(r, columns[c]);
  if (task == Task::Classification) {
    d.labels.reserve(columns.size());
    for (std::size_t c : columns) d.labels.push_back(labels[c]);
  } else {
    d.targets = Matrix(targets.rows(), columns.size());
    for (std::size_t r = 0; r < targets.rows(); ++r)
      for (std::size_t c = 0; c < columns.size(); ++c) d.targets(r, c) = targets(r, columns[c]);
  }
  return d;
}

TrainTestSplit gaussian_mixture(std::uint64_t seed, int classes, std::size_t dim, std::size_t n_train,
                                std::size_t n_test, double separation) {
  if (classes < 2 || dim == 0 || n_train == 0) throw std::invalid_argument("gaussian_mixture: bad size");
  const Rng root(seed);
  Rng mean_rng = root.child("mixture-means");
  Matrix means = gaussian_matrix(mean_rng, dim, static_cast<std::size_t>(classes));
  const double scale = separation / std::sqrt(static_cast<double>(dim));
  for (double& v : means.values()) v *= scale;

  auto draw = [&](std::size_t n, Rng rng) {
    Dataset d;
    d.task = Task::Classification;
    d.classes = classes;
    d.inputs = Matrix(dim, n);
    d.labels.resize(n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    for (std::size_t t = 0; t < n; ++t) {
      const int y = static_cast<int>(order[t] % static_cast<std::size_t>(classes));
      d.labels[t] = y;
      for (std::size_t r = 0; r < dim; ++r) d.inputs(r, t) = means(r, static_cast<std::size_t>(y)) + rng.normal();
    }
    return d;
  };
  TrainTestSplit split;
  split.train = draw(n_train, root.child("mixture-train"));
  if (n_test > 0) split.test = draw(n_test, root.child("mixture-test"));
  return split;
}

Dataset teacher_regression(const Network& teacher, std::size_t samples, Rng& rng) {
  Dataset d;
  d.task = Task::Regression;
  d.inputs = gaussian_matrix(rng, teacher.input_dim(), samples);
  Network t = teacher;
  t.mode = Mode::Inference;
  d.targets = predict(t, d.inputs);
  return d;
}

void TrainPlan::validate() const {
  if (batch_size == 0) throw std::invalid_argument("train plan: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train plan: learning rate must be positive");
  for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
    if (lr_schedule[i].first >= std::max<std::size_t>(epochs, 1) && epochs > 0)
      throw std::invalid_argument("train plan: schedule epoch outside [0, epochs)");
    if (i > 0 && lr_schedule[i].first <= lr_schedule[i - 1].first)
      throw std::invalid_argument("train plan: schedule epochs must be strictly increasing");
  }
}

double TrainPlan::multiplier_at(std::size_t epoch) const {
  double m = 1.0;
  for (const auto& [e, mult] : lr_schedule)
    if (epoch >= e) m = mult;
  return m;
}

double accuracy(const Network& net, const Dataset& data) {
  if (data.task != Task::Classification) throw std::invalid_argument("accuracy: not a classification dataset");
  Network n = net;
  n.mode = Mode::Inference;
  const Matrix logits = predict(n, data.inputs);
  std::size_t correct = 0;
  for (std::size_t t = 0; t < logits.cols(); ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.rows(); ++k)
      if (logits(k, t) > logits(best, t)) best = k;
    if (static_cast<int>(best) == data.labels[t]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.cols());
}

TrainResult train(Network net, const Dataset& data, const TrainPlan& plan, const Dataset* test,
                  const std::string& stage_label) {
  plan.validate();
  data.validate();
  net.validate();
  if (data.inputs.rows() != net.input_dim()) throw ShapeError("train: input dimension mismatch");
  TrainResult res;
  if (plan.epochs == 0) {
    res.network = std::move(net);
    return res;
  }
  const bool classify = data.task == Task::Classification;
  const std::string label = stage_label.empty() ? to_string(plan.stage) : stage_label;
  OptimState opt;
  opt.learning_rate = plan.learning_rate;
  opt.weight_decay = plan.weight_decay;
  Rng order_rng = Rng(plan.seed).child("data-order");
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[order_rng.uniform_index(i)]);
    const double lr_scale = plan.multiplier_at(epoch);
    net.mode = Mode::Training;
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += plan.batch_size) {
      const std::size_t len = std::min(plan.batch_size, n - start);
      const Dataset batch = data.subset(std::span<const std::size_t>(order).subspan(start, len));
      ForwardResult fr = forward(net, batch.inputs);
      const LossResult lr =
          classify ? softmax_xent_loss(fr.output, batch.labels) : mse_loss(fr.output, batch.targets);
      if (!std::isfinite(lr.loss)) {
        throw NonFiniteError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches));
      }
      const GradientBundle g = backward(net, fr.cache, lr.grad);
      Vector theta = flatten_parameters(net);
      try {
        adamw_step(theta, g.total, opt, lr_scale);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError("train: epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches) + ": " +
                             e.what());
      }
      assign_parameters(net, theta);
      loss_sum += lr.loss;
      ++batches;
    }
    net.mode = Mode::Inference;
    EpochRecord rec;
    rec.stage = label;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rec.train_acc = classify ? accuracy(net, data) : nan;
    rec.test_acc = (classify && test) ? accuracy(net, *test) : nan;
    res.history.push_back(rec);
  }
  res.network = std::move(net);
  return res;
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::Pretrain:
      return "pretrain";
    case Stage::Finetune:
      return "finetune";
    case Stage::Scratch:
      return "scratch";
  }
  return "?";
}

}  // namespace duolab
