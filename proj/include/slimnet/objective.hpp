#pragma once

#include <cmath>
#include <vector>

#include "slimnet/layers.hpp"

namespace slimnet {

// Penalty weights for the training objective
//   total = task + lambda * sum_switches |beta|_1 + lambda2 * sum_weights |theta|_p^p.
// The weight-norm term covers weight matrices and conv filters only; biases,
// normalization parameters, and betas stay out of it.
struct PenaltyConfig {
  double lambda = 0.0;
  double lambda2 = 0.0;
  double p = 1.0;
};

inline void validate(const PenaltyConfig& cfg) {
  if (cfg.lambda < 0.0 || cfg.lambda2 < 0.0) {
    throw ConfigError("penalty weights must be nonnegative");
  }
  if (cfg.p != 1.0 && cfg.p != 2.0) {
    throw ConfigError("weight-norm exponent must be 1 or 2, got " + std::to_string(cfg.p));
  }
}

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor grad;  // same shape as logits
};

// Mean over the batch of -log softmax(logits)[label], stabilized by the
// row max. grad is d(mean loss)/d(logits).
inline CrossEntropyResult cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw DimensionError("cross_entropy: logits must be rank 2, got " + shape_string(logits.shape()));
  }
  const std::size_t batch = logits.extent(0), classes = logits.extent(1);
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(batch));
  }
  CrossEntropyResult res;
  res.grad = Tensor(logits.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ArgumentError("cross_entropy: label " + std::to_string(y) + " out of range for " +
                          std::to_string(classes) + " classes");
    }
    const double* row = logits.data() + b * classes;
    double m = row[0];
    for (std::size_t c = 1; c < classes; ++c) m = std::max(m, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - m);
    const double logz = std::log(z);
    res.loss += logz - (row[static_cast<std::size_t>(y)] - m);
    double* grow = res.grad.data() + b * classes;
    for (std::size_t c = 0; c < classes; ++c) {
      grow[c] = std::exp(row[c] - m) / z / static_cast<double>(batch);
    }
    grow[static_cast<std::size_t>(y)] -= 1.0 / static_cast<double>(batch);
  }
  res.loss /= static_cast<double>(batch);
  return res;
}

// Fraction of rows whose argmax (first maximum wins) equals the label.
inline double accuracy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || labels.size() != logits.extent(0)) {
    throw DimensionError("accuracy: logits " + shape_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.extent(0), classes = logits.extent(1);
  std::size_t hits = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = logits.data() + b * classes;
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > row[best]) best = c;
    }
    if (static_cast<int>(best) == labels[b]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(batch);
}

struct LossBreakdown {
  double task = 0.0;
  double switch_l1 = 0.0;
  double weight_norm = 0.0;
  double total = 0.0;
};

// Assembles the full training objective from a task loss and the network's
// current parameters. total is exactly the sum of the three parts.
inline LossBreakdown penalized_loss(double task_loss, const Network& net,
                                    const PenaltyConfig& cfg) {
  validate(cfg);
  LossBreakdown b;
  b.task = task_loss;
  for (const Layer& layer : net.layers()) {
    if (const auto* sw = std::get_if<SwitchLayer>(&layer)) {
      b.switch_l1 += cfg.lambda * norm_p(sw->beta, 1.0);
    } else if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      b.weight_norm += cfg.lambda2 * norm_p(lin->weight, cfg.p);
    } else if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
      b.weight_norm += cfg.lambda2 * norm_p(conv->filters, cfg.p);
    }
  }
  b.total = b.task + b.switch_l1 + b.weight_norm;
  return b;
}

// Adds the penalty subgradients on top of the data-term gradients from
// backward(): lambda * sign(beta) on active switch channels (sign(0) = 0) and
// the weight-norm derivative on weight tensors. Call once per optimizer step.
inline void add_penalty_gradients(Network& net, Gradients& grads, const PenaltyConfig& cfg) {
  validate(cfg);
  for (const ParamRef& ref : trainable_parameters(net, true)) {
    auto it = grads.params.find(ref.key);
    if (it == grads.params.end()) continue;
    Tensor& g = it->second;
    if (!g.same_shape(*ref.value)) {
      throw DimensionError("penalty gradient: " + to_string(ref.key) + " grad " +
                           shape_string(g.shape()) + " vs param " + shape_string(ref.value->shape()));
    }
    if (ref.key.role == ParamRole::Beta && cfg.lambda > 0.0) {
      const Tensor& beta = *ref.value;
      for (std::size_t j = 0; j < beta.size(); ++j) {
        if (ref.freeze_mask && !(*ref.freeze_mask)[j]) continue;
        const double s = beta[j] > 0.0 ? 1.0 : (beta[j] < 0.0 ? -1.0 : 0.0);
        g[j] += cfg.lambda * s;
      }
    } else if (ref.is_weight && cfg.lambda2 > 0.0) {
      const Tensor& w = *ref.value;
      if (cfg.p == 1.0) {
        for (std::size_t j = 0; j < w.size(); ++j) {
          const double s = w[j] > 0.0 ? 1.0 : (w[j] < 0.0 ? -1.0 : 0.0);
          g[j] += cfg.lambda2 * s;
        }
      } else {
        for (std::size_t j = 0; j < w.size(); ++j) g[j] += cfg.lambda2 * 2.0 * w[j];
      }
    }
  }
}

}  // namespace slimnet
