#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "slimnet/layers.hpp"

namespace slimnet {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void validate(const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0) {
    throw ConfigError("adam decay rates must lie in [0,1)");
  }
  if (!(cfg.eps > 0.0)) throw ConfigError("adam eps must be positive");
}

// Bias-corrected Adam over a network's trainable tensors. Moments are keyed
// by (layer index, role); layer indices stay stable across channel removal,
// which only shrinks tensors, so the key space survives garbage collection.
// Frozen entries (switch channels with active == 0) are skipped entirely:
// neither the parameter nor its moments move.
class AdamState {
 public:
  struct Moments {
    Tensor m, v;
  };

  AdamState() = default;

  AdamState(Network& net, AdamConfig cfg, bool include_switches = true)
      : cfg_(cfg), include_switches_(include_switches) {
    validate(cfg_);
    for (const ParamRef& ref : trainable_parameters(net, include_switches_)) {
      moments_[ref.key] = {Tensor(ref.value->shape()), Tensor(ref.value->shape())};
    }
  }

  double learning_rate() const noexcept { return cfg_.lr; }
  void set_learning_rate(double lr) {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    cfg_.lr = lr;
  }

  std::uint64_t step_count() const noexcept { return t_; }
  void set_step_count(std::uint64_t t) noexcept { t_ = t; }

  bool tracks(const ParamKey& key) const { return moments_.contains(key); }
  bool includes_switches() const noexcept { return include_switches_; }

  Moments& moments(const ParamKey& key) {
    auto it = moments_.find(key);
    if (it == moments_.end()) throw StateError("no moments tracked for " + to_string(key));
    return it->second;
  }

  // One update over every tracked parameter. grads must hold an entry of
  // matching shape for each tracked key.
  void step(Network& net, const Gradients& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const ParamRef& ref : trainable_parameters(net, include_switches_)) {
      auto mit = moments_.find(ref.key);
      if (mit == moments_.end()) {
        throw StateError("network has untracked parameter " + to_string(ref.key));
      }
      auto git = grads.params.find(ref.key);
      if (git == grads.params.end()) {
        throw StateError("missing gradient for " + to_string(ref.key));
      }
      Tensor& param = *ref.value;
      Moments& mom = mit->second;
      const Tensor& g = git->second;
      if (!g.same_shape(param) || !mom.m.same_shape(param)) {
        throw StateError("stale shapes for " + to_string(ref.key) + ": param " +
                         shape_string(param.shape()) + ", grad " + shape_string(g.shape()) +
                         ", moments " + shape_string(mom.m.shape()));
      }
      for (std::size_t j = 0; j < param.size(); ++j) {
        if (ref.freeze_mask && !(*ref.freeze_mask)[j]) continue;
        mom.m[j] = cfg_.beta1 * mom.m[j] + (1.0 - cfg_.beta1) * g[j];
        mom.v[j] = cfg_.beta2 * mom.v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = mom.m[j] / bc1;
        const double vhat = mom.v[j] / bc2;
        param[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  // Shrinks the moment tensors for one parameter alongside a channel removal.
  // Surviving entries keep their values bit for bit.
  void shrink(const ParamKey& key, std::size_t axis, const std::vector<std::size_t>& indices) {
    Moments& mom = moments(key);
    mom.m = remove_along_axis(mom.m, axis, indices);
    mom.v = remove_along_axis(mom.v, axis, indices);
  }

 private:
  AdamConfig cfg_;
  bool include_switches_ = true;
  std::uint64_t t_ = 0;
  std::map<ParamKey, Moments> moments_;
};

// Plateau learning-rate policy: after `patience` consecutive epochs without a
// strict improvement of the validation metric, divide the rate by `factor`;
// training stops once the rate falls below `min_lr`.
struct PlateauSchedule {
  int patience = 5;
  double factor = 10.0;
  double min_lr = 1e-7;

  double best = -std::numeric_limits<double>::infinity();
  int stale = 0;
};

inline void validate(const PlateauSchedule& s) {
  if (s.patience <= 0) throw ConfigError("schedule patience must be positive");
  if (!(s.factor > 1.0)) throw ConfigError("schedule factor must exceed 1");
  if (!(s.min_lr > 0.0)) throw ConfigError("schedule min_lr must be positive");
}

struct ScheduleDecision {
  double lr = 0.0;
  bool reduced = false;
  bool stop = false;
};

// Feeds one end-of-epoch validation metric. Ties do not count as improvement.
// stop is monotone: the rate never increases, so once it crosses min_lr every
// later decision also stops.
inline ScheduleDecision schedule_update(PlateauSchedule& s, double metric, double lr) {
  validate(s);
  ScheduleDecision d;
  if (metric > s.best) {
    s.best = metric;
    s.stale = 0;
  } else if (++s.stale >= s.patience) {
    lr /= s.factor;
    s.stale = 0;
    d.reduced = true;
  }
  d.lr = lr;
  d.stop = lr < s.min_lr;
  return d;
}

}  // namespace slimnet
