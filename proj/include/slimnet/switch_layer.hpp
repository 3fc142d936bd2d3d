#pragma once

#include <cstdint>
#include <vector>

#include "slimnet/tensor.hpp"

namespace slimnet {

// Screener settings for sign-variance based channel deactivation.
// momentum is the EMA decay in (0,1); threshold is the variance level above
// which a channel is flagged (may be +infinity to disable screening).
struct ScreenerConfig {
  double momentum = 0.9;
  double threshold = 0.5;
};

inline void validate(const ScreenerConfig& cfg) {
  if (!(cfg.momentum > 0.0) || !(cfg.momentum < 1.0)) {
    throw ConfigError("screener momentum must lie in (0,1), got " + std::to_string(cfg.momentum));
  }
  if (!(cfg.threshold > 0.0)) {
    throw ConfigError("screener threshold must be positive");
  }
}

// Per-channel multiplicative gate. Channel i scales its entire slice by
// beta[i]. Invariants: inactive channels hold beta == 0 exactly and are never
// updated or reactivated; sign statistics are tracked for active channels
// only, one observation per optimizer update.
struct SwitchLayer {
  Tensor beta;                        // rank 1, length = channels
  std::vector<std::uint8_t> active;   // 1 while the channel participates
  std::vector<double> sign_mean;      // EMA of sign(beta)
  std::vector<double> sign_var;       // EMA variance of sign(beta), in [0,4]
  std::vector<std::uint8_t> seen;     // statistics received >= 1 observation

  SwitchLayer() = default;

  explicit SwitchLayer(Tensor initial_beta)
      : beta(std::move(initial_beta)),
        active(beta.size(), 1),
        sign_mean(beta.size(), 0.0),
        sign_var(beta.size(), 0.0),
        seen(beta.size(), 0) {
    if (beta.rank() != 1) {
      throw DimensionError("switch beta must be rank 1, got " + shape_string(beta.shape()));
    }
  }

  // Standard initialization: beta ~ N(0,1).
  static SwitchLayer random(std::size_t channels, SeededRng& rng) {
    Tensor b({channels});
    for (std::size_t i = 0; i < channels; ++i) b[i] = rng.normal();
    return SwitchLayer(std::move(b));
  }

  std::size_t channels() const noexcept { return beta.size(); }

  std::size_t active_count() const noexcept {
    std::size_t n = 0;
    for (std::uint8_t a : active) n += a;
    return n;
  }
};

// out[i, ...] = beta[i] * x[i, ...]; axis 0 of x indexes channels.
inline Tensor switch_forward(const SwitchLayer& sw, const Tensor& x) {
  return channel_scale(x, sw.beta);
}

struct SwitchGrads {
  Tensor input;
  Tensor beta;
};

// Gradients of (data term + lambda * |beta|_1) wrt input and beta, where the
// data term's upstream gradient is grad_out. Subgradient convention
// sign(0) = 0 for the penalty. Inactive channels receive exactly zero beta
// gradient so no step can move them off zero.
inline SwitchGrads switch_backward(const SwitchLayer& sw, const Tensor& x, const Tensor& grad_out,
                                   double lambda) {
  if (lambda < 0.0) throw ArgumentError("switch penalty weight must be nonnegative");
  if (!x.same_shape(grad_out)) {
    throw DimensionError("switch_backward: x " + shape_string(x.shape()) + " vs grad_out " +
                         shape_string(grad_out.shape()));
  }
  const std::size_t channels = sw.channels();
  if (x.rank() == 0 || x.extent(0) != channels) {
    throw DimensionError("switch_backward: input " + shape_string(x.shape()) + " vs " +
                         std::to_string(channels) + " channels");
  }
  SwitchGrads g{channel_scale(grad_out, sw.beta), Tensor({channels})};
  const std::size_t block = x.size() / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    if (!sw.active[c]) continue;
    double acc = 0.0;
    for (std::size_t j = 0; j < block; ++j) {
      acc += x[c * block + j] * grad_out[c * block + j];
    }
    const double b = sw.beta[c];
    const double sgn = (b > 0.0) ? 1.0 : (b < 0.0 ? -1.0 : 0.0);
    g.beta[c] = acc + lambda * sgn;
  }
  return g;
}

// Records one sign observation per active channel. sign(0) counts as +1.
// First observation seeds the statistics (mean = s, var = 0); afterwards the
// mean updates before the variance so the variance uses the fresh mean.
inline void observe_signs(SwitchLayer& sw, const ScreenerConfig& cfg) {
  validate(cfg);
  const double mu = cfg.momentum;
  for (std::size_t c = 0; c < sw.channels(); ++c) {
    if (!sw.active[c]) continue;
    const double s = (sw.beta[c] >= 0.0) ? 1.0 : -1.0;
    if (!sw.seen[c]) {
      sw.sign_mean[c] = s;
      sw.sign_var[c] = 0.0;
      sw.seen[c] = 1;
      continue;
    }
    sw.sign_mean[c] = mu * sw.sign_mean[c] + (1.0 - mu) * s;
    const double d = s - sw.sign_mean[c];
    sw.sign_var[c] = mu * sw.sign_var[c] + (1.0 - mu) * d * d;
  }
}

// Active channels whose sign variance exceeded the threshold, ascending.
inline std::vector<std::size_t> screen(const SwitchLayer& sw, const ScreenerConfig& cfg) {
  validate(cfg);
  std::vector<std::size_t> flagged;
  for (std::size_t c = 0; c < sw.channels(); ++c) {
    if (sw.active[c] && sw.seen[c] && sw.sign_var[c] > cfg.threshold) flagged.push_back(c);
  }
  return flagged;
}

// Zeroes beta and marks the channels inactive. Idempotent per channel.
inline void deactivate(SwitchLayer& sw, const std::vector<std::size_t>& channels) {
  for (std::size_t c : channels) {
    if (c >= sw.channels()) {
      throw ArgumentError("deactivate: channel " + std::to_string(c) + " out of range for " +
                          std::to_string(sw.channels()));
    }
    sw.beta[c] = 0.0;
    sw.active[c] = 0;
  }
}

// Drops the listed channels from all per-channel bookkeeping. Indices must be
// sorted, unique, and must not cover every channel.
inline void shrink_switch(SwitchLayer& sw, const std::vector<std::size_t>& removed) {
  if (removed.empty()) return;
  sw.beta = remove_along_axis(sw.beta, 0, removed);
  auto filter = [&removed](auto& v) {
    auto out = v;
    out.clear();
    std::size_t r = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (r < removed.size() && removed[r] == i) {
        ++r;
        continue;
      }
      out.push_back(v[i]);
    }
    v = std::move(out);
  };
  filter(sw.active);
  filter(sw.sign_mean);
  filter(sw.sign_var);
  filter(sw.seen);
}

}  // namespace slimnet
