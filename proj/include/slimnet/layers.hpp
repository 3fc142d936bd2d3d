#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "slimnet/switch_layer.hpp"
#include "slimnet/tensor.hpp"

namespace slimnet {

enum class Mode { Train, Eval };

struct LinearLayer {
  Tensor weight;  // out x in
  Tensor bias;    // out

  LinearLayer() = default;

  LinearLayer(Tensor w, Tensor b) : weight(std::move(w)), bias(std::move(b)) {
    if (weight.rank() != 2 || bias.rank() != 1 || bias.size() != weight.extent(0)) {
      throw DimensionError("linear: weight " + shape_string(weight.shape()) + " vs bias " +
                           shape_string(bias.shape()));
    }
  }

  // Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero bias.
  static LinearLayer random(std::size_t out, std::size_t in, SeededRng& rng) {
    Tensor w({out, in});
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
    return LinearLayer(std::move(w), Tensor({out}));
  }

  std::size_t out_features() const { return weight.extent(0); }
  std::size_t in_features() const { return weight.extent(1); }
};

struct Conv2dLayer {
  Tensor filters;  // out x in x kh x kw
  Tensor bias;     // out
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv2dLayer() = default;

  Conv2dLayer(Tensor f, Tensor b, std::size_t stride_, std::size_t padding_)
      : filters(std::move(f)), bias(std::move(b)), stride(stride_), padding(padding_) {
    if (filters.rank() != 4 || bias.rank() != 1 || bias.size() != filters.extent(0)) {
      throw DimensionError("conv2d: filters " + shape_string(filters.shape()) + " vs bias " +
                           shape_string(bias.shape()));
    }
    if (stride == 0) throw ArgumentError("conv2d stride must be positive");
  }

  static Conv2dLayer random(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw,
                            std::size_t stride, std::size_t padding, SeededRng& rng) {
    Tensor f({out, in, kh, kw});
    const double bound = std::sqrt(6.0 / static_cast<double>(in * kh * kw));
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = rng.uniform(-bound, bound);
    return Conv2dLayer(std::move(f), Tensor({out}), stride, padding);
  }

  std::size_t out_channels() const { return filters.extent(0); }
  std::size_t in_channels() const { return filters.extent(1); }
  std::size_t kernel_h() const { return filters.extent(2); }
  std::size_t kernel_w() const { return filters.extent(3); }
};

// Channel-wise normalization. Training normalizes with batch statistics and
// refreshes the running estimates (biased variance, convention
// running <- (1 - stat_momentum) * running + stat_momentum * batch);
// evaluation normalizes with the running estimates.
struct BatchNormLayer {
  Tensor gamma, shift, running_mean, running_var;
  double eps = 1e-5;
  double stat_momentum = 0.1;
  std::size_t batches_tracked = 0;

  BatchNormLayer() = default;

  explicit BatchNormLayer(std::size_t channels)
      : gamma(Tensor::full({channels}, 1.0)),
        shift(Tensor({channels})),
        running_mean(Tensor({channels})),
        running_var(Tensor::full({channels}, 1.0)) {}

  std::size_t channels() const { return gamma.size(); }
};

struct ReluLayer {};

struct MaxPool2dLayer {
  std::size_t window = 2;
  std::size_t stride = 2;
};

struct FlattenLayer {};

using Layer =
    std::variant<LinearLayer, Conv2dLayer, BatchNormLayer, SwitchLayer, ReluLayer, MaxPool2dLayer,
                 FlattenLayer>;

inline const char* layer_type_name(const Layer& layer) {
  static constexpr const char* names[] = {"linear",  "conv2d",    "batchnorm", "switch",
                                          "relu",    "maxpool2d", "flatten"};
  return names[layer.index()];
}

enum class ParamRole : std::uint8_t { Weight, Bias, Gamma, Shift, Beta, RunningMean, RunningVar };

inline const char* param_role_name(ParamRole role) {
  switch (role) {
    case ParamRole::Weight: return "weight";
    case ParamRole::Bias: return "bias";
    case ParamRole::Gamma: return "gamma";
    case ParamRole::Shift: return "shift";
    case ParamRole::Beta: return "beta";
    case ParamRole::RunningMean: return "running_mean";
    case ParamRole::RunningVar: return "running_var";
  }
  return "?";
}

struct ParamKey {
  std::uint32_t layer = 0;
  ParamRole role = ParamRole::Weight;
  auto operator<=>(const ParamKey&) const = default;
};

inline std::string to_string(const ParamKey& k) {
  return "layer " + std::to_string(k.layer) + " " + param_role_name(k.role);
}

// Handle to one trainable tensor. is_weight marks tensors inside the weight
// penalty scope (weight matrices and conv filters; biases and normalization
// parameters stay out). freeze_mask, when set, marks entries that must not be
// updated (index i frozen when mask[i] == 0).
struct ParamRef {
  ParamKey key;
  Tensor* value = nullptr;
  bool is_weight = false;
  const std::vector<std::uint8_t>* freeze_mask = nullptr;
};

class Network;
std::vector<std::vector<std::size_t>> infer_layer_shapes(const std::vector<std::size_t>& input_shape,
                                                         const std::vector<Layer>& layers);

// Feed-forward stack over unbatched sample shapes; activations flowing through
// carry a leading batch axis. Structure is validated on construction and after
// any structural edit via revalidate().
class Network {
 public:
  Network() = default;

  Network(std::vector<std::size_t> input_shape, std::vector<Layer> layers)
      : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
    revalidate();
  }

  const std::vector<std::size_t>& input_shape() const noexcept { return input_shape_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  Layer& layer(std::size_t i) { return layers_.at(i); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  std::vector<Layer>& layers() noexcept { return layers_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  // Unbatched output shape of each layer, in order.
  const std::vector<std::vector<std::size_t>>& layer_output_shapes() const noexcept {
    return output_shapes_;
  }

  const std::vector<std::size_t>& output_shape() const {
    return output_shapes_.empty() ? input_shape_ : output_shapes_.back();
  }

  // Recomputes shape inference and structural invariants; call after editing
  // the layer list in place.
  void revalidate() {
    if (input_shape_.empty()) throw DimensionError("network input shape must be nonempty");
    for (std::size_t e : input_shape_) {
      if (e == 0) throw DimensionError("network input extents must be positive");
    }
    output_shapes_ = infer_layer_shapes(input_shape_, layers_);
    check_switch_placement();
  }

 private:
  void check_switch_placement() const;

  std::vector<std::size_t> input_shape_;
  std::vector<Layer> layers_;
  std::vector<std::vector<std::size_t>> output_shapes_;
};

namespace detail {

inline DimensionError layer_shape_error(std::size_t index, const Layer& layer,
                                        const std::vector<std::size_t>& in,
                                        const std::string& why) {
  return DimensionError("layer " + std::to_string(index) + " (" + layer_type_name(layer) +
                        "): input " + shape_string(in) + ": " + why);
}

}  // namespace detail

// Unbatched shape inference; throws DimensionError naming the offending layer.
inline std::vector<std::vector<std::size_t>> infer_layer_shapes(
    const std::vector<std::size_t>& input_shape, const std::vector<Layer>& layers) {
  std::vector<std::vector<std::size_t>> shapes;
  shapes.reserve(layers.size());
  std::vector<std::size_t> cur = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& layer = layers[i];
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      if (cur.size() != 1 || cur[0] != lin->in_features()) {
        throw detail::layer_shape_error(i, layer, cur,
                                        "expected rank-1 [" + std::to_string(lin->in_features()) + "]");
      }
      cur = {lin->out_features()};
    } else if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
      if (cur.size() != 3 || cur[0] != conv->in_channels()) {
        throw detail::layer_shape_error(
            i, layer, cur, "expected [" + std::to_string(conv->in_channels()) + ", h, w]");
      }
      const std::size_t h = cur[1] + 2 * conv->padding, w = cur[2] + 2 * conv->padding;
      if (conv->kernel_h() > h || conv->kernel_w() > w) {
        throw detail::layer_shape_error(i, layer, cur, "kernel exceeds padded input");
      }
      cur = {conv->out_channels(), (h - conv->kernel_h()) / conv->stride + 1,
             (w - conv->kernel_w()) / conv->stride + 1};
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      if ((cur.size() != 1 && cur.size() != 3) || cur[0] != bn->channels()) {
        throw detail::layer_shape_error(
            i, layer, cur, "expected leading channel extent " + std::to_string(bn->channels()));
      }
    } else if (const auto* sw = std::get_if<SwitchLayer>(&layer)) {
      if (cur.empty() || cur[0] != sw->channels()) {
        throw detail::layer_shape_error(
            i, layer, cur, "expected leading channel extent " + std::to_string(sw->channels()));
      }
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      // shape preserved
    } else if (const auto* pool = std::get_if<MaxPool2dLayer>(&layer)) {
      if (pool->stride == 0 || pool->window == 0) {
        throw detail::layer_shape_error(i, layer, cur, "window and stride must be positive");
      }
      if (cur.size() != 3 || pool->window > cur[1] || pool->window > cur[2]) {
        throw detail::layer_shape_error(i, layer, cur, "expected [c, h, w] covering the window");
      }
      cur = {cur[0], (cur[1] - pool->window) / pool->stride + 1,
             (cur[2] - pool->window) / pool->stride + 1};
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
      std::size_t n = 1;
      for (std::size_t e : cur) n *= e;
      cur = {n};
    }
    shapes.push_back(cur);
  }
  return shapes;
}

inline void Network::check_switch_placement() const {
  std::map<std::size_t, std::size_t> switches_per_producer;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!std::holds_alternative<SwitchLayer>(layers_[i])) continue;
    // Walk back over channel-preserving layers to the producing layer.
    std::size_t j = i;
    while (j > 0) {
      const Layer& prev = layers_[j - 1];
      if (std::holds_alternative<ReluLayer>(prev) || std::holds_alternative<MaxPool2dLayer>(prev) ||
          std::holds_alternative<BatchNormLayer>(prev)) {
        --j;
        continue;
      }
      if (std::holds_alternative<SwitchLayer>(prev)) {
        throw ConfigError("layer " + std::to_string(i) +
                          ": switch follows switch at layer " + std::to_string(j - 1));
      }
      break;
    }
    if (j > 0 && (std::holds_alternative<LinearLayer>(layers_[j - 1]) ||
                  std::holds_alternative<Conv2dLayer>(layers_[j - 1]))) {
      if (++switches_per_producer[j - 1] > 1) {
        throw ConfigError("layer " + std::to_string(j - 1) + " produces for more than one switch");
      }
    }
  }
}

// Saved activations from one training forward pass, consumed by backward.
struct LayerTape {
  Tensor input;                        // batched input to the layer
  std::vector<double> bn_mean;         // batch mean per channel
  std::vector<double> bn_invstd;       // 1/sqrt(var + eps) per channel
  std::vector<std::size_t> pool_src;   // winner's flat input index per output
};

struct ForwardTape {
  Mode mode = Mode::Train;
  std::vector<LayerTape> layers;
  std::vector<std::vector<std::size_t>> shape_fingerprint;  // unbatched per-layer shapes
  std::vector<std::size_t> type_fingerprint;                // variant index per layer
};

struct ForwardResult {
  Tensor output;
  ForwardTape tape;
};

struct Gradients {
  Tensor input;
  std::map<ParamKey, Tensor> params;
};

namespace detail {

inline void check_batched_input(const Network& net, const Tensor& x) {
  const auto& in = net.input_shape();
  bool ok = x.rank() == in.size() + 1;
  if (ok) {
    for (std::size_t a = 0; a < in.size(); ++a) ok = ok && x.extent(a + 1) == in[a];
  }
  if (!ok) {
    throw DimensionError("network input: batched " + shape_string(x.shape()) +
                         " does not end with sample shape " + shape_string(in));
  }
}

inline Tensor linear_forward(const LinearLayer& lin, const Tensor& x) {
  const std::size_t batch = x.extent(0), in = lin.in_features(), out = lin.out_features();
  Tensor y({batch, out});
  const double* px = x.data();
  const double* pw = lin.weight.data();
  double* py = y.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xrow = px + b * in;
    double* yrow = py + b * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wrow = pw + o * in;
      double acc = lin.bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += xrow[i] * wrow[i];
      yrow[o] = acc;
    }
  }
  return y;
}

inline void linear_backward(const LinearLayer& lin, const Tensor& x, const Tensor& g,
                            Tensor& grad_x, Tensor& grad_w, Tensor& grad_b) {
  const std::size_t batch = x.extent(0), in = lin.in_features(), out = lin.out_features();
  grad_x = Tensor({batch, in});
  grad_w = Tensor({out, in});
  grad_b = Tensor({out});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xrow = x.data() + b * in;
    const double* grow = g.data() + b * out;
    double* gxrow = grad_x.data() + b * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double go = grow[o];
      if (go == 0.0) continue;
      grad_b[o] += go;
      const double* wrow = lin.weight.data() + o * in;
      double* gwrow = grad_w.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        gxrow[i] += go * wrow[i];
        gwrow[i] += go * xrow[i];
      }
    }
  }
}

inline Tensor conv_forward(const Conv2dLayer& conv, const Tensor& x) {
  const std::size_t batch = x.extent(0), cin = x.extent(1), h = x.extent(2), w = x.extent(3);
  const std::size_t cout = conv.out_channels(), kh = conv.kernel_h(), kw = conv.kernel_w();
  const std::size_t s = conv.stride;
  const long p = static_cast<long>(conv.padding);
  const std::size_t ho = (h + 2 * conv.padding - kh) / s + 1;
  const std::size_t wo = (w + 2 * conv.padding - kw) / s + 1;
  Tensor y({batch, cout, ho, wo});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      const double bias = conv.bias[co];
      for (std::size_t oh = 0; oh < ho; ++oh) {
        for (std::size_t ow = 0; ow < wo; ++ow) {
          double acc = bias;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* xc = x.data() + ((b * cin + ci) * h) * w;
            const double* fc = conv.filters.data() + ((co * cin + ci) * kh) * kw;
            for (std::size_t u = 0; u < kh; ++u) {
              const long ih = static_cast<long>(oh * s + u) - p;
              if (ih < 0 || ih >= static_cast<long>(h)) continue;
              for (std::size_t v = 0; v < kw; ++v) {
                const long iw = static_cast<long>(ow * s + v) - p;
                if (iw < 0 || iw >= static_cast<long>(w)) continue;
                acc += xc[ih * static_cast<long>(w) + iw] * fc[u * kw + v];
              }
            }
          }
          y.data()[((b * cout + co) * ho + oh) * wo + ow] = acc;
        }
      }
    }
  }
  return y;
}

inline void conv_backward(const Conv2dLayer& conv, const Tensor& x, const Tensor& g,
                          Tensor& grad_x, Tensor& grad_f, Tensor& grad_b) {
  const std::size_t batch = x.extent(0), cin = x.extent(1), h = x.extent(2), w = x.extent(3);
  const std::size_t cout = conv.out_channels(), kh = conv.kernel_h(), kw = conv.kernel_w();
  const std::size_t s = conv.stride;
  const long p = static_cast<long>(conv.padding);
  const std::size_t ho = g.extent(2), wo = g.extent(3);
  grad_x = Tensor(x.shape());
  grad_f = Tensor(conv.filters.shape());
  grad_b = Tensor({cout});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t oh = 0; oh < ho; ++oh) {
        for (std::size_t ow = 0; ow < wo; ++ow) {
          const double go = g.data()[((b * cout + co) * ho + oh) * wo + ow];
          if (go == 0.0) continue;
          grad_b[co] += go;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* xc = x.data() + ((b * cin + ci) * h) * w;
            double* gxc = grad_x.data() + ((b * cin + ci) * h) * w;
            const double* fc = conv.filters.data() + ((co * cin + ci) * kh) * kw;
            double* gfc = grad_f.data() + ((co * cin + ci) * kh) * kw;
            for (std::size_t u = 0; u < kh; ++u) {
              const long ih = static_cast<long>(oh * s + u) - p;
              if (ih < 0 || ih >= static_cast<long>(h)) continue;
              for (std::size_t v = 0; v < kw; ++v) {
                const long iw = static_cast<long>(ow * s + v) - p;
                if (iw < 0 || iw >= static_cast<long>(w)) continue;
                const std::size_t xi = ih * static_cast<long>(w) + iw;
                gxc[xi] += go * fc[u * kw + v];
                gfc[u * kw + v] += go * xc[xi];
              }
            }
          }
        }
      }
    }
  }
}

// Channel geometry of a batched activation: (batch, channels, spatial block).
struct ChannelGeometry {
  std::size_t batch, channels, block;
};

inline ChannelGeometry channel_geometry(const Tensor& x) {
  ChannelGeometry geo{x.extent(0), x.extent(1), 1};
  for (std::size_t a = 2; a < x.rank(); ++a) geo.block *= x.extent(a);
  return geo;
}

}  // namespace detail

// Runs the network on a batched input (leading batch axis). Train mode
// records a tape for backward and refreshes BatchNorm running statistics; no
// other state mutates. Eval mode normalizes with running statistics.
inline ForwardResult forward(Network& net, const Tensor& x, Mode mode) {
  detail::check_batched_input(net, x);
  ForwardResult res;
  res.tape.mode = mode;
  res.tape.shape_fingerprint = net.layer_output_shapes();
  res.output = x;
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    Layer& layer = net.layer(i);
    res.tape.type_fingerprint.push_back(layer.index());
    LayerTape tape;
    tape.input = res.output;
    Tensor& cur = res.output;
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      cur = detail::linear_forward(*lin, cur);
    } else if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
      cur = detail::conv_forward(*conv, cur);
    } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      const auto geo = detail::channel_geometry(cur);
      Tensor y(cur.shape());
      if (mode == Mode::Train) {
        tape.bn_mean.resize(geo.channels);
        tape.bn_invstd.resize(geo.channels);
        const double n = static_cast<double>(geo.batch * geo.block);
        for (std::size_t c = 0; c < geo.channels; ++c) {
          double mean = 0.0;
          for (std::size_t b = 0; b < geo.batch; ++b) {
            const double* p = cur.data() + (b * geo.channels + c) * geo.block;
            for (std::size_t j = 0; j < geo.block; ++j) mean += p[j];
          }
          mean /= n;
          double var = 0.0;
          for (std::size_t b = 0; b < geo.batch; ++b) {
            const double* p = cur.data() + (b * geo.channels + c) * geo.block;
            for (std::size_t j = 0; j < geo.block; ++j) var += (p[j] - mean) * (p[j] - mean);
          }
          var /= n;
          const double invstd = 1.0 / std::sqrt(var + bn->eps);
          tape.bn_mean[c] = mean;
          tape.bn_invstd[c] = invstd;
          bn->running_mean[c] = (1.0 - bn->stat_momentum) * bn->running_mean[c] + bn->stat_momentum * mean;
          bn->running_var[c] = (1.0 - bn->stat_momentum) * bn->running_var[c] + bn->stat_momentum * var;
          const double a = bn->gamma[c] * invstd;
          const double d = bn->shift[c] - a * mean;
          for (std::size_t b = 0; b < geo.batch; ++b) {
            const double* p = cur.data() + (b * geo.channels + c) * geo.block;
            double* q = y.data() + (b * geo.channels + c) * geo.block;
            for (std::size_t j = 0; j < geo.block; ++j) q[j] = a * p[j] + d;
          }
        }
        ++bn->batches_tracked;
      } else {
        for (std::size_t c = 0; c < geo.channels; ++c) {
          const double invstd = 1.0 / std::sqrt(bn->running_var[c] + bn->eps);
          const double a = bn->gamma[c] * invstd;
          const double d = bn->shift[c] - a * bn->running_mean[c];
          for (std::size_t b = 0; b < geo.batch; ++b) {
            const double* p = cur.data() + (b * geo.channels + c) * geo.block;
            double* q = y.data() + (b * geo.channels + c) * geo.block;
            for (std::size_t j = 0; j < geo.block; ++j) q[j] = a * p[j] + d;
          }
        }
      }
      cur = std::move(y);
    } else if (const auto* sw = std::get_if<SwitchLayer>(&layer)) {
      const auto geo = detail::channel_geometry(cur);
      Tensor y(cur.shape());
      for (std::size_t b = 0; b < geo.batch; ++b) {
        for (std::size_t c = 0; c < geo.channels; ++c) {
          const double beta = sw->beta[c];
          const double* p = cur.data() + (b * geo.channels + c) * geo.block;
          double* q = y.data() + (b * geo.channels + c) * geo.block;
          for (std::size_t j = 0; j < geo.block; ++j) q[j] = beta * p[j];
        }
      }
      cur = std::move(y);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      Tensor y(cur.shape());
      for (std::size_t j = 0; j < cur.size(); ++j) y[j] = cur[j] > 0.0 ? cur[j] : 0.0;
      cur = std::move(y);
    } else if (const auto* pool = std::get_if<MaxPool2dLayer>(&layer)) {
      const std::size_t batch = cur.extent(0), c = cur.extent(1), h = cur.extent(2),
                        w = cur.extent(3);
      const std::size_t ho = (h - pool->window) / pool->stride + 1;
      const std::size_t wo = (w - pool->window) / pool->stride + 1;
      Tensor y({batch, c, ho, wo});
      tape.pool_src.resize(y.size());
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* p = cur.data() + ((b * c + ch) * h) * w;
          const std::size_t base = ((b * c + ch) * h) * w;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            for (std::size_t ow = 0; ow < wo; ++ow) {
              std::size_t best = (oh * pool->stride) * w + ow * pool->stride;
              double bv = p[best];
              for (std::size_t u = 0; u < pool->window; ++u) {
                for (std::size_t v = 0; v < pool->window; ++v) {
                  const std::size_t idx = (oh * pool->stride + u) * w + ow * pool->stride + v;
                  if (p[idx] > bv) {
                    bv = p[idx];
                    best = idx;
                  }
                }
              }
              const std::size_t out_idx = ((b * c + ch) * ho + oh) * wo + ow;
              y.data()[out_idx] = bv;
              tape.pool_src[out_idx] = base + best;
            }
          }
        }
      }
      cur = std::move(y);
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
      std::size_t n = cur.size() / cur.extent(0);
      cur = Tensor({cur.extent(0), n}, std::move(cur.values()));
    }
    res.tape.layers.push_back(std::move(tape));
  }
  return res;
}

// Eval-mode forward without tape recording or state mutation.
inline Tensor infer(const Network& net, const Tensor& x) {
  Network& mutable_net = const_cast<Network&>(net);  // Eval path touches no state.
  return forward(mutable_net, x, Mode::Eval).output;
}

// Backpropagates grad_out through the taped forward pass. The tape must come
// from a train-mode forward on this exact network structure. Data-term
// gradients only; penalty subgradients are added by the objective layer.
inline Gradients backward(const Network& net, const ForwardTape& tape, const Tensor& grad_out) {
  if (tape.mode != Mode::Train) {
    throw StateError("backward requires a train-mode tape");
  }
  if (tape.layers.size() != net.layer_count() ||
      tape.shape_fingerprint != net.layer_output_shapes()) {
    throw StateError("tape does not match network structure");
  }
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    if (tape.type_fingerprint[i] != net.layer(i).index()) {
      throw StateError("tape does not match network structure at layer " + std::to_string(i));
    }
  }

  Gradients grads;
  Tensor g = grad_out;
  for (std::size_t ri = net.layer_count(); ri-- > 0;) {
    const Layer& layer = net.layer(ri);
    const LayerTape& tp = tape.layers[ri];
    const std::uint32_t li = static_cast<std::uint32_t>(ri);
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      Tensor gx, gw, gb;
      detail::linear_backward(*lin, tp.input, g, gx, gw, gb);
      grads.params[{li, ParamRole::Weight}] = std::move(gw);
      grads.params[{li, ParamRole::Bias}] = std::move(gb);
      g = std::move(gx);
    } else if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
      Tensor gx, gf, gb;
      detail::conv_backward(*conv, tp.input, g, gx, gf, gb);
      grads.params[{li, ParamRole::Weight}] = std::move(gf);
      grads.params[{li, ParamRole::Bias}] = std::move(gb);
      g = std::move(gx);
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      const auto geo = detail::channel_geometry(tp.input);
      const double n = static_cast<double>(geo.batch * geo.block);
      Tensor gx(tp.input.shape());
      Tensor ggamma({geo.channels}), gshift({geo.channels});
      for (std::size_t c = 0; c < geo.channels; ++c) {
        const double mean = tp.bn_mean[c], invstd = tp.bn_invstd[c], gamma = bn->gamma[c];
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t b = 0; b < geo.batch; ++b) {
          const double* xp = tp.input.data() + (b * geo.channels + c) * geo.block;
          const double* gp = g.data() + (b * geo.channels + c) * geo.block;
          for (std::size_t j = 0; j < geo.block; ++j) {
            sum_g += gp[j];
            sum_gx += gp[j] * (xp[j] - mean) * invstd;
          }
        }
        ggamma[c] = sum_gx;
        gshift[c] = sum_g;
        const double k1 = gamma * invstd;
        for (std::size_t b = 0; b < geo.batch; ++b) {
          const double* xp = tp.input.data() + (b * geo.channels + c) * geo.block;
          const double* gp = g.data() + (b * geo.channels + c) * geo.block;
          double* op = gx.data() + (b * geo.channels + c) * geo.block;
          for (std::size_t j = 0; j < geo.block; ++j) {
            const double xhat = (xp[j] - mean) * invstd;
            op[j] = k1 * (gp[j] - sum_g / n - xhat * sum_gx / n);
          }
        }
      }
      grads.params[{li, ParamRole::Gamma}] = std::move(ggamma);
      grads.params[{li, ParamRole::Shift}] = std::move(gshift);
      g = std::move(gx);
    } else if (const auto* sw = std::get_if<SwitchLayer>(&layer)) {
      const auto geo = detail::channel_geometry(tp.input);
      Tensor gx(tp.input.shape());
      Tensor gbeta({geo.channels});
      for (std::size_t c = 0; c < geo.channels; ++c) {
        const double beta = sw->beta[c];
        double acc = 0.0;
        for (std::size_t b = 0; b < geo.batch; ++b) {
          const double* xp = tp.input.data() + (b * geo.channels + c) * geo.block;
          const double* gp = g.data() + (b * geo.channels + c) * geo.block;
          double* op = gx.data() + (b * geo.channels + c) * geo.block;
          for (std::size_t j = 0; j < geo.block; ++j) {
            op[j] = beta * gp[j];
            acc += xp[j] * gp[j];
          }
        }
        gbeta[c] = sw->active[c] ? acc : 0.0;
      }
      grads.params[{li, ParamRole::Beta}] = std::move(gbeta);
      g = std::move(gx);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      Tensor gx(tp.input.shape());
      for (std::size_t j = 0; j < gx.size(); ++j) gx[j] = tp.input[j] > 0.0 ? g[j] : 0.0;
      g = std::move(gx);
    } else if (std::holds_alternative<MaxPool2dLayer>(layer)) {
      Tensor gx(tp.input.shape());
      for (std::size_t j = 0; j < g.size(); ++j) gx[tp.pool_src[j]] += g[j];
      g = std::move(gx);
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
      g = Tensor(tp.input.shape(), std::move(g.values()));
    }
  }
  grads.input = std::move(g);
  return grads;
}

// Trainable tensors in layer order. Switch betas carry their active mask as a
// freeze mask and are omitted entirely when include_switches is false.
inline std::vector<ParamRef> trainable_parameters(Network& net, bool include_switches = true) {
  std::vector<ParamRef> refs;
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const std::uint32_t li = static_cast<std::uint32_t>(i);
    Layer& layer = net.layer(i);
    if (auto* lin = std::get_if<LinearLayer>(&layer)) {
      refs.push_back({{li, ParamRole::Weight}, &lin->weight, true, nullptr});
      refs.push_back({{li, ParamRole::Bias}, &lin->bias, false, nullptr});
    } else if (auto* conv = std::get_if<Conv2dLayer>(&layer)) {
      refs.push_back({{li, ParamRole::Weight}, &conv->filters, true, nullptr});
      refs.push_back({{li, ParamRole::Bias}, &conv->bias, false, nullptr});
    } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      refs.push_back({{li, ParamRole::Gamma}, &bn->gamma, false, nullptr});
      refs.push_back({{li, ParamRole::Shift}, &bn->shift, false, nullptr});
    } else if (auto* sw = std::get_if<SwitchLayer>(&layer)) {
      if (include_switches) {
        refs.push_back({{li, ParamRole::Beta}, &sw->beta, false, &sw->active});
      }
    }
  }
  return refs;
}

// Stored floats of the model. BatchNorm contributes its four per-channel
// vectors (running statistics ship with the model); switches contribute beta
// only when included.
inline std::size_t param_count(const Network& net, bool include_switches) {
  std::size_t n = 0;
  for (const Layer& layer : net.layers()) {
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      n += lin->weight.size() + lin->bias.size();
    } else if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
      n += conv->filters.size() + conv->bias.size();
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      n += 4 * bn->channels();
    } else if (const auto* sw = std::get_if<SwitchLayer>(&layer)) {
      if (include_switches) n += sw->channels();
    }
  }
  return n;
}

}  // namespace slimnet
