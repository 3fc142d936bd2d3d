#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "slimnet/io.hpp"
#include "slimnet/layers.hpp"

namespace slimnet {

// A dense inference model: the trained network with every switch folded into
// the layer directly before it. Weights are held as doubles in memory; the
// declared float width (4 or 8 bytes) controls how they are stored on disk.
struct FusedModel {
  static constexpr std::uint32_t format_version = 1;

  Network net;
  std::uint8_t float_width = 8;

  const std::vector<std::size_t>& input_shape() const { return net.input_shape(); }

  std::size_t class_count() const {
    std::size_t n = 1;
    for (std::size_t e : net.output_shape()) n *= e;
    return n;
  }
};

// Folds each switch into the directly preceding parameterized layer: linear
// rows and bias entries, conv filters and bias entries, or batchnorm affine
// parameters are scaled by beta per channel, and the switch disappears. The
// result computes the same eval-mode function as the input network.
inline FusedModel fuse_network(const Network& net) {
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const auto* bn = std::get_if<BatchNormLayer>(&net.layer(i));
    if (bn && bn->batches_tracked == 0) {
      throw StateError("batchnorm at layer " + std::to_string(i) +
                       " has no running statistics yet; run at least one training batch "
                       "before fusing");
    }
  }

  std::vector<Layer> fused;
  fused.reserve(net.layer_count());
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const Layer& layer = net.layer(i);
    const auto* sw = std::get_if<SwitchLayer>(&layer);
    if (!sw) {
      fused.push_back(layer);
      continue;
    }
    if (fused.empty()) {
      throw StateError("switch at layer " + std::to_string(i) +
                       " has no preceding layer to fold into");
    }
    Layer& prev = fused.back();
    const Tensor& beta = sw->beta;
    if (auto* lin = std::get_if<LinearLayer>(&prev)) {
      lin->weight = channel_scale(lin->weight, beta);
      lin->bias = channel_scale(lin->bias, beta);
    } else if (auto* conv = std::get_if<Conv2dLayer>(&prev)) {
      conv->filters = channel_scale(conv->filters, beta);
      conv->bias = channel_scale(conv->bias, beta);
    } else if (auto* bn = std::get_if<BatchNormLayer>(&prev)) {
      bn->gamma = channel_scale(bn->gamma, beta);
      bn->shift = channel_scale(bn->shift, beta);
    } else {
      throw StateError("switch at layer " + std::to_string(i) + " follows a " +
                       layer_type_name(prev) +
                       " layer; fusion folds into linear, conv2d, or batchnorm only");
    }
  }
  return FusedModel{Network(net.input_shape(), std::move(fused)), 8};
}

inline Tensor predict(const FusedModel& model, const Tensor& batch) {
  return infer(model.net, batch);
}

// ---------------------------------------------------------------------------
// Binary serialization.
//
// Byte layout (all integers little-endian, floats IEEE-754 little-endian):
//   magic            4 bytes: "SMLF" (fused model) or "SMLC" (checkpoint)
//   version          u32, currently 1
//   float width      u8, 4 or 8 bytes per stored tensor entry
//   input rank       u32, then u64 per input extent
//   layer count      u32
//   per layer        u8 type tag, then the payload below
//     1 linear:      u64 out, u64 in, weight[out*in], bias[out]
//     2 conv2d:      u64 out_c, u64 in_c, u64 kh, u64 kw, u64 stride,
//                    u64 padding, filters[out_c*in_c*kh*kw], bias[out_c]
//     3 batchnorm:   u64 channels c, f64 eps, f64 stat_momentum,
//                    u64 batches_tracked, gamma[c], shift[c],
//                    running_mean[c], running_var[c]
//     4 relu:        (no payload)
//     5 maxpool2d:   u64 window, u64 stride
//     6 flatten:     (no payload)
//     7 switch:      u64 channels c, beta[c], u8 active[c], u8 seen[c],
//                    f64 sign_mean[c], f64 sign_var[c]
// Bracketed arrays are stored at the declared float width except where a
// fixed f64 type is given. Switch layers appear only in checkpoints, which
// are always written at width 8 so training state round-trips exactly.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kFusedMagic[4] = {'S', 'M', 'L', 'F'};
constexpr char kCheckpointMagic[4] = {'S', 'M', 'L', 'C'};

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline void put_float(std::string& out, double v, std::uint8_t width) {
  if (width == 8) {
    put_f64(out, v);
  } else {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
}

inline void put_tensor(std::string& out, const Tensor& t, std::uint8_t width) {
  for (std::size_t i = 0; i < t.size(); ++i) put_float(out, t[i], width);
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }

  std::uint32_t u32() {
    const char* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    const char* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  double number(std::uint8_t width) {
    if (width == 8) return f64();
    return static_cast<double>(std::bit_cast<float>(u32()));
  }

  Tensor tensor(std::vector<std::size_t> shape, std::uint8_t width) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = number(width);
    return t;
  }

  // Dimension read with a sanity cap so a corrupted length cannot demand an
  // absurd allocation before the truncation is noticed.
  std::size_t dim(const char* what) {
    const std::uint64_t v = u64();
    if (v == 0 || v > (1ull << 32)) {
      throw FormatError(std::string(what) + " has implausible extent " + std::to_string(v));
    }
    return static_cast<std::size_t>(v);
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }
  std::size_t position() const noexcept { return pos_; }

 private:
  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw CorruptionError("unexpected end of data at byte " + std::to_string(bytes_.size()) +
                            " (needed " + std::to_string(pos_ + n) + ")");
    }
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

inline std::string serialize_network(const Network& net, const char magic[4], std::uint8_t width,
                                     bool allow_switches) {
  if (width != 4 && width != 8) {
    throw ArgumentError("float width must be 4 or 8, got " + std::to_string(width));
  }
  std::string out;
  out.append(magic, 4);
  put_u32(out, FusedModel::format_version);
  put_u8(out, width);
  put_u32(out, static_cast<std::uint32_t>(net.input_shape().size()));
  for (std::size_t e : net.input_shape()) put_u64(out, e);
  put_u32(out, static_cast<std::uint32_t>(net.layer_count()));
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const Layer& layer = net.layer(i);
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      put_u8(out, 1);
      put_u64(out, lin->out_features());
      put_u64(out, lin->in_features());
      put_tensor(out, lin->weight, width);
      put_tensor(out, lin->bias, width);
    } else if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
      put_u8(out, 2);
      put_u64(out, conv->out_channels());
      put_u64(out, conv->in_channels());
      put_u64(out, conv->kernel_h());
      put_u64(out, conv->kernel_w());
      put_u64(out, conv->stride);
      put_u64(out, conv->padding);
      put_tensor(out, conv->filters, width);
      put_tensor(out, conv->bias, width);
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      put_u8(out, 3);
      put_u64(out, bn->channels());
      put_f64(out, bn->eps);
      put_f64(out, bn->stat_momentum);
      put_u64(out, bn->batches_tracked);
      put_tensor(out, bn->gamma, width);
      put_tensor(out, bn->shift, width);
      put_tensor(out, bn->running_mean, width);
      put_tensor(out, bn->running_var, width);
    } else if (const auto* sw = std::get_if<SwitchLayer>(&layer)) {
      if (!allow_switches) {
        throw StateError("switch at layer " + std::to_string(i) +
                         " cannot be stored in a fused model; fuse the network first");
      }
      put_u8(out, 7);
      put_u64(out, sw->channels());
      put_tensor(out, sw->beta, width);
      for (std::size_t c = 0; c < sw->channels(); ++c) put_u8(out, sw->active[c]);
      for (std::size_t c = 0; c < sw->channels(); ++c) put_u8(out, sw->seen[c]);
      for (std::size_t c = 0; c < sw->channels(); ++c) put_f64(out, sw->sign_mean[c]);
      for (std::size_t c = 0; c < sw->channels(); ++c) put_f64(out, sw->sign_var[c]);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      put_u8(out, 4);
    } else if (const auto* pool = std::get_if<MaxPool2dLayer>(&layer)) {
      put_u8(out, 5);
      put_u64(out, pool->window);
      put_u64(out, pool->stride);
    } else {
      put_u8(out, 6);
    }
  }
  return out;
}

struct ParsedNetwork {
  Network net;
  std::uint8_t float_width = 8;
};

inline ParsedNetwork parse_network(const std::string& bytes, const char magic[4],
                                   bool allow_switches) {
  ByteReader in(bytes);
  char got[4];
  for (char& c : got) c = static_cast<char>(in.u8());
  if (!std::equal(got, got + 4, magic)) {
    throw FormatError(std::string("bad magic '") + std::string(got, 4) + "', expected '" +
                      std::string(magic, 4) + "'");
  }
  const std::uint32_t version = in.u32();
  if (version != FusedModel::format_version) {
    throw FormatError("unsupported format version " + std::to_string(version));
  }
  const std::uint8_t width = in.u8();
  if (width != 4 && width != 8) {
    throw FormatError("float width must be 4 or 8, got " + std::to_string(width));
  }

  const std::uint32_t rank = in.u32();
  if (rank == 0 || rank > 8) throw FormatError("implausible input rank " + std::to_string(rank));
  std::vector<std::size_t> input_shape(rank);
  for (auto& e : input_shape) e = in.dim("input shape");

  const std::uint32_t n_layers = in.u32();
  std::vector<Layer> layers;
  layers.reserve(n_layers);
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const std::uint8_t tag = in.u8();
    switch (tag) {
      case 1: {
        const std::size_t out = in.dim("linear out"), in_f = in.dim("linear in");
        Tensor w = in.tensor({out, in_f}, width);
        Tensor b = in.tensor({out}, width);
        layers.emplace_back(LinearLayer(std::move(w), std::move(b)));
        break;
      }
      case 2: {
        const std::size_t out = in.dim("conv out"), in_c = in.dim("conv in");
        const std::size_t kh = in.dim("conv kernel"), kw = in.dim("conv kernel");
        const std::size_t stride = in.dim("conv stride");
        const std::size_t padding = static_cast<std::size_t>(in.u64());
        Tensor f = in.tensor({out, in_c, kh, kw}, width);
        Tensor b = in.tensor({out}, width);
        layers.emplace_back(Conv2dLayer(std::move(f), std::move(b), stride, padding));
        break;
      }
      case 3: {
        const std::size_t c = in.dim("batchnorm channels");
        BatchNormLayer bn(c);
        bn.eps = in.f64();
        bn.stat_momentum = in.f64();
        bn.batches_tracked = static_cast<std::size_t>(in.u64());
        bn.gamma = in.tensor({c}, width);
        bn.shift = in.tensor({c}, width);
        bn.running_mean = in.tensor({c}, width);
        bn.running_var = in.tensor({c}, width);
        layers.emplace_back(std::move(bn));
        break;
      }
      case 4:
        layers.emplace_back(ReluLayer{});
        break;
      case 5: {
        MaxPool2dLayer pool;
        pool.window = in.dim("maxpool window");
        pool.stride = in.dim("maxpool stride");
        layers.emplace_back(pool);
        break;
      }
      case 6:
        layers.emplace_back(FlattenLayer{});
        break;
      case 7: {
        if (!allow_switches) {
          throw FormatError("switch layer in a fused model file");
        }
        const std::size_t c = in.dim("switch channels");
        SwitchLayer sw(in.tensor({c}, width));
        for (std::size_t j = 0; j < c; ++j) sw.active[j] = in.u8();
        for (std::size_t j = 0; j < c; ++j) sw.seen[j] = in.u8();
        for (std::size_t j = 0; j < c; ++j) sw.sign_mean[j] = in.f64();
        for (std::size_t j = 0; j < c; ++j) sw.sign_var[j] = in.f64();
        layers.emplace_back(std::move(sw));
        break;
      }
      default:
        throw FormatError("unknown layer tag " + std::to_string(tag) + " at byte " +
                          std::to_string(in.position() - 1));
    }
  }
  if (!in.done()) {
    throw CorruptionError(std::to_string(bytes.size() - in.position()) +
                          " trailing bytes after the layer list");
  }
  try {
    return ParsedNetwork{Network(std::move(input_shape), std::move(layers)), width};
  } catch (const Error& e) {
    throw FormatError(std::string("file describes an invalid network: ") + e.what());
  }
}

}  // namespace detail

inline std::string serialize_fused(const FusedModel& model) {
  return detail::serialize_network(model.net, detail::kFusedMagic, model.float_width, false);
}

inline FusedModel parse_fused(const std::string& bytes) {
  detail::ParsedNetwork parsed = detail::parse_network(bytes, detail::kFusedMagic, false);
  return FusedModel{std::move(parsed.net), parsed.float_width};
}

inline void save_fused(const FusedModel& model, const std::string& path) {
  detail::write_file(path, serialize_fused(model));
}

inline FusedModel load_fused(const std::string& path) {
  return parse_fused(detail::read_file(path));
}

// Checkpoints keep switch layers (and their screening state) intact and are
// always written at full width.
inline std::string serialize_checkpoint(const Network& net) {
  return detail::serialize_network(net, detail::kCheckpointMagic, 8, true);
}

inline Network parse_checkpoint(const std::string& bytes) {
  return detail::parse_network(bytes, detail::kCheckpointMagic, true).net;
}

inline void save_checkpoint(const Network& net, const std::string& path) {
  detail::write_file(path, serialize_checkpoint(net));
}

inline Network load_checkpoint(const std::string& path) {
  return parse_checkpoint(detail::read_file(path));
}

}  // namespace slimnet
