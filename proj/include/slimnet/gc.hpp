#pragma once

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "slimnet/layers.hpp"
#include "slimnet/optim.hpp"

namespace slimnet {

// Resolves a (layer, role) key to the tensor it names, covering both
// trainable parameters and BatchNorm running statistics.
inline Tensor& tensor_for_key(Network& net, const ParamKey& key) {
  Layer& layer = net.layer(key.layer);
  switch (key.role) {
    case ParamRole::Weight:
      if (auto* lin = std::get_if<LinearLayer>(&layer)) return lin->weight;
      if (auto* conv = std::get_if<Conv2dLayer>(&layer)) return conv->filters;
      break;
    case ParamRole::Bias:
      if (auto* lin = std::get_if<LinearLayer>(&layer)) return lin->bias;
      if (auto* conv = std::get_if<Conv2dLayer>(&layer)) return conv->bias;
      break;
    case ParamRole::Gamma:
      if (auto* bn = std::get_if<BatchNormLayer>(&layer)) return bn->gamma;
      break;
    case ParamRole::Shift:
      if (auto* bn = std::get_if<BatchNormLayer>(&layer)) return bn->shift;
      break;
    case ParamRole::RunningMean:
      if (auto* bn = std::get_if<BatchNormLayer>(&layer)) return bn->running_mean;
      break;
    case ParamRole::RunningVar:
      if (auto* bn = std::get_if<BatchNormLayer>(&layer)) return bn->running_var;
      break;
    case ParamRole::Beta:
      if (auto* sw = std::get_if<SwitchLayer>(&layer)) return sw->beta;
      break;
  }
  throw StateError("no tensor " + to_string(key) + " on a " +
                   layer_type_name(layer) + " layer");
}

// One axis-wise slice removal on one named tensor. expected_shape guards
// against applying a plan after the network structure moved on.
struct TensorCut {
  ParamKey key;
  std::size_t axis = 0;
  std::vector<std::size_t> indices;
  std::vector<std::size_t> expected_shape;

  std::size_t removed_floats() const {
    std::size_t per_slice = 1;
    for (std::size_t a = 0; a < expected_shape.size(); ++a) {
      if (a != axis) per_slice *= expected_shape[a];
    }
    return per_slice * indices.size();
  }
};

struct ProducerChain {
  std::size_t producer = 0;                 // linear or conv layer index
  std::vector<std::size_t> batchnorms;      // normalizers between producer and switch
};

struct ConsumerInfo {
  std::size_t consumer = 0;   // linear or conv layer index
  bool is_linear = false;
  std::size_t block = 1;      // consumer input slots per switch channel (flatten expansion)
};

// Walks back from the switch across channel-preserving layers to the layer
// that produces its channels.
inline ProducerChain find_producer_chain(const Network& net, std::size_t switch_index) {
  ProducerChain chain;
  std::size_t j = switch_index;
  while (j > 0) {
    const Layer& prev = net.layer(j - 1);
    if (std::holds_alternative<BatchNormLayer>(prev)) {
      chain.batchnorms.push_back(j - 1);
      --j;
      continue;
    }
    if (std::holds_alternative<ReluLayer>(prev) || std::holds_alternative<MaxPool2dLayer>(prev)) {
      --j;
      continue;
    }
    if (std::holds_alternative<LinearLayer>(prev) || std::holds_alternative<Conv2dLayer>(prev)) {
      chain.producer = j - 1;
      std::reverse(chain.batchnorms.begin(), chain.batchnorms.end());
      return chain;
    }
    break;  // flatten or another switch: channels are not structural here
  }
  throw StateError("switch at layer " + std::to_string(switch_index) +
                   " has no producing layer; its channels cannot be removed");
}

// Walks forward from the switch to the layer consuming its channels. Only
// layers that map a zeroed channel to exact zeros may sit on the path, so a
// BatchNorm (which shifts zeros) refuses the removal.
inline ConsumerInfo find_consumer(const Network& net, std::size_t switch_index) {
  ConsumerInfo info;
  bool flattened = false;
  for (std::size_t j = switch_index + 1; j < net.layer_count(); ++j) {
    const Layer& next = net.layer(j);
    if (std::holds_alternative<ReluLayer>(next) || std::holds_alternative<MaxPool2dLayer>(next)) {
      continue;
    }
    if (std::holds_alternative<BatchNormLayer>(next)) {
      throw StateError("batchnorm at layer " + std::to_string(j) +
                       " sits between switch and consumer; zeroed channels would still shift "
                       "its output, so removal is refused");
    }
    if (std::holds_alternative<FlattenLayer>(next)) {
      if (!flattened) {
        const auto& in_shape = net.layer_output_shapes()[j - 1];
        info.block = 1;
        for (std::size_t a = 1; a < in_shape.size(); ++a) info.block *= in_shape[a];
        flattened = true;
      }
      continue;
    }
    if (std::holds_alternative<SwitchLayer>(next)) {
      throw StateError("switch at layer " + std::to_string(j) + " follows the switch at layer " +
                       std::to_string(switch_index));
    }
    if (std::holds_alternative<LinearLayer>(next)) {
      info.consumer = j;
      info.is_linear = true;
      if (!flattened) info.block = 1;
      return info;
    }
    if (std::holds_alternative<Conv2dLayer>(next)) {
      if (flattened) {
        throw StateError("flatten between switch and conv consumer at layer " + std::to_string(j));
      }
      info.consumer = j;
      info.is_linear = false;
      info.block = 1;
      return info;
    }
  }
  throw StateError("switch at layer " + std::to_string(switch_index) +
                   " feeds the network output; removing its channels would change the "
                   "output dimension, so removal is refused");
}

// Everything that must shrink to remove a set of channels from one switch:
// producer rows/filters and bias entries, per-channel entries of normalizers
// between producer and switch, the switch's own parameters, and the consumer
// columns or input slices that read the channels.
struct RemovalPlan {
  std::size_t switch_index = 0;
  std::size_t switch_channels = 0;     // channel count when the plan was made
  std::vector<std::size_t> channels;   // sorted, unique
  std::vector<TensorCut> cuts;

  bool empty() const noexcept { return channels.empty(); }

  // Exact drop in param_count(net, include_switches).
  std::size_t dropped_floats(bool include_switches) const {
    std::size_t n = 0;
    for (const TensorCut& cut : cuts) {
      if (cut.key.role == ParamRole::Beta && !include_switches) continue;
      n += cut.removed_floats();
    }
    return n;
  }
};

inline RemovalPlan plan_removal(const Network& net, std::size_t switch_index,
                                std::vector<std::size_t> channels) {
  if (switch_index >= net.layer_count() ||
      !std::holds_alternative<SwitchLayer>(net.layer(switch_index))) {
    throw ArgumentError("layer " + std::to_string(switch_index) + " is not a switch");
  }
  const auto& sw = std::get<SwitchLayer>(net.layer(switch_index));

  std::sort(channels.begin(), channels.end());
  channels.erase(std::unique(channels.begin(), channels.end()), channels.end());
  for (std::size_t c : channels) {
    if (c >= sw.channels()) {
      throw ArgumentError("channel " + std::to_string(c) + " out of range for " +
                          std::to_string(sw.channels()) + " switch channels");
    }
    if (!sw.active[c]) {
      throw ArgumentError("channel " + std::to_string(c) + " is already inactive");
    }
  }

  RemovalPlan plan;
  plan.switch_index = switch_index;
  plan.switch_channels = sw.channels();
  plan.channels = std::move(channels);
  if (plan.channels.empty()) return plan;

  if (plan.channels.size() >= sw.active_count()) {
    throw ArgumentError("removing " + std::to_string(plan.channels.size()) + " of " +
                        std::to_string(sw.active_count()) +
                        " active channels would leave the layer empty; it must retain at "
                        "least one channel");
  }

  const ProducerChain chain = find_producer_chain(net, switch_index);
  const ConsumerInfo consumer = find_consumer(net, switch_index);

  auto cut = [&net](std::uint32_t layer, ParamRole role, std::size_t axis,
                    std::vector<std::size_t> indices) {
    ParamKey key{layer, role};
    Tensor& t = tensor_for_key(const_cast<Network&>(net), key);
    return TensorCut{key, axis, std::move(indices), t.shape()};
  };

  const auto prod = static_cast<std::uint32_t>(chain.producer);
  plan.cuts.push_back(cut(prod, ParamRole::Weight, 0, plan.channels));
  plan.cuts.push_back(cut(prod, ParamRole::Bias, 0, plan.channels));
  for (std::size_t bn_index : chain.batchnorms) {
    const auto bi = static_cast<std::uint32_t>(bn_index);
    plan.cuts.push_back(cut(bi, ParamRole::Gamma, 0, plan.channels));
    plan.cuts.push_back(cut(bi, ParamRole::Shift, 0, plan.channels));
    plan.cuts.push_back(cut(bi, ParamRole::RunningMean, 0, plan.channels));
    plan.cuts.push_back(cut(bi, ParamRole::RunningVar, 0, plan.channels));
  }
  plan.cuts.push_back(cut(static_cast<std::uint32_t>(switch_index), ParamRole::Beta, 0,
                          plan.channels));

  std::vector<std::size_t> consumer_indices;
  if (consumer.is_linear) {
    consumer_indices.reserve(plan.channels.size() * consumer.block);
    for (std::size_t c : plan.channels) {
      for (std::size_t j = 0; j < consumer.block; ++j) {
        consumer_indices.push_back(c * consumer.block + j);
      }
    }
  } else {
    consumer_indices = plan.channels;
  }
  plan.cuts.push_back(cut(static_cast<std::uint32_t>(consumer.consumer), ParamRole::Weight, 1,
                          std::move(consumer_indices)));
  return plan;
}

// Applies a plan, shrinking parameters, switch bookkeeping, and (when given)
// the optimizer's moment tensors in lockstep. The planned channels must have
// been deactivated first, so every removed slice contributes exact zeros and
// the network function is unchanged.
inline void apply_removal(Network& net, const RemovalPlan& plan, AdamState* adam = nullptr) {
  if (plan.empty()) return;
  if (plan.switch_index >= net.layer_count() ||
      !std::holds_alternative<SwitchLayer>(net.layer(plan.switch_index))) {
    throw StateError("removal plan is stale: layer " + std::to_string(plan.switch_index) +
                     " is not a switch");
  }
  auto& sw = std::get<SwitchLayer>(net.layer(plan.switch_index));
  if (sw.channels() != plan.switch_channels) {
    throw StateError("removal plan is stale: switch has " + std::to_string(sw.channels()) +
                     " channels, planned for " + std::to_string(plan.switch_channels));
  }
  for (const TensorCut& cut : plan.cuts) {
    if (cut.key.layer >= net.layer_count()) {
      throw StateError("removal plan is stale: no layer " + std::to_string(cut.key.layer));
    }
    if (tensor_for_key(net, cut.key).shape() != cut.expected_shape) {
      throw StateError("removal plan is stale: " + to_string(cut.key) + " is now " +
                       shape_string(tensor_for_key(net, cut.key).shape()) + ", planned " +
                       shape_string(cut.expected_shape));
    }
  }
  for (std::size_t c : plan.channels) {
    if (sw.active[c] || sw.beta[c] != 0.0) {
      throw StateError("channel " + std::to_string(c) +
                       " must be deactivated (beta exactly zero) before removal");
    }
  }

  for (const TensorCut& cut : plan.cuts) {
    if (cut.key.role != ParamRole::Beta) {
      Tensor& t = tensor_for_key(net, cut.key);
      t = remove_along_axis(t, cut.axis, cut.indices);
    }
    if (adam && adam->tracks(cut.key)) {
      adam->shrink(cut.key, cut.axis, cut.indices);
    }
  }
  shrink_switch(sw, plan.channels);  // beta and the per-channel bookkeeping
  net.revalidate();
}

// plan -> deactivate -> apply in one call.
inline RemovalPlan remove_channels(Network& net, std::size_t switch_index,
                                   const std::vector<std::size_t>& channels,
                                   AdamState* adam = nullptr) {
  RemovalPlan plan = plan_removal(net, switch_index, channels);
  if (plan.empty()) return plan;
  deactivate(std::get<SwitchLayer>(net.layer(switch_index)), plan.channels);
  apply_removal(net, plan, adam);
  return plan;
}

// Per-epoch record of the width of every sized layer (linear, conv, switch).
struct SizeRecord {
  std::size_t epoch = 0;
  std::vector<std::pair<std::size_t, std::size_t>> layer_sizes;  // (layer index, channels)
};

struct SizeHistory {
  std::vector<SizeRecord> rows;
};

inline void record_sizes(SizeHistory& history, const Network& net, std::size_t epoch) {
  SizeRecord rec;
  rec.epoch = epoch;
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const Layer& layer = net.layer(i);
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      rec.layer_sizes.emplace_back(i, lin->out_features());
    } else if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
      rec.layer_sizes.emplace_back(i, conv->out_channels());
    } else if (const auto* sw = std::get_if<SwitchLayer>(&layer)) {
      rec.layer_sizes.emplace_back(i, sw->active_count());
    }
  }
  history.rows.push_back(std::move(rec));
}

inline std::string to_csv(const SizeHistory& history) {
  std::string out = "epoch,layer,active_channels\n";
  for (const SizeRecord& rec : history.rows) {
    for (const auto& [layer, channels] : rec.layer_sizes) {
      out += std::to_string(rec.epoch) + ',' + std::to_string(layer) + ',' +
             std::to_string(channels) + '\n';
    }
  }
  return out;
}

inline SizeHistory size_history_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  SizeHistory history;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "epoch,layer,active_channels") {
        throw ParseError(line_no, "expected header epoch,layer,active_channels");
      }
      continue;
    }
    if (line.empty()) continue;
    std::size_t vals[3];
    std::size_t pos = 0;
    for (int f = 0; f < 3; ++f) {
      const std::size_t comma = line.find(',', pos);
      const std::string field =
          line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      if ((f < 2 && comma == std::string::npos) || (f == 2 && comma != std::string::npos) ||
          field.empty() || field.find_first_not_of("0123456789") != std::string::npos) {
        throw ParseError(line_no, "expected three nonnegative integers, got '" + line + "'");
      }
      vals[f] = std::stoull(field);
      pos = comma + 1;
    }
    if (history.rows.empty() || history.rows.back().epoch != vals[0]) {
      history.rows.push_back({vals[0], {}});
    }
    history.rows.back().layer_sizes.emplace_back(vals[1], vals[2]);
  }
  return history;
}

}  // namespace slimnet
