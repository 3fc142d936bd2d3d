#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "slimnet/layers.hpp"

namespace slimnet {

// One entry of an architecture description. Input widths are never written
// down; they are inferred from the running shape when the network is built.
struct LayerSpec {
  std::string type;          // linear, conv2d, batchnorm, switch, relu, maxpool2d, flatten
  std::size_t out = 0;       // linear out features / conv2d out channels
  std::size_t kernel = 0;    // conv2d, square
  std::size_t stride = 1;    // conv2d or maxpool2d
  std::size_t padding = 0;   // conv2d
  std::size_t window = 2;    // maxpool2d
};

struct ArchConfig {
  std::vector<std::size_t> input;
  std::vector<LayerSpec> layers;
};

namespace detail {

inline std::size_t positive_size(const nlohmann::json& j, const std::string& key,
                                 const std::string& where) {
  if (!j.contains(key)) throw SchemaError(where + " requires '" + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() <= 0) {
    throw SchemaError(where + " '" + key + "' must be a positive integer");
  }
  return v.get<std::size_t>();
}

}  // namespace detail

inline ArchConfig arch_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("architecture must be a JSON object");
  if (!j.contains("input") || !j.at("input").is_array() || j.at("input").empty()) {
    throw SchemaError("architecture requires a nonempty 'input' shape array");
  }
  ArchConfig cfg;
  for (const auto& e : j.at("input")) {
    if (!e.is_number_integer() || e.get<std::int64_t>() <= 0) {
      throw SchemaError("'input' extents must be positive integers");
    }
    cfg.input.push_back(e.get<std::size_t>());
  }
  if (!j.contains("layers") || !j.at("layers").is_array()) {
    throw SchemaError("architecture requires a 'layers' array");
  }
  std::size_t index = 0;
  for (const auto& lj : j.at("layers")) {
    const std::string where = "layer " + std::to_string(index++);
    if (!lj.is_object() || !lj.contains("type") || !lj.at("type").is_string()) {
      throw SchemaError(where + " must be an object with a 'type' string");
    }
    LayerSpec spec;
    spec.type = lj.at("type").get<std::string>();
    if (spec.type == "linear") {
      spec.out = detail::positive_size(lj, "out", where + " (linear)");
    } else if (spec.type == "conv2d") {
      spec.out = detail::positive_size(lj, "out", where + " (conv2d)");
      spec.kernel = detail::positive_size(lj, "kernel", where + " (conv2d)");
      spec.stride = lj.contains("stride") ? detail::positive_size(lj, "stride", where) : 1;
      if (lj.contains("padding")) {
        const auto& p = lj.at("padding");
        if (!p.is_number_integer() || p.get<std::int64_t>() < 0) {
          throw SchemaError(where + " 'padding' must be a nonnegative integer");
        }
        spec.padding = p.get<std::size_t>();
      }
    } else if (spec.type == "maxpool2d") {
      spec.window = lj.contains("window") ? detail::positive_size(lj, "window", where) : 2;
      spec.stride = lj.contains("stride") ? detail::positive_size(lj, "stride", where) : spec.window;
    } else if (spec.type != "batchnorm" && spec.type != "switch" && spec.type != "relu" &&
               spec.type != "flatten") {
      throw SchemaError(where + " has unknown type '" + spec.type + "'");
    }
    cfg.layers.push_back(std::move(spec));
  }
  return cfg;
}

inline ArchConfig parse_arch(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(1, std::string("invalid JSON: ") + e.what());
  }
  return arch_from_json(j);
}

inline nlohmann::json arch_to_json(const ArchConfig& cfg) {
  nlohmann::json j;
  j["input"] = cfg.input;
  j["layers"] = nlohmann::json::array();
  for (const LayerSpec& spec : cfg.layers) {
    nlohmann::json lj;
    lj["type"] = spec.type;
    if (spec.type == "linear") {
      lj["out"] = spec.out;
    } else if (spec.type == "conv2d") {
      lj["out"] = spec.out;
      lj["kernel"] = spec.kernel;
      lj["stride"] = spec.stride;
      lj["padding"] = spec.padding;
    } else if (spec.type == "maxpool2d") {
      lj["window"] = spec.window;
      lj["stride"] = spec.stride;
    }
    j["layers"].push_back(std::move(lj));
  }
  return j;
}

// Multiplies every linear/conv width by `factor`, except the last sized layer
// (the classifier head keeps the class count). Switch and batchnorm layers
// follow the widths around them automatically.
inline ArchConfig oversize(ArchConfig cfg, double factor) {
  if (factor < 1.0) throw ArgumentError("oversize factor must be >= 1");
  std::size_t last_sized = cfg.layers.size();
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    if (cfg.layers[i].type == "linear" || cfg.layers[i].type == "conv2d") last_sized = i;
  }
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    if (i == last_sized) continue;
    LayerSpec& spec = cfg.layers[i];
    if (spec.type == "linear" || spec.type == "conv2d") {
      spec.out = static_cast<std::size_t>(std::ceil(static_cast<double>(spec.out) * factor));
    }
  }
  return cfg;
}

// Instantiates the description with seeded random parameters, inferring every
// input width from the running activation shape.
inline Network build_network(const ArchConfig& cfg, std::uint64_t seed,
                             bool include_switches = true) {
  SeededRng rng(seed);
  std::vector<Layer> layers;
  std::vector<std::size_t> cur = cfg.input;
  std::size_t index = 0;
  for (const LayerSpec& spec : cfg.layers) {
    const std::string where = "layer " + std::to_string(index++) + " (" + spec.type + ")";
    if (spec.type == "linear") {
      if (cur.size() != 1) {
        throw DimensionError(where + ": input " + shape_string(cur) +
                             " is not flat; add a flatten layer first");
      }
      layers.emplace_back(LinearLayer::random(spec.out, cur[0], rng));
      cur = {spec.out};
    } else if (spec.type == "conv2d") {
      if (cur.size() != 3) {
        throw DimensionError(where + ": input " + shape_string(cur) + " is not [c, h, w]");
      }
      const std::size_t h = cur[1] + 2 * spec.padding, w = cur[2] + 2 * spec.padding;
      if (spec.kernel > h || spec.kernel > w) {
        throw DimensionError(where + ": kernel " + std::to_string(spec.kernel) +
                             " exceeds padded input " + shape_string(cur));
      }
      layers.emplace_back(Conv2dLayer::random(spec.out, cur[0], spec.kernel, spec.kernel,
                                              spec.stride, spec.padding, rng));
      cur = {spec.out, (h - spec.kernel) / spec.stride + 1, (w - spec.kernel) / spec.stride + 1};
    } else if (spec.type == "batchnorm") {
      layers.emplace_back(BatchNormLayer(cur[0]));
    } else if (spec.type == "switch") {
      if (include_switches) layers.emplace_back(SwitchLayer::random(cur[0], rng));
    } else if (spec.type == "relu") {
      layers.emplace_back(ReluLayer{});
    } else if (spec.type == "maxpool2d") {
      if (cur.size() != 3) {
        throw DimensionError(where + ": input " + shape_string(cur) + " is not [c, h, w]");
      }
      if (spec.window > cur[1] || spec.window > cur[2]) {
        throw DimensionError(where + ": window " + std::to_string(spec.window) +
                             " exceeds input " + shape_string(cur));
      }
      layers.emplace_back(MaxPool2dLayer{spec.window, spec.stride});
      cur = {cur[0], (cur[1] - spec.window) / spec.stride + 1,
             (cur[2] - spec.window) / spec.stride + 1};
    } else {  // flatten
      std::size_t total = 1;
      for (std::size_t e : cur) total *= e;
      layers.emplace_back(FlattenLayer{});
      cur = {total};
    }
  }
  return Network(cfg.input, std::move(layers));
}

}  // namespace slimnet
