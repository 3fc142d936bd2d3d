#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "slimnet/arch.hpp"
#include "slimnet/data.hpp"
#include "slimnet/fuse.hpp"
#include "slimnet/gc.hpp"
#include "slimnet/objective.hpp"
#include "slimnet/optim.hpp"

namespace slimnet {

struct TrainConfig {
  ArchConfig arch;
  PenaltyConfig penalty;
  ScreenerConfig screener;
  AdamConfig adam;
  PlateauSchedule schedule;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  std::size_t size_window = 3;  // epochs of unchanged sizes that count as converged
  std::size_t max_epochs = 200;
};

inline void validate(const TrainConfig& cfg) {
  validate(cfg.penalty);
  validate(cfg.screener);
  validate(cfg.adam);
  validate(cfg.schedule);
  if (cfg.batch == 0) throw ConfigError("batch size must be at least 1");
  if (cfg.size_window == 0) throw ConfigError("size window must be at least 1");
  if (cfg.max_epochs == 0) throw ConfigError("max epochs must be at least 1");
}

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
  std::size_t param_count = 0;  // switches excluded
};

struct TrainResult {
  Network checkpoint;  // network at the selected epoch
  std::size_t selected_epoch = 0;
  double val_accuracy = 0.0;   // of the selected epoch
  double test_accuracy = 0.0;  // of the checkpoint; NaN without a test split
  bool size_converged = false;  // false means the fallback selection was used
  SizeHistory sizes;
  std::vector<EpochStats> epochs;
  double wall_seconds = 0.0;
};

// One optimizer update: forward, cross-entropy, backward, penalty gradients,
// Adam, then a sign observation on every switch. Returns the penalized loss
// at the pre-update parameters.
inline double train_step(Network& net, AdamState& adam, const Tensor& x,
                         const std::vector<int>& labels, const PenaltyConfig& penalty,
                         const ScreenerConfig& screener, bool update_switch_state) {
  ForwardResult res = forward(net, x, Mode::Train);
  const CrossEntropyResult ce = cross_entropy(res.output, labels);
  const LossBreakdown breakdown = penalized_loss(ce.loss, net, penalty);
  Gradients grads = backward(net, res.tape, ce.grad);
  add_penalty_gradients(net, grads, penalty);
  adam.step(net, grads);
  if (update_switch_state) {
    for (Layer& layer : net.layers()) {
      if (auto* sw = std::get_if<SwitchLayer>(&layer)) observe_signs(*sw, screener);
    }
  }
  return breakdown.total;
}

namespace detail {

inline Tensor reshape_rows(const Tensor& batch, const std::vector<std::size_t>& sample_shape) {
  std::vector<std::size_t> shape{batch.extent(0)};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor(std::move(shape), std::vector<double>(batch.values()));
}

inline double evaluate_split(const Network& net, const Dataset& ds,
                             const std::vector<std::size_t>& rows,
                             const std::vector<std::size_t>& sample_shape, std::size_t batch) {
  if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t hits = 0;
  for (std::size_t start = 0; start < rows.size(); start += batch) {
    const std::size_t stop = std::min(start + batch, rows.size());
    const Batch chunk = make_batch(
        ds, std::vector<std::size_t>(rows.begin() + static_cast<std::ptrdiff_t>(start),
                                     rows.begin() + static_cast<std::ptrdiff_t>(stop)));
    const Tensor logits = infer(net, reshape_rows(chunk.features, sample_shape));
    hits += static_cast<std::size_t>(
        std::llround(accuracy(logits, chunk.labels) * static_cast<double>(chunk.labels.size())));
  }
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

// End-of-epoch screening and removal for one switch. Channels the screener
// flags are deactivated; if that would empty the layer, the steadiest flagged
// channel (lowest sign variance) is spared. Removal is skipped, with the
// deactivations kept, when the topology refuses physical cuts.
inline void screen_and_remove(Network& net, std::size_t switch_index, const ScreenerConfig& cfg,
                              AdamState& adam) {
  auto& sw = std::get<SwitchLayer>(net.layer(switch_index));
  std::vector<std::size_t> flagged = screen(sw, cfg);
  if (!flagged.empty() && flagged.size() == sw.active_count()) {
    std::size_t keep = 0;
    for (std::size_t i = 1; i < flagged.size(); ++i) {
      if (sw.sign_var[flagged[i]] < sw.sign_var[flagged[keep]]) keep = i;
    }
    flagged.erase(flagged.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  if (flagged.empty()) return;
  std::optional<RemovalPlan> plan;
  try {
    plan = plan_removal(net, switch_index, flagged);
  } catch (const StateError&) {
    // Not physically removable here; the channels still turn off below.
  }
  deactivate(sw, flagged);
  if (plan) apply_removal(net, *plan, &adam);
}

}  // namespace detail

// Full training run: minibatch Adam on the penalized loss with per-step sign
// observation, end-of-epoch screening plus channel removal, and a plateau
// schedule driven by validation accuracy. The returned checkpoint is the
// best-validation epoch among epochs whose per-layer sizes had been stable
// for `size_window` consecutive epochs; if no epoch qualifies before the
// schedule stops, the best of the last `size_window` epochs is returned with
// size_converged = false.
inline TrainResult train(const TrainConfig& cfg, const Dataset& ds) {
  validate(cfg);
  const auto started = std::chrono::steady_clock::now();

  std::size_t input_size = 1;
  for (std::size_t e : cfg.arch.input) input_size *= e;
  if (ds.sample_count() == 0 || ds.feature_count() != input_size) {
    throw ConfigError("dataset rows have " + std::to_string(ds.feature_count()) +
                      " features but the architecture input " + shape_string(cfg.arch.input) +
                      " needs " + std::to_string(input_size));
  }
  const std::vector<std::size_t> train_rows = split_indices(ds, Split::Train);
  const std::vector<std::size_t> val_rows = split_indices(ds, Split::Val);
  const std::vector<std::size_t> test_rows = split_indices(ds, Split::Test);
  if (train_rows.empty()) throw ConfigError("dataset has no training rows");
  if (val_rows.empty()) {
    throw ConfigError("dataset has no validation rows; the schedule and epoch selection need them");
  }
  for (int label : ds.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= ds.class_count) {
      throw ConfigError("dataset labels exceed its declared class count");
    }
  }

  Network net = build_network(cfg.arch, cfg.seed);
  const bool switches_on = cfg.penalty.lambda > 0.0;
  AdamState adam(net, cfg.adam, switches_on);
  PlateauSchedule schedule = cfg.schedule;
  SeededRng shuffle_rng = SeededRng(cfg.seed).split(0x5bf);

  TrainResult result;
  std::string best_bytes;
  double best_val = -std::numeric_limits<double>::infinity();
  // Rolling snapshots of the trailing size_window epochs for the fallback.
  std::vector<std::tuple<std::size_t, double, std::string>> trailing;

  std::vector<std::size_t> order = train_rows;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t stop = std::min(start + cfg.batch, order.size());
      const Batch batch = make_batch(
          ds, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                       order.begin() + static_cast<std::ptrdiff_t>(stop)));
      loss_sum += train_step(net, adam, detail::reshape_rows(batch.features, cfg.arch.input),
                             batch.labels, cfg.penalty, cfg.screener, switches_on);
      ++batches;
    }

    if (switches_on) {
      for (std::size_t i = 0; i < net.layer_count(); ++i) {
        if (std::holds_alternative<SwitchLayer>(net.layer(i))) {
          detail::screen_and_remove(net, i, cfg.screener, adam);
        }
      }
    }
    record_sizes(result.sizes, net, epoch);

    const double val_acc = detail::evaluate_split(net, ds, val_rows, cfg.arch.input, cfg.batch);
    result.epochs.push_back(EpochStats{epoch, loss_sum / static_cast<double>(batches), val_acc,
                                       adam.learning_rate(), param_count(net, false)});

    const std::size_t have = result.sizes.rows.size();
    bool converged = have >= cfg.size_window;
    for (std::size_t k = 1; converged && k < cfg.size_window; ++k) {
      converged = result.sizes.rows[have - 1].layer_sizes == result.sizes.rows[have - 1 - k].layer_sizes;
    }
    if (converged && val_acc > best_val) {
      best_val = val_acc;
      result.selected_epoch = epoch;
      best_bytes = serialize_checkpoint(net);
    }
    trailing.emplace_back(epoch, val_acc, serialize_checkpoint(net));
    if (trailing.size() > cfg.size_window) trailing.erase(trailing.begin());

    const ScheduleDecision decision = schedule_update(schedule, val_acc, adam.learning_rate());
    if (decision.lr != adam.learning_rate()) adam.set_learning_rate(decision.lr);
    if (decision.stop) break;
  }

  if (!best_bytes.empty()) {
    result.size_converged = true;
    result.checkpoint = parse_checkpoint(best_bytes);
    result.val_accuracy = best_val;
  } else {
    // No epoch reached size convergence: fall back to the best validation
    // accuracy among the trailing size_window epochs and flag the result.
    result.size_converged = false;
    std::size_t pick = 0;
    for (std::size_t i = 1; i < trailing.size(); ++i) {
      if (std::get<1>(trailing[i]) > std::get<1>(trailing[pick])) pick = i;
    }
    result.selected_epoch = std::get<0>(trailing[pick]);
    result.val_accuracy = std::get<1>(trailing[pick]);
    result.checkpoint = parse_checkpoint(std::get<2>(trailing[pick]));
  }
  result.test_accuracy =
      detail::evaluate_split(result.checkpoint, ds, test_rows, cfg.arch.input, cfg.batch);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// ---------------------------------------------------------------------------
// Latency measurement.
// ---------------------------------------------------------------------------

namespace detail {

inline double measure_latency(const FusedModel& model, std::size_t batch, std::size_t warmup,
                              std::size_t repetitions) {
  SeededRng rng(0xbe7c);
  std::vector<std::size_t> shape{batch};
  shape.insert(shape.end(), model.input_shape().begin(), model.input_shape().end());
  Tensor x(shape);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();

  volatile double sink = 0.0;
  for (std::size_t i = 0; i < warmup; ++i) sink = sink + predict(model, x)[0];
  std::vector<double> seconds(repetitions);
  for (std::size_t i = 0; i < repetitions; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor out = predict(model, x);
    const auto t1 = std::chrono::steady_clock::now();
    sink = sink + out[0];
    seconds[i] = std::chrono::duration<double>(t1 - t0).count();
  }
  (void)sink;
  std::sort(seconds.begin(), seconds.end());
  const std::size_t mid = repetitions / 2;
  return repetitions % 2 == 1 ? seconds[mid] : 0.5 * (seconds[mid - 1] + seconds[mid]);
}

}  // namespace detail

struct LatencyMeasurement {
  std::size_t batch = 0;
  double model_seconds = 0.0;
  double baseline_seconds = 0.0;
  double speedup = 0.0;  // baseline / model
};

struct BenchReport {
  std::size_t model_params = 0;
  std::size_t baseline_params = 0;
  double size_ratio = 0.0;  // baseline / model
  std::vector<LatencyMeasurement> measurements;
};

// Median single-threaded predict latency of model vs baseline per batch size.
// The floor of 5 warmup and 50 timed repetitions is part of the measurement
// contract and is enforced even if smaller values are requested.
inline BenchReport bench_inference(const FusedModel& model, const FusedModel& baseline,
                                   const std::vector<std::size_t>& batch_sizes,
                                   std::size_t repetitions = 50, std::size_t warmup = 5) {
  if (model.input_shape() != baseline.input_shape()) {
    throw DimensionError("benchmark inputs differ: model " + shape_string(model.input_shape()) +
                         " vs baseline " + shape_string(baseline.input_shape()));
  }
  if (batch_sizes.empty()) throw ArgumentError("need at least one batch size");
  repetitions = std::max<std::size_t>(repetitions, 50);
  warmup = std::max<std::size_t>(warmup, 5);

  BenchReport report;
  report.model_params = param_count(model.net, true);
  report.baseline_params = param_count(baseline.net, true);
  report.size_ratio =
      static_cast<double>(report.baseline_params) / static_cast<double>(report.model_params);
  for (std::size_t batch : batch_sizes) {
    if (batch == 0) throw ArgumentError("batch sizes must be positive");
    LatencyMeasurement m;
    m.batch = batch;
    m.model_seconds = detail::measure_latency(model, batch, warmup, repetitions);
    m.baseline_seconds = detail::measure_latency(baseline, batch, warmup, repetitions);
    m.speedup = m.baseline_seconds / m.model_seconds;
    report.measurements.push_back(m);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Random hyperparameter search.
// ---------------------------------------------------------------------------

struct SearchSpace {
  std::pair<double, double> lr_range{1e-4, 1e-2};
  std::pair<double, double> lambda_range{1e-6, 1e-2};
  std::pair<double, double> lambda2_range{1e-6, 1e-3};
  std::vector<std::size_t> batch_sizes{32, 64, 128, 256};
  std::size_t trials = 20;
  std::uint64_t base_seed = 0;
  double oversize_factor = 2.0;
};

inline void validate(const SearchSpace& space) {
  for (const auto& [lo, hi] : {space.lr_range, space.lambda_range, space.lambda2_range}) {
    if (!(lo > 0.0) || hi < lo) throw ConfigError("search ranges must be positive with lo <= hi");
  }
  if (space.batch_sizes.empty()) throw ConfigError("search needs at least one batch size");
  for (std::size_t b : space.batch_sizes) {
    if (b == 0) throw ConfigError("batch sizes must be positive");
  }
  if (space.trials == 0) throw ConfigError("trial count must be at least 1");
  if (space.oversize_factor < 1.0) throw ConfigError("oversize factor must be >= 1");
}

struct TrialRecord {
  std::size_t index = 0;
  bool failed = false;
  std::string error;

  double lr = 0.0;
  double lambda = 0.0;
  double lambda2 = 0.0;
  double p = 1.0;
  std::size_t batch = 0;
  std::uint64_t seed = 0;

  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t param_count = 0;  // switches excluded
  std::vector<std::pair<std::size_t, std::size_t>> layer_sizes;
  double wall_seconds = 0.0;
  double latency_seconds = 0.0;  // median fused predict latency, NaN if unmeasured
  bool size_converged = false;
};

inline nlohmann::json trial_to_json(const TrialRecord& r) {
  nlohmann::json j;
  j["index"] = r.index;
  j["failed"] = r.failed;
  if (r.failed) j["error"] = r.error;
  j["lr"] = r.lr;
  j["lambda"] = r.lambda;
  j["lambda2"] = r.lambda2;
  j["p"] = r.p;
  j["batch"] = r.batch;
  j["seed"] = r.seed;
  if (!r.failed) {
    j["val_accuracy"] = r.val_accuracy;
    j["test_accuracy"] = r.test_accuracy;
    j["param_count"] = r.param_count;
    j["layer_sizes"] = nlohmann::json::array();
    for (const auto& [layer, size] : r.layer_sizes) {
      j["layer_sizes"].push_back({layer, size});
    }
    j["wall_seconds"] = r.wall_seconds;
    if (std::isfinite(r.latency_seconds)) j["latency_seconds"] = r.latency_seconds;
    j["size_converged"] = r.size_converged;
  }
  return j;
}

inline TrialRecord trial_from_json(const nlohmann::json& j) {
  TrialRecord r;
  r.index = j.at("index").get<std::size_t>();
  r.failed = j.at("failed").get<bool>();
  if (r.failed) r.error = j.value("error", "");
  r.lr = j.at("lr").get<double>();
  r.lambda = j.at("lambda").get<double>();
  r.lambda2 = j.at("lambda2").get<double>();
  r.p = j.value("p", 1.0);
  r.batch = j.at("batch").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  if (!r.failed) {
    r.val_accuracy = j.at("val_accuracy").get<double>();
    r.test_accuracy = j.at("test_accuracy").get<double>();
    r.param_count = j.at("param_count").get<std::size_t>();
    for (const auto& e : j.at("layer_sizes")) {
      r.layer_sizes.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
    }
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.latency_seconds = j.contains("latency_seconds")
                            ? j.at("latency_seconds").get<double>()
                            : std::numeric_limits<double>::quiet_NaN();
    r.size_converged = j.at("size_converged").get<bool>();
  }
  return r;
}

// Independent seeded trials over the search space. The architecture is
// oversized before training; trial i samples its hyperparameters from a
// dedicated RNG stream and trains with seed base_seed + i. Failures land in
// the record list instead of aborting the search. `on_trial` fires after
// every trial for incremental persistence.
inline std::vector<TrialRecord> random_search(
    const SearchSpace& space, const Dataset& ds, const ArchConfig& arch,
    const TrainConfig& base_config,
    const std::function<void(const TrialRecord&)>& on_trial = {}) {
  validate(space);
  const ArchConfig big = oversize(arch, space.oversize_factor);

  std::vector<TrialRecord> records;
  records.reserve(space.trials);
  for (std::size_t i = 0; i < space.trials; ++i) {
    SeededRng rng = SeededRng(space.base_seed).split(i);
    TrialRecord rec;
    rec.index = i;
    rec.lr = rng.log_uniform(space.lr_range.first, space.lr_range.second);
    rec.lambda = rng.log_uniform(space.lambda_range.first, space.lambda_range.second);
    rec.lambda2 = rng.log_uniform(space.lambda2_range.first, space.lambda2_range.second);
    rec.batch = space.batch_sizes[rng.next_below(space.batch_sizes.size())];
    rec.seed = space.base_seed + i;
    rec.p = base_config.penalty.p;

    TrainConfig cfg = base_config;
    cfg.arch = big;
    cfg.adam.lr = rec.lr;
    cfg.penalty.lambda = rec.lambda;
    cfg.penalty.lambda2 = rec.lambda2;
    cfg.batch = rec.batch;
    cfg.seed = rec.seed;
    try {
      TrainResult res = train(cfg, ds);
      rec.val_accuracy = res.val_accuracy;
      rec.test_accuracy = res.test_accuracy;
      rec.param_count = param_count(res.checkpoint, false);
      SizeHistory sizes;
      record_sizes(sizes, res.checkpoint, res.selected_epoch);
      rec.layer_sizes = sizes.rows.front().layer_sizes;
      rec.wall_seconds = res.wall_seconds;
      rec.size_converged = res.size_converged;
      try {
        rec.latency_seconds = detail::measure_latency(fuse_network(res.checkpoint), 32, 5, 51);
      } catch (const Error&) {
        rec.latency_seconds = std::numeric_limits<double>::quiet_NaN();
      }
    } catch (const Error& e) {
      rec.failed = true;
      rec.error = e.what();
    }
    records.push_back(std::move(rec));
    if (on_trial) on_trial(records.back());
  }
  return records;
}

// ---------------------------------------------------------------------------
// Pareto frontier over (size, accuracy).
// ---------------------------------------------------------------------------

struct ParetoPoint {
  std::size_t size = 0;
  double accuracy = 0.0;
};

// Indices of the points no other point dominates (size <=, accuracy >=, at
// least one strict), ordered by ascending size with original order breaking
// ties. Duplicate points do not dominate each other, so both survive.
inline std::vector<std::size_t> pareto_indices(const std::vector<ParetoPoint>& points) {
  std::vector<std::size_t> order(points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&points](std::size_t a, std::size_t b) {
    if (points[a].size != points[b].size) return points[a].size < points[b].size;
    return a < b;
  });

  std::vector<std::size_t> keep;
  double best_smaller = -std::numeric_limits<double>::infinity();
  std::size_t group_start = 0;
  while (group_start < order.size()) {
    std::size_t group_end = group_start;
    double group_max = -std::numeric_limits<double>::infinity();
    while (group_end < order.size() &&
           points[order[group_end]].size == points[order[group_start]].size) {
      group_max = std::max(group_max, points[order[group_end]].accuracy);
      ++group_end;
    }
    for (std::size_t k = group_start; k < group_end; ++k) {
      const double acc = points[order[k]].accuracy;
      if (acc == group_max && acc > best_smaller) keep.push_back(order[k]);
    }
    best_smaller = std::max(best_smaller, group_max);
    group_start = group_end;
  }
  return keep;
}

inline std::vector<TrialRecord> pareto_frontier(const std::vector<TrialRecord>& records) {
  std::vector<ParetoPoint> points;
  std::vector<std::size_t> originals;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].failed) continue;
    points.push_back(ParetoPoint{records[i].param_count, records[i].test_accuracy});
    originals.push_back(i);
  }
  std::vector<TrialRecord> frontier;
  for (std::size_t idx : pareto_indices(points)) frontier.push_back(records[originals[idx]]);
  return frontier;
}

inline std::string pareto_to_csv(const std::vector<TrialRecord>& frontier) {
  std::string out = "trial,param_count,test_accuracy,lr,lambda,lambda2,batch\n";
  for (const TrialRecord& r : frontier) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f,%.8g,%.8g,%.8g,%zu\n", r.index, r.param_count,
                  r.test_accuracy, r.lr, r.lambda, r.lambda2, r.batch);
    out += buf;
  }
  return out;
}

}  // namespace slimnet
