#include "slimnet/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

namespace slimnet {
namespace {

ArchConfig small_mlp_arch(std::size_t in, std::size_t hidden, std::size_t classes) {
  nlohmann::json j;
  j["input"] = {in};
  j["layers"] = {nlohmann::json{{"type", "linear"}, {"out", hidden}},
                 nlohmann::json{{"type", "switch"}},
                 nlohmann::json{{"type", "relu"}},
                 nlohmann::json{{"type", "linear"}, {"out", classes}}};
  return arch_from_json(j);
}

Dataset small_dataset(std::size_t n, std::size_t d, std::size_t k, std::size_t classes,
                      std::uint64_t seed, double noise = 0.05) {
  SyntheticSpec spec;
  spec.samples = n;
  spec.features = d;
  spec.informative = k;
  spec.classes = classes;
  spec.noise = noise;
  spec.seed = seed;
  return split_standardize(gen_synthetic(spec), {0.7, 0.15, 0.15}, seed + 1);
}

TEST(TrainStep, ComposesForwardPenaltyAndAdam) {
  SeededRng rng(400);
  Network net = testing::make_mlp(4, {5}, 3, true, rng);
  Network manual = net;
  AdamState adam(net, AdamConfig{2e-3});
  AdamState manual_adam(manual, AdamConfig{2e-3});
  PenaltyConfig penalty{0.01, 1e-3, 1.0};
  ScreenerConfig screener;

  Tensor x = testing::random_normal({6, 4}, rng);
  std::vector<int> labels{0, 1, 2, 0, 1, 2};
  const double loss = train_step(net, adam, x, labels, penalty, screener, true);

  ForwardResult res = forward(manual, x, Mode::Train);
  CrossEntropyResult ce = cross_entropy(res.output, labels);
  LossBreakdown breakdown = penalized_loss(ce.loss, manual, penalty);
  Gradients grads = backward(manual, res.tape, ce.grad);
  add_penalty_gradients(manual, grads, penalty);
  manual_adam.step(manual, grads);
  for (Layer& layer : manual.layers()) {
    if (auto* sw = std::get_if<SwitchLayer>(&layer)) observe_signs(*sw, screener);
  }

  EXPECT_EQ(loss, breakdown.total);
  EXPECT_EQ(serialize_checkpoint(net), serialize_checkpoint(manual));
}

TEST(Train, DisabledPruningKeepsEverySize) {
  TrainConfig cfg;
  cfg.arch = small_mlp_arch(6, 10, 3);
  cfg.penalty = PenaltyConfig{0.0, 0.0, 1.0};
  cfg.screener.threshold = std::numeric_limits<double>::infinity();
  cfg.adam.lr = 3e-3;
  cfg.batch = 32;
  cfg.seed = 3;
  cfg.max_epochs = 6;
  Dataset ds = small_dataset(240, 6, 2, 3, 40);

  TrainResult res = train(cfg, ds);
  ASSERT_EQ(res.epochs.size(), 6u);
  for (const EpochStats& e : res.epochs) {
    EXPECT_EQ(e.param_count, res.epochs.front().param_count);
  }
  for (const SizeRecord& rec : res.sizes.rows) {
    EXPECT_EQ(rec.layer_sizes, res.sizes.rows.front().layer_sizes);
  }
  EXPECT_TRUE(res.size_converged);  // sizes never move, so every epoch converges
  const auto& sw = std::get<SwitchLayer>(res.checkpoint.layer(1));
  EXPECT_EQ(sw.active_count(), 10u);
}

TEST(Train, ShrinksAndNeverRegrows) {
  TrainConfig cfg;
  cfg.arch = small_mlp_arch(8, 16, 3);
  cfg.penalty = PenaltyConfig{8e-3, 1e-5, 2.0};
  cfg.adam.lr = 4e-3;
  cfg.batch = 32;
  cfg.seed = 0;
  cfg.max_epochs = 25;
  cfg.schedule.patience = 50;  // keep the rate fixed; this test targets removal
  Dataset ds = small_dataset(600, 8, 2, 3, 41);

  TrainResult res = train(cfg, ds);
  for (std::size_t e = 1; e < res.sizes.rows.size(); ++e) {
    const auto& prev = res.sizes.rows[e - 1].layer_sizes;
    const auto& cur = res.sizes.rows[e].layer_sizes;
    ASSERT_EQ(prev.size(), cur.size());
    for (std::size_t i = 0; i < cur.size(); ++i) {
      EXPECT_EQ(cur[i].first, prev[i].first);
      EXPECT_LE(cur[i].second, prev[i].second) << "epoch " << e << " layer " << cur[i].first;
    }
  }
  const auto& last = res.sizes.rows.back().layer_sizes;
  EXPECT_LT(last[0].second, 16u) << "expected the oversized layer to shrink";
  for (std::size_t e = 1; e < res.epochs.size(); ++e) {
    EXPECT_LE(res.epochs[e].param_count, res.epochs[e - 1].param_count);
  }
}

TEST(Train, SelectionIsBestValidationAmongConvergedEpochs) {
  TrainConfig cfg;
  cfg.arch = small_mlp_arch(6, 12, 3);
  cfg.penalty = PenaltyConfig{5e-3, 0.0, 1.0};
  cfg.adam.lr = 3e-3;
  cfg.batch = 32;
  cfg.seed = 7;
  cfg.max_epochs = 14;
  cfg.size_window = 3;
  Dataset ds = small_dataset(400, 6, 2, 3, 42);

  TrainResult res = train(cfg, ds);
  ASSERT_TRUE(res.size_converged);

  double best = -1.0;
  std::size_t best_epoch = 0;
  for (std::size_t e = 0; e < res.epochs.size(); ++e) {
    bool converged = e + 1 >= cfg.size_window;
    for (std::size_t k = 1; converged && k < cfg.size_window; ++k) {
      converged = res.sizes.rows[e].layer_sizes == res.sizes.rows[e - k].layer_sizes;
    }
    if (converged && res.epochs[e].val_accuracy > best) {
      best = res.epochs[e].val_accuracy;
      best_epoch = e;
    }
  }
  EXPECT_EQ(res.selected_epoch, best_epoch);
  EXPECT_EQ(res.val_accuracy, best);
  EXPECT_EQ(param_count(res.checkpoint, false), res.epochs[res.selected_epoch].param_count);
}

TEST(Train, FallbackWhenNothingConverges) {
  TrainConfig cfg;
  cfg.arch = small_mlp_arch(6, 8, 3);
  cfg.penalty = PenaltyConfig{1e-4, 0.0, 1.0};
  cfg.adam.lr = 3e-3;
  cfg.batch = 32;
  cfg.seed = 1;
  cfg.max_epochs = 2;
  cfg.size_window = 3;  // cannot be satisfied within two epochs
  Dataset ds = small_dataset(200, 6, 2, 3, 43);

  TrainResult res = train(cfg, ds);
  EXPECT_FALSE(res.size_converged);
  const double expected =
      std::max(res.epochs[0].val_accuracy, res.epochs[1].val_accuracy);
  EXPECT_EQ(res.val_accuracy, expected);
}

TEST(Train, RunsConvArchitecturesFromFlatRows) {
  nlohmann::json j;
  j["input"] = {1, 4, 4};
  j["layers"] = {nlohmann::json{{"type", "conv2d"}, {"out", 3}, {"kernel", 3}, {"padding", 1}},
                 nlohmann::json{{"type", "switch"}},
                 nlohmann::json{{"type", "relu"}},
                 nlohmann::json{{"type", "flatten"}},
                 nlohmann::json{{"type", "linear"}, {"out", 2}}};
  TrainConfig cfg;
  cfg.arch = arch_from_json(j);
  cfg.penalty = PenaltyConfig{1e-3, 0.0, 1.0};
  cfg.adam.lr = 3e-3;
  cfg.batch = 16;
  cfg.max_epochs = 2;
  Dataset ds = small_dataset(120, 16, 3, 2, 44);

  TrainResult res = train(cfg, ds);
  EXPECT_TRUE(std::isfinite(res.val_accuracy));
  EXPECT_TRUE(std::isfinite(res.test_accuracy));
}

TEST(Train, RejectsMismatchedInputs) {
  TrainConfig cfg;
  cfg.arch = small_mlp_arch(6, 8, 3);
  cfg.max_epochs = 1;
  Dataset ds = small_dataset(60, 5, 2, 3, 45);  // 5 features, arch wants 6
  EXPECT_THROW(train(cfg, ds), ConfigError);

  Dataset no_val = gen_synthetic([] {
    SyntheticSpec s;
    s.samples = 50;
    s.features = 6;
    s.informative = 2;
    s.classes = 3;
    return s;
  }());
  EXPECT_THROW(train(cfg, no_val), ConfigError);

  Dataset ok = small_dataset(60, 6, 2, 3, 46);
  TrainConfig bad = cfg;
  bad.batch = 0;
  EXPECT_THROW(train(bad, ok), ConfigError);
  bad = cfg;
  bad.size_window = 0;
  EXPECT_THROW(train(bad, ok), ConfigError);

  Dataset liar = ok;
  liar.class_count = 2;  // labels reach 2
  EXPECT_THROW(train(cfg, liar), ConfigError);
}

TEST(RandomSearch, DeterministicSamplingAndIncrementalRecords) {
  Dataset ds = small_dataset(200, 6, 2, 3, 47);
  ArchConfig arch = small_mlp_arch(6, 8, 3);
  TrainConfig base;
  base.penalty.p = 1.0;
  base.max_epochs = 3;
  base.size_window = 2;

  SearchSpace space;
  space.trials = 4;
  space.base_seed = 9;

  std::vector<std::size_t> seen;
  auto a = random_search(space, ds, arch, base,
                         [&seen](const TrialRecord& r) { seen.push_back(r.index); });
  auto b = random_search(space, ds, arch, base);
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2, 3}));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_FALSE(a[i].failed) << a[i].error;
    EXPECT_EQ(a[i].lr, b[i].lr);
    EXPECT_EQ(a[i].lambda, b[i].lambda);
    EXPECT_EQ(a[i].lambda2, b[i].lambda2);
    EXPECT_EQ(a[i].batch, b[i].batch);
    EXPECT_EQ(a[i].seed, space.base_seed + i);
    EXPECT_EQ(a[i].param_count, b[i].param_count);
    EXPECT_EQ(a[i].test_accuracy, b[i].test_accuracy);
    EXPECT_GE(a[i].lr, 1e-4);
    EXPECT_LE(a[i].lr, 1e-2);
    // The trained width-16 oversized net keeps the head at 3 classes.
    EXPECT_EQ(a[i].layer_sizes.back().second, 3u);
  }
}

TEST(RandomSearch, TrialFailuresAreRecordedNotFatal) {
  SyntheticSpec spec;
  spec.samples = 50;
  spec.features = 6;
  spec.informative = 2;
  spec.classes = 3;
  Dataset no_val = gen_synthetic(spec);  // never split: no validation rows

  SearchSpace space;
  space.trials = 3;
  auto records = random_search(space, no_val, small_mlp_arch(6, 8, 3), TrainConfig{});
  ASSERT_EQ(records.size(), 3u);
  for (const TrialRecord& r : records) {
    EXPECT_TRUE(r.failed);
    EXPECT_NE(r.error.find("validation"), std::string::npos);
    EXPECT_GT(r.lr, 0.0);  // sampled config still recorded
  }
}

TEST(TrialRecord, JsonRoundTrip) {
  TrialRecord r;
  r.index = 5;
  r.lr = 3e-3;
  r.lambda = 1e-4;
  r.lambda2 = 1e-5;
  r.p = 2.0;
  r.batch = 64;
  r.seed = 14;
  r.val_accuracy = 0.91;
  r.test_accuracy = 0.89;
  r.param_count = 123;
  r.layer_sizes = {{0, 8}, {1, 8}, {3, 3}};
  r.wall_seconds = 1.25;
  r.latency_seconds = 4.5e-5;
  r.size_converged = true;

  TrialRecord back = trial_from_json(trial_to_json(r));
  EXPECT_EQ(back.index, r.index);
  EXPECT_EQ(back.lr, r.lr);
  EXPECT_EQ(back.lambda, r.lambda);
  EXPECT_EQ(back.batch, r.batch);
  EXPECT_EQ(back.layer_sizes, r.layer_sizes);
  EXPECT_EQ(back.latency_seconds, r.latency_seconds);
  EXPECT_EQ(back.size_converged, r.size_converged);

  TrialRecord failed;
  failed.index = 2;
  failed.failed = true;
  failed.error = "boom";
  failed.lr = 1e-3;
  TrialRecord failed_back = trial_from_json(trial_to_json(failed));
  EXPECT_TRUE(failed_back.failed);
  EXPECT_EQ(failed_back.error, "boom");
  EXPECT_TRUE(std::isnan(trial_from_json(trial_to_json(TrialRecord{})).latency_seconds) ||
              trial_from_json(trial_to_json(TrialRecord{})).failed == false);
}

// O(n^2) reference: a point survives iff no other point dominates it.
std::vector<std::size_t> pareto_oracle(const std::vector<ParetoPoint>& pts) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < pts.size() && !dominated; ++j) {
      dominated = pts[j].size <= pts[i].size && pts[j].accuracy >= pts[i].accuracy &&
                  (pts[j].size < pts[i].size || pts[j].accuracy > pts[i].accuracy);
    }
    if (!dominated) keep.push_back(i);
  }
  std::sort(keep.begin(), keep.end(), [&pts](std::size_t a, std::size_t b) {
    if (pts[a].size != pts[b].size) return pts[a].size < pts[b].size;
    return a < b;
  });
  return keep;
}

TEST(Pareto, KnownCases) {
  EXPECT_EQ(pareto_indices({{10, 0.9}}), (std::vector<std::size_t>{0}));
  EXPECT_EQ(pareto_indices({{10, 0.9}, {20, 0.8}}), (std::vector<std::size_t>{0}));
  EXPECT_EQ(pareto_indices({{20, 0.8}, {10, 0.9}}), (std::vector<std::size_t>{1}));
  EXPECT_EQ(pareto_indices({{10, 0.5}, {20, 0.9}}), (std::vector<std::size_t>{0, 1}));
  // Duplicates do not dominate each other.
  EXPECT_EQ(pareto_indices({{10, 0.9}, {10, 0.9}, {15, 0.9}}),
            (std::vector<std::size_t>{0, 1}));
  // Equal size, lower accuracy is dominated.
  EXPECT_EQ(pareto_indices({{10, 0.9}, {10, 0.7}}), (std::vector<std::size_t>{0}));
  EXPECT_TRUE(pareto_indices({}).empty());
}

TEST(Pareto, MatchesBruteForceOracle) {
  SeededRng rng(500);
  for (int round = 0; round < 50; ++round) {
    const std::size_t n = 1 + rng.next_below(200);
    std::vector<ParetoPoint> pts(n);
    for (auto& p : pts) {
      p.size = 1 + rng.next_below(40);  // small range forces many ties
      p.accuracy = 0.5 + 0.5 * static_cast<double>(rng.next_below(20)) / 20.0;
    }
    ASSERT_EQ(pareto_indices(pts), pareto_oracle(pts)) << "round " << round;
  }
}

TEST(Pareto, FrontierSkipsFailedTrials) {
  std::vector<TrialRecord> records(3);
  records[0].index = 0;
  records[0].param_count = 10;
  records[0].test_accuracy = 0.9;
  records[1].index = 1;
  records[1].failed = true;
  records[2].index = 2;
  records[2].param_count = 20;
  records[2].test_accuracy = 0.95;
  auto frontier = pareto_frontier(records);
  ASSERT_EQ(frontier.size(), 2u);
  EXPECT_EQ(frontier[0].index, 0u);
  EXPECT_EQ(frontier[1].index, 2u);
  const std::string csv = pareto_to_csv(frontier);
  EXPECT_EQ(csv.substr(0, 52), "trial,param_count,test_accuracy,lr,lambda,lambda2,ba");
}

TEST(Bench, SelfComparisonIsUnity) {
  nlohmann::json j;
  j["input"] = {8};
  j["layers"] = {nlohmann::json{{"type", "linear"}, {"out", 16}},
                 nlohmann::json{{"type", "relu"}},
                 nlohmann::json{{"type", "linear"}, {"out", 4}}};
  FusedModel model{build_network(arch_from_json(j), 1), 8};

  BenchReport report = bench_inference(model, model, {4, 16});
  EXPECT_EQ(report.size_ratio, 1.0);
  EXPECT_EQ(report.model_params, report.baseline_params);
  ASSERT_EQ(report.measurements.size(), 2u);
  for (const LatencyMeasurement& m : report.measurements) {
    EXPECT_GT(m.speedup, 0.8) << "batch " << m.batch;
    EXPECT_LT(m.speedup, 1.25) << "batch " << m.batch;
    EXPECT_GT(m.model_seconds, 0.0);
  }
}

TEST(Bench, SizeRatioIsExactParamRatio) {
  auto mlp = [](std::size_t hidden) {
    nlohmann::json j;
    j["input"] = {8};
    j["layers"] = {nlohmann::json{{"type", "linear"}, {"out", hidden}},
                   nlohmann::json{{"type", "relu"}},
                   nlohmann::json{{"type", "linear"}, {"out", 4}}};
    return FusedModel{build_network(arch_from_json(j), 2), 8};
  };
  FusedModel small = mlp(4), big = mlp(32);
  BenchReport report = bench_inference(small, big, {8});
  EXPECT_EQ(report.size_ratio, static_cast<double>(param_count(big.net, true)) /
                                   static_cast<double>(param_count(small.net, true)));
  EXPECT_THROW(bench_inference(small, big, {}), ArgumentError);

  nlohmann::json j;
  j["input"] = {9};
  j["layers"] = {nlohmann::json{{"type", "linear"}, {"out", 4}}};
  FusedModel other{build_network(arch_from_json(j), 3), 8};
  EXPECT_THROW(bench_inference(small, other, {8}), DimensionError);
}

}  // namespace
}  // namespace slimnet
