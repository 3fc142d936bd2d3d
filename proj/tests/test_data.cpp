#include "slimnet/data.hpp"

#include <gtest/gtest.h>

#include <array>
#include <set>

#include "slimnet/objective.hpp"
#include "slimnet/optim.hpp"
#include "test_support.hpp"

namespace slimnet {
namespace {

constexpr std::array<double, 3> kAllTrain{1.0, 0.0, 0.0};

TEST(ParseCsv, ToyFileWithHeader) {
  Dataset ds = parse_csv("a,b,label\n1,2,5\n3,4,7\n0,1,5\n", "label");
  EXPECT_EQ(ds.features, Tensor::matrix(3, 2, {1, 2, 3, 4, 0, 1}));
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(ds.label_values, (std::vector<double>{5, 7}));
  EXPECT_EQ(ds.class_count, 2u);
  EXPECT_EQ(ds.sample_count(), 3u);
  EXPECT_EQ(ds.feature_count(), 2u);
}

TEST(ParseCsv, HeaderlessFileWithColumnIndex) {
  Dataset ds = parse_csv("1,2,9\n3,4,8\n", "2");
  EXPECT_EQ(ds.features, Tensor::matrix(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(ds.labels, (std::vector<int>{1, 0}));  // 8 -> 0, 9 -> 1
}

TEST(ParseCsv, LabelColumnInTheMiddle) {
  Dataset ds = parse_csv("x,cls,y\n1,3,2\n4,1,5\n", "cls");
  EXPECT_EQ(ds.features, Tensor::matrix(2, 2, {1, 2, 4, 5}));
  EXPECT_EQ(ds.labels, (std::vector<int>{1, 0}));
}

TEST(ParseCsv, ManyClassesRemapDense) {
  std::string text = "v,label\n";
  for (int i = 0; i < 14; ++i) {
    text += std::to_string(i) + "," + std::to_string(100 - 10 * (i % 7)) + "\n";
  }
  Dataset ds = parse_csv(text, "label");
  EXPECT_EQ(ds.class_count, 7u);
  for (int label : ds.labels) {
    EXPECT_GE(label, 0);
    EXPECT_LT(label, 7);
  }
  EXPECT_TRUE(std::is_sorted(ds.label_values.begin(), ds.label_values.end()));
}

TEST(ParseCsv, AlternateDelimiterAndWhitespace) {
  Dataset ds = parse_csv("a;label\n 1 ;2\n3; 4 \n", "label", ';');
  EXPECT_EQ(ds.features, Tensor::matrix(2, 1, {1, 3}));
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 1}));
}

TEST(ParseCsv, WideTabularShape) {
  std::string text;
  for (std::size_t j = 0; j < 54; ++j) text += "c" + std::to_string(j) + ",";
  text += "cover\n";
  SeededRng rng(300);
  for (int r = 0; r < 10; ++r) {
    for (std::size_t j = 0; j < 54; ++j) text += std::to_string(rng.next_below(100)) + ",";
    text += std::to_string(1 + rng.next_below(7)) + "\n";
  }
  Dataset ds = parse_csv(text, "cover");
  EXPECT_EQ(ds.features.shape(), (std::vector<std::size_t>{10, 54}));
}

TEST(ParseCsv, ErrorsNameTheLine) {
  try {
    parse_csv("a,label\n1,2\n3\n", "label");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    parse_csv("a,label\n1,2\nx,3\n", "label");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("'x'"), std::string::npos);
  }
  EXPECT_THROW(parse_csv("a,label\n1,2\n", "nope"), SchemaError);
  EXPECT_THROW(parse_csv("1,2\n3,4\n", "9"), SchemaError);
  EXPECT_THROW(parse_csv("justone\n1\n2\n", "justone"), SchemaError);
  EXPECT_THROW(parse_csv("", "label"), ParseError);
}

TEST(ParseCsv, RoundTripsThroughWriter) {
  SyntheticSpec spec;
  spec.samples = 20;
  spec.features = 5;
  spec.informative = 2;
  spec.classes = 3;
  spec.seed = 11;
  Dataset ds = gen_synthetic(spec);
  Dataset back = parse_csv(to_csv(ds), "label");
  EXPECT_EQ(back.labels, ds.labels);
  ASSERT_EQ(back.features.shape(), ds.features.shape());
  for (std::size_t i = 0; i < ds.features.size(); ++i) {
    EXPECT_EQ(back.features[i], ds.features[i]);
  }
}

TEST(SplitStandardize, AssignsByFractionsDisjointExhaustive) {
  SyntheticSpec spec;
  spec.samples = 203;
  spec.features = 4;
  spec.informative = 2;
  spec.seed = 12;
  Dataset ds = split_standardize(gen_synthetic(spec), {0.7, 0.15, 0.15}, 99);

  const auto train = split_indices(ds, Split::Train);
  const auto val = split_indices(ds, Split::Val);
  const auto test = split_indices(ds, Split::Test);
  EXPECT_EQ(train.size() + val.size() + test.size(), 203u);
  EXPECT_NEAR(static_cast<double>(train.size()), 0.7 * 203, 1.0);
  EXPECT_NEAR(static_cast<double>(val.size()), 0.15 * 203, 1.0);

  std::set<std::size_t> seen;
  for (const auto* rows : {&train, &val, &test}) {
    for (std::size_t r : *rows) EXPECT_TRUE(seen.insert(r).second) << "row in two splits";
  }
  EXPECT_EQ(seen.size(), 203u);

  Dataset again = split_standardize(gen_synthetic(spec), {0.7, 0.15, 0.15}, 99);
  EXPECT_TRUE(ds.assignment == again.assignment);
  Dataset other = split_standardize(gen_synthetic(spec), {0.7, 0.15, 0.15}, 100);
  EXPECT_FALSE(ds.assignment == other.assignment);
}

TEST(SplitStandardize, TrainSplitIsZScoredOthersUseTrainParams) {
  SyntheticSpec spec;
  spec.samples = 400;
  spec.features = 3;
  spec.informative = 3;
  spec.seed = 13;
  Dataset raw = gen_synthetic(spec);
  // Shift a column so the fitted mean is clearly nonzero.
  for (std::size_t r = 0; r < raw.sample_count(); ++r) raw.features[r * 3 + 1] += 5.0;
  Dataset ds = split_standardize(raw, {0.5, 0.25, 0.25}, 7);

  const auto train = split_indices(ds, Split::Train);
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0.0, var = 0.0;
    for (std::size_t r : train) mean += ds.features[r * 3 + j];
    mean /= static_cast<double>(train.size());
    for (std::size_t r : train) {
      const double d = ds.features[r * 3 + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(train.size());
    EXPECT_NEAR(mean, 0.0, 1e-9) << "feature " << j;
    EXPECT_NEAR(var, 1.0, 1e-9) << "feature " << j;
  }
  EXPECT_NEAR(ds.standardize_params.mean[1], 5.0, 0.2);

  // Non-train rows were transformed with the train parameters.
  const auto test = split_indices(ds, Split::Test);
  for (std::size_t r : test) {
    for (std::size_t j = 0; j < 3; ++j) {
      const double expected = (raw.features[r * 3 + j] - ds.standardize_params.mean[j]) /
                              ds.standardize_params.stddev[j];
      ASSERT_EQ(ds.features[r * 3 + j], expected);
    }
  }
}

TEST(SplitStandardize, InvertibleWithinTolerance) {
  SyntheticSpec spec;
  spec.samples = 60;
  spec.features = 5;
  spec.informative = 2;
  spec.seed = 14;
  Dataset raw = gen_synthetic(spec);
  Dataset ds = split_standardize(raw, {0.8, 0.1, 0.1}, 3);
  Tensor restored = unstandardize_features(ds.features, ds.standardize_params);
  for (std::size_t i = 0; i < restored.size(); ++i) {
    EXPECT_NEAR(restored[i], raw.features[i], 1e-12);
  }
}

TEST(SplitStandardize, ConstantFeaturePassesThrough) {
  Dataset ds;
  ds.features = Tensor::matrix(4, 2, {7, 1, 7, 2, 7, 3, 7, 4});
  ds.labels = {0, 1, 0, 1};
  ds.class_count = 2;
  ds.assignment.assign(4, Split::Train);
  Dataset out = split_standardize(ds, kAllTrain, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(out.features[r * 2 + 0], 0.0);  // (7-7)/1
    EXPECT_TRUE(std::isfinite(out.features[r * 2 + 1]));
  }
}

TEST(SplitStandardize, BadFractionsRejected) {
  SyntheticSpec spec;
  spec.samples = 10;
  spec.features = 3;
  spec.informative = 1;
  Dataset ds = gen_synthetic(spec);
  EXPECT_THROW(split_standardize(ds, {0.5, 0.2, 0.2}, 1), ArgumentError);
  EXPECT_THROW(split_standardize(ds, {1.2, -0.1, -0.1}, 1), ArgumentError);
  Dataset all = split_standardize(ds, kAllTrain, 1);
  EXPECT_EQ(split_indices(all, Split::Train).size(), 10u);
}

TEST(GenSynthetic, DeterministicAndValidated) {
  SyntheticSpec spec;
  spec.samples = 50;
  spec.features = 8;
  spec.informative = 3;
  spec.classes = 4;
  spec.noise = 0.1;
  spec.seed = 21;
  Dataset a = gen_synthetic(spec);
  Dataset b = gen_synthetic(spec);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.class_count, 4u);

  SyntheticSpec bad = spec;
  bad.informative = 9;
  EXPECT_THROW(gen_synthetic(bad), ArgumentError);
  bad = spec;
  bad.classes = 1;
  EXPECT_THROW(gen_synthetic(bad), ArgumentError);
  bad = spec;
  bad.noise = 1.0;
  EXPECT_THROW(gen_synthetic(bad), ArgumentError);
}

TEST(GenSynthetic, NoiselessLabelsAreLinearlyRealizable) {
  SyntheticSpec spec;
  spec.samples = 300;
  spec.features = 6;
  spec.informative = 6;
  spec.classes = 3;
  spec.noise = 0.0;
  spec.seed = 22;
  Tensor map;
  Dataset ds = gen_synthetic(spec, &map);

  Network linear({6}, {LinearLayer(map, Tensor({3}))});
  Batch all = make_batch(ds, split_indices(ds, Split::Train));
  EXPECT_EQ(accuracy(infer(linear, all.features), all.labels), 1.0);
}

TEST(GenSynthetic, LabelsDependOnlyOnInformativeColumns) {
  SyntheticSpec spec;
  spec.samples = 200;
  spec.features = 10;
  spec.informative = 3;
  spec.classes = 3;
  spec.seed = 23;
  Tensor map;
  Dataset ds = gen_synthetic(spec, &map);
  for (std::size_t r = 0; r < ds.sample_count(); ++r) {
    std::size_t best = 0;
    double best_score = -1e300;
    for (std::size_t c = 0; c < 3; ++c) {
      double score = 0.0;
      for (std::size_t j = 0; j < 3; ++j) score += map.at({c, j}) * ds.features[r * 10 + j];
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    ASSERT_EQ(ds.labels[r], static_cast<int>(best)) << "row " << r;
  }
}

TEST(MakeBatch, GathersRowsAndLabels) {
  Dataset ds;
  ds.features = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  ds.labels = {0, 1, 2};
  ds.class_count = 3;
  ds.assignment.assign(3, Split::Train);
  Batch batch = make_batch(ds, {2, 0});
  EXPECT_EQ(batch.features, Tensor::matrix(2, 2, {5, 6, 1, 2}));
  EXPECT_EQ(batch.labels, (std::vector<int>{2, 0}));
  EXPECT_THROW(make_batch(ds, {}), ArgumentError);
  EXPECT_THROW(make_batch(ds, {5}), ArgumentError);
}

// A linear classifier trained on the informative columns alone should match
// one trained on all columns: the extra columns carry no signal.
TEST(GenSynthetic, InformativeColumnsCarryAllTheSignal) {
  SyntheticSpec spec;
  spec.samples = 2000;
  spec.features = 16;
  spec.informative = 3;
  spec.classes = 3;
  spec.noise = 0.05;
  spec.seed = 24;
  Dataset ds = split_standardize(gen_synthetic(spec), {0.7, 0.15, 0.15}, 5);

  auto select_columns = [](const Tensor& x, std::size_t keep) {
    const std::size_t n = x.extent(0), d = x.extent(1);
    Tensor out({n, keep});
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < keep; ++j) out[r * keep + j] = x[r * d + j];
    }
    return out;
  };

  auto fit_linear = [&](std::size_t d_in, bool informative_only) {
    SeededRng rng(2500 + d_in);
    Network net({d_in}, {LinearLayer::random(3, d_in, rng)});
    AdamState adam(net, AdamConfig{1e-2});
    const auto train_rows = split_indices(ds, Split::Train);
    for (int epoch = 0; epoch < 40; ++epoch) {
      for (std::size_t start = 0; start < train_rows.size(); start += 64) {
        std::vector<std::size_t> rows(
            train_rows.begin() + static_cast<std::ptrdiff_t>(start),
            train_rows.begin() +
                static_cast<std::ptrdiff_t>(std::min(start + 64, train_rows.size())));
        Batch batch = make_batch(ds, rows);
        Tensor x = informative_only ? select_columns(batch.features, d_in) : batch.features;
        auto res = forward(net, x, Mode::Train);
        CrossEntropyResult ce = cross_entropy(res.output, batch.labels);
        Gradients grads = backward(net, res.tape, ce.grad);
        adam.step(net, grads);
      }
    }
    Batch test = make_batch(ds, split_indices(ds, Split::Test));
    Tensor x = informative_only ? select_columns(test.features, d_in) : test.features;
    return accuracy(infer(net, x), test.labels);
  };

  const double acc_informative = fit_linear(3, true);
  const double acc_all = fit_linear(16, false);
  EXPECT_GT(acc_informative, 0.75);
  EXPECT_GE(acc_informative, acc_all - 0.01);
}

}  // namespace
}  // namespace slimnet
