// Command-line front end: synthetic data generation, training with channel
// removal, random hyperparameter search, checkpoint fusion, inference
// benchmarking, and the numerical proposition suite.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slimnet/arch.hpp"
#include "slimnet/data.hpp"
#include "slimnet/errors.hpp"
#include "slimnet/fuse.hpp"
#include "slimnet/gc.hpp"
#include "slimnet/io.hpp"
#include "slimnet/proplab.hpp"
#include "slimnet/trainer.hpp"

namespace {

const char* category_name(slimnet::ErrorCategory c) {
  using slimnet::ErrorCategory;
  switch (c) {
    case ErrorCategory::Argument: return "argument";
    case ErrorCategory::Dimension: return "dimension";
    case ErrorCategory::State: return "state";
    case ErrorCategory::Parse: return "parse";
    case ErrorCategory::Schema: return "schema";
    case ErrorCategory::Config: return "config";
    case ErrorCategory::Format: return "format";
    case ErrorCategory::Corruption: return "corruption";
    case ErrorCategory::Io: return "io";
    case ErrorCategory::Convergence: return "convergence";
    case ErrorCategory::Verification: return "verification";
  }
  return "error";
}

int exit_code(slimnet::ErrorCategory c) {
  using slimnet::ErrorCategory;
  switch (c) {
    case ErrorCategory::Argument:
    case ErrorCategory::Dimension:
    case ErrorCategory::State:
    case ErrorCategory::Schema:
    case ErrorCategory::Config:
      return 2;
    case ErrorCategory::Parse:
      return 3;
    case ErrorCategory::Format:
    case ErrorCategory::Corruption:
    case ErrorCategory::Io:
      return 4;
    case ErrorCategory::Verification:
      return 5;
    case ErrorCategory::Convergence:
      return 6;
  }
  return 1;
}

nlohmann::json parse_json_file(const std::string& path) {
  const std::string text = slimnet::detail::read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw slimnet::ParseError(1, std::string("invalid JSON in ") + path + ": " + e.what());
  }
}

slimnet::SyntheticSpec spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw slimnet::SchemaError("data spec must be a JSON object");
  slimnet::SyntheticSpec spec;
  for (const auto& [key, value] : j.items()) {
    const bool size_like =
        key == "samples" || key == "features" || key == "informative" || key == "classes";
    if (size_like) {
      if (!value.is_number_integer() || value.get<std::int64_t>() <= 0) {
        throw slimnet::SchemaError("'" + key + "' must be a positive integer");
      }
      const auto v = value.get<std::uint64_t>();
      if (key == "samples") spec.samples = v;
      else if (key == "features") spec.features = v;
      else if (key == "informative") spec.informative = v;
      else spec.classes = v;
    } else if (key == "noise") {
      if (!value.is_number()) throw slimnet::SchemaError("'noise' must be a number");
      spec.noise = value.get<double>();
    } else if (key == "seed") {
      if (!value.is_number_integer() || value.get<std::int64_t>() < 0) {
        throw slimnet::SchemaError("'seed' must be a nonnegative integer");
      }
      spec.seed = value.get<std::uint64_t>();
    } else {
      throw slimnet::SchemaError("unknown data spec key '" + key + "'");
    }
  }
  return spec;
}

std::string joined_path(const std::string& dir, const char* name) {
  return (std::filesystem::path(dir) / name).string();
}

// Options shared by train and search.
struct FitOptions {
  std::string data_path;
  std::string arch_path;
  std::string label_column = "label";
  std::vector<double> split{0.7, 0.15, 0.15};
  double p = 1.0;
  double switch_momentum = 0.9;
  double switch_threshold = 0.5;
  std::uint64_t seed = 0;
  std::size_t epochs = 200;
  std::size_t window = 3;
  std::string out_dir = ".";
};

void add_fit_options(CLI::App& cmd, FitOptions& opt) {
  cmd.add_option("--data", opt.data_path, "training CSV")->required();
  cmd.add_option("--arch", opt.arch_path, "architecture JSON")->required();
  cmd.add_option("--label", opt.label_column, "label column name or index");
  cmd.add_option("--split", opt.split, "train/val/test fractions")->expected(3);
  cmd.add_option("--p", opt.p, "weight-norm exponent (1 or 2)");
  cmd.add_option("--switch-momentum", opt.switch_momentum, "sign-statistics EMA momentum");
  cmd.add_option("--switch-threshold", opt.switch_threshold,
                 "sign-variance removal threshold (inf disables removal)");
  cmd.add_option("--seed", opt.seed, "RNG seed");
  cmd.add_option("--epochs", opt.epochs, "epoch cap");
  cmd.add_option("--window", opt.window, "epochs of stable sizes that count as converged");
  cmd.add_option("--out", opt.out_dir, "output directory");
}

slimnet::Dataset load_split_dataset(const FitOptions& opt) {
  slimnet::Dataset ds = slimnet::load_csv(opt.data_path, opt.label_column);
  return slimnet::split_standardize(std::move(ds), {opt.split[0], opt.split[1], opt.split[2]},
                                    opt.seed);
}

slimnet::TrainConfig base_config(const FitOptions& opt) {
  slimnet::TrainConfig cfg;
  cfg.penalty.p = opt.p;
  cfg.screener.momentum = opt.switch_momentum;
  cfg.screener.threshold = opt.switch_threshold;
  cfg.seed = opt.seed;
  cfg.max_epochs = opt.epochs;
  cfg.size_window = opt.window;
  return cfg;
}

int run_gen_data(const std::string& spec_path, const std::string& out_path,
                 const std::uint64_t* seed_override) {
  slimnet::SyntheticSpec spec = spec_from_json(parse_json_file(spec_path));
  if (seed_override) spec.seed = *seed_override;
  const slimnet::Dataset ds = slimnet::gen_synthetic(spec);
  slimnet::detail::write_file(out_path, slimnet::to_csv(ds));
  std::cout << "wrote " << ds.sample_count() << " samples x " << ds.feature_count()
            << " features (" << ds.class_count << " classes) to " << out_path << "\n";
  return 0;
}

int run_train(const FitOptions& opt, double lambda, double lambda2, double lr,
              std::size_t batch) {
  slimnet::TrainConfig cfg = base_config(opt);
  cfg.arch = slimnet::parse_arch(slimnet::detail::read_file(opt.arch_path));
  cfg.penalty.lambda = lambda;
  cfg.penalty.lambda2 = lambda2;
  cfg.adam.lr = lr;
  cfg.batch = batch;

  const slimnet::Dataset ds = load_split_dataset(opt);
  const slimnet::TrainResult result = slimnet::train(cfg, ds);

  std::filesystem::create_directories(opt.out_dir);
  slimnet::save_checkpoint(result.checkpoint, joined_path(opt.out_dir, "checkpoint.smlc"));
  slimnet::detail::write_file(joined_path(opt.out_dir, "sizes.csv"),
                              slimnet::to_csv(result.sizes));

  slimnet::TrialRecord rec;
  rec.lr = lr;
  rec.lambda = lambda;
  rec.lambda2 = lambda2;
  rec.p = opt.p;
  rec.batch = batch;
  rec.seed = opt.seed;
  rec.val_accuracy = result.val_accuracy;
  rec.test_accuracy = result.test_accuracy;
  rec.param_count = slimnet::param_count(result.checkpoint, false);
  slimnet::SizeHistory selected;
  slimnet::record_sizes(selected, result.checkpoint, result.selected_epoch);
  rec.layer_sizes = selected.rows.front().layer_sizes;
  rec.wall_seconds = result.wall_seconds;
  rec.latency_seconds = std::numeric_limits<double>::quiet_NaN();
  rec.size_converged = result.size_converged;
  slimnet::detail::write_file(joined_path(opt.out_dir, "trial.json"),
                              slimnet::trial_to_json(rec).dump(2) + "\n");

  bool fused = false;
  try {
    slimnet::save_fused(slimnet::fuse_network(result.checkpoint),
                        joined_path(opt.out_dir, "model.smlf"));
    fused = true;
  } catch (const slimnet::Error& e) {
    std::cerr << "note: fused model skipped (" << e.what() << ")\n";
  }

  std::cout << "selected epoch " << result.selected_epoch
            << (result.size_converged ? " (size converged)" : " (fallback: sizes never settled)")
            << "\nvalidation accuracy " << result.val_accuracy << "\ntest accuracy "
            << result.test_accuracy << "\nparameters " << rec.param_count
            << " (switches excluded)\nwrote checkpoint.smlc, sizes.csv, trial.json"
            << (fused ? ", model.smlf" : "") << " in " << opt.out_dir << "\n";
  return 0;
}

int run_search(const FitOptions& opt, std::size_t trials) {
  const slimnet::ArchConfig arch =
      slimnet::parse_arch(slimnet::detail::read_file(opt.arch_path));
  const slimnet::Dataset ds = load_split_dataset(opt);

  slimnet::SearchSpace space;
  space.trials = trials;
  space.base_seed = opt.seed;

  std::filesystem::create_directories(opt.out_dir);
  std::ofstream jsonl(joined_path(opt.out_dir, "trials.jsonl"),
                      std::ios::binary | std::ios::trunc);
  if (!jsonl) {
    throw slimnet::IoError("cannot open " + joined_path(opt.out_dir, "trials.jsonl") +
                           " for writing");
  }
  std::size_t failures = 0;
  const auto on_trial = [&](const slimnet::TrialRecord& rec) {
    jsonl << slimnet::trial_to_json(rec).dump() << "\n" << std::flush;
    if (rec.failed) {
      ++failures;
      std::cout << "trial " << rec.index << ": FAILED (" << rec.error << ")\n";
    } else {
      std::cout << "trial " << rec.index << ": " << rec.param_count << " params, test accuracy "
                << rec.test_accuracy << "\n";
    }
  };

  const std::vector<slimnet::TrialRecord> records =
      slimnet::random_search(space, ds, arch, base_config(opt), on_trial);

  const std::vector<slimnet::TrialRecord> frontier = slimnet::pareto_frontier(records);
  slimnet::detail::write_file(joined_path(opt.out_dir, "pareto.csv"),
                              slimnet::pareto_to_csv(frontier));

  std::cout << records.size() << " trials (" << failures << " failed); Pareto frontier:\n";
  for (const slimnet::TrialRecord& rec : frontier) {
    std::cout << "  trial " << rec.index << ": " << rec.param_count << " params, test accuracy "
              << rec.test_accuracy << "\n";
  }
  std::cout << "wrote trials.jsonl, pareto.csv in " << opt.out_dir << "\n";
  return 0;
}

int run_fuse(const std::string& in_path, const std::string& out_path, bool f32) {
  const slimnet::Network net = slimnet::load_checkpoint(in_path);
  slimnet::FusedModel model = slimnet::fuse_network(net);
  model.float_width = f32 ? 4 : 8;
  slimnet::save_fused(model, out_path);
  std::cout << "fused " << net.layer_count() << " layers into " << model.net.layer_count()
            << "; " << slimnet::param_count(model.net, false) << " parameters at width "
            << unsigned(model.float_width) << " -> " << out_path << "\n";
  return 0;
}

int run_bench(const std::string& model_path, const std::string& baseline_path,
              const std::vector<std::size_t>& batches, std::size_t reps,
              const std::string& out_path) {
  const slimnet::FusedModel model = slimnet::load_fused(model_path);
  const slimnet::FusedModel baseline = slimnet::load_fused(baseline_path);
  const slimnet::BenchReport report = slimnet::bench_inference(model, baseline, batches, reps);

  char line[160];
  std::snprintf(line, sizeof line, "model %zu params, baseline %zu params, size ratio %.3gx",
                report.model_params, report.baseline_params, report.size_ratio);
  std::cout << line << "\n";
  for (const slimnet::LatencyMeasurement& m : report.measurements) {
    std::snprintf(line, sizeof line,
                  "batch %zu: model %.3ge-6 s, baseline %.3ge-6 s, speedup %.3gx",
                  m.batch, m.model_seconds * 1e6, m.baseline_seconds * 1e6, m.speedup);
    std::cout << line << "\n";
  }

  if (!out_path.empty()) {
    nlohmann::json j;
    j["model_params"] = report.model_params;
    j["baseline_params"] = report.baseline_params;
    j["size_ratio"] = report.size_ratio;
    j["measurements"] = nlohmann::json::array();
    for (const slimnet::LatencyMeasurement& m : report.measurements) {
      j["measurements"].push_back({{"batch", m.batch},
                                   {"model_seconds", m.model_seconds},
                                   {"baseline_seconds", m.baseline_seconds},
                                   {"speedup", m.speedup}});
    }
    slimnet::detail::write_file(out_path, j.dump(2) + "\n");
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

int run_verify_props(const std::string& which, std::uint64_t seed, int trials) {
  std::vector<slimnet::PropOutcome> outcomes;
  if (which == "all") {
    outcomes = slimnet::run_all_propositions(seed, trials);
  } else {
    outcomes.push_back(slimnet::run_proposition(std::stoi(which), seed, trials));
  }
  bool all_pass = true;
  for (const slimnet::PropOutcome& o : outcomes) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " proposition " << o.prop << ": " << o.name
              << "\n";
    if (!o.pass) {
      for (const std::string& note : o.notes) std::cout << "  " << note << "\n";
    }
    all_pass = all_pass && o.pass;
  }
  if (!all_pass) {
    std::cerr << "error (verification): at least one proposition check failed\n";
    return exit_code(slimnet::ErrorCategory::Verification);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"train oversized networks while shrinking them to size"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic classification CSV");
  std::string spec_path, gen_out;
  std::uint64_t gen_seed = 0;
  gen->add_option("--spec", spec_path, "generator spec JSON")->required();
  gen->add_option("--out", gen_out, "output CSV path")->required();
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "override the spec's seed");

  // train
  auto* train_cmd = app.add_subcommand("train", "train one configuration");
  FitOptions train_opt;
  double lambda = 0.0, lambda2 = 0.0, lr = 1e-3;
  std::size_t batch = 64;
  add_fit_options(*train_cmd, train_opt);
  train_cmd->add_option("--lambda", lambda, "switch L1 strength (0 disables pruning)");
  train_cmd->add_option("--lambda2", lambda2, "weight-norm strength");
  train_cmd->add_option("--lr", lr, "Adam learning rate");
  train_cmd->add_option("--batch", batch, "minibatch size");

  // search
  auto* search_cmd = app.add_subcommand("search", "random hyperparameter search");
  FitOptions search_opt;
  std::size_t trials = 20;
  add_fit_options(*search_cmd, search_opt);
  search_cmd->add_option("--trials", trials, "number of independent trials");

  // fuse
  auto* fuse_cmd = app.add_subcommand("fuse", "fold switches into a dense inference model");
  std::string fuse_in, fuse_out;
  bool f32 = false;
  fuse_cmd->add_option("--in", fuse_in, "checkpoint (.smlc)")->required();
  fuse_cmd->add_option("--out", fuse_out, "fused model (.smlf)")->required();
  fuse_cmd->add_flag("--f32", f32, "store parameters in 32-bit floats");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "compare fused-model inference latency");
  std::string bench_model, bench_baseline, bench_out;
  std::vector<std::size_t> bench_batches{32, 256};
  std::size_t bench_reps = 50;
  bench_cmd->add_option("--model", bench_model, "fused model (.smlf)")->required();
  bench_cmd->add_option("--baseline", bench_baseline, "fused baseline (.smlf)")->required();
  bench_cmd->add_option("--batch", bench_batches, "batch sizes to time (repeatable)");
  bench_cmd->add_option("--reps", bench_reps, "timed repetitions per batch size (min 50)");
  bench_cmd->add_option("--out", bench_out, "optional JSON report path");

  // verify-props
  auto* props_cmd = app.add_subcommand("verify-props", "run the numerical proposition suite");
  std::string prop = "all";
  std::uint64_t props_seed = 0;
  int props_trials = 10;
  props_cmd->add_option("--prop", prop, "which proposition (1|2|3|4|all)")
      ->check(CLI::IsMember({"1", "2", "3", "4", "all"}));
  props_cmd->add_option("--seed", props_seed, "RNG seed for generated instances");
  props_cmd->add_option("--trials", props_trials, "instances for the equivalence check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems share the config exit code
  }

  try {
    if (gen->parsed()) {
      return run_gen_data(spec_path, gen_out, gen_seed_opt->count() ? &gen_seed : nullptr);
    }
    if (train_cmd->parsed()) return run_train(train_opt, lambda, lambda2, lr, batch);
    if (search_cmd->parsed()) return run_search(search_opt, trials);
    if (fuse_cmd->parsed()) return run_fuse(fuse_in, fuse_out, f32);
    if (bench_cmd->parsed()) {
      return run_bench(bench_model, bench_baseline, bench_batches, bench_reps, bench_out);
    }
    if (props_cmd->parsed()) return run_verify_props(prop, props_seed, props_trials);
  } catch (const slimnet::Error& e) {
    std::cerr << "error (" << category_name(e.category()) << "): " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
