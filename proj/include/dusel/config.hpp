#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dusel/errors.hpp"
#include "dusel/generators.hpp"
#include "dusel/joint.hpp"
#include "dusel/proxy.hpp"
#include "dusel/rng.hpp"
#include "dusel/select.hpp"

namespace dusel {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Experiment configuration. Defaults follow the reference hyperparameters:
// N=5000 utility records with a 4:1 split, pool size 300, k=5, epsilon=1e-3,
// DeepSets 256-wide with Adam lr 1e-5 batch 32, DA Adam lr 1e-4 batch 128,
// utility back-propagation into the extractor at lr 1e-6.

struct DataSection {
  std::string generator = "two_moons_rotate";  // or gauss_mix_shift | label_mismatch | idx
  MoonsParams moons;
  GaussMixParams gaussmix;
  LabelMismatchParams label_mismatch;
  // idx ingestion paths (generator == "idx")
  std::string source_images, source_labels;
  std::string target_images, target_labels;
  std::string test_images, test_labels;

  double corrupt_fraction = 0.0;
  double corrupt_sigma = 1.0;
  bool corrupt_source_pool = true;  // corrupt the utility pool with the same process
  bool corrupt_target_pool = true;

  int utility_pool_size = 300;  // |L^I| drawn from the source
  int utility_val_size = 0;     // 0 = all remaining source rows
};

struct UsampleSection {
  int n = 5000;
  int size_min = 20;
  int size_max = 0;  // 0 = pool size
  std::string proxy = "logistic";
  int proxy_epochs = 200;
  double proxy_lr = 0.1;
};

struct TrainSection {
  int k = 5;
  int epochs = 30;
  int deepsets_inner_epochs = 20;
  double gf_utility_lr = 1e-6;
  double da_lr = 1e-4;
  double lambda = 1.0;
  int da_batch = 128;
  int embed_dim = 64;
  std::vector<int> gf_hidden{128, 128};
  std::vector<int> gy_hidden{64};
  std::vector<int> gd_hidden{64, 64};
  int deepsets_hidden = 256;
  int deepsets_set_dim = 256;
  double deepsets_lr = 1e-5;
  int deepsets_batch = 32;
  bool reset_deepsets_each_epoch = false;
};

struct SelectSection {
  std::vector<std::string> strategies{"d2ulo", "random"};
  std::vector<int> budgets{25, 50, 100};
  double epsilon = 1e-3;
};

struct EvalSection {
  std::vector<std::string> evaluators{"logistic"};  // proxy kinds and/or "finetune"
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int evaluator_epochs = 200;
  int correlation_subsets = 0;  // 0 disables the estimated-vs-true diagnostic
  int correlation_sample = 300;
  int finetune_epochs = 20;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out = "run";
  DataSection data;
  UsampleSection usample;
  TrainSection train;
  SelectSection select;
  EvalSection eval;
};

// ---------------------------------------------------------------------------
// JSON (de)serialization — a single human-readable key-value tree
// ---------------------------------------------------------------------------

namespace config_detail {

template <typename T>
void opt(const nlohmann::json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace config_detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json data{{"generator", c.data.generator},
                      {"corrupt_fraction", c.data.corrupt_fraction},
                      {"corrupt_sigma", c.data.corrupt_sigma},
                      {"corrupt_source_pool", c.data.corrupt_source_pool},
                      {"corrupt_target_pool", c.data.corrupt_target_pool},
                      {"utility_pool_size", c.data.utility_pool_size},
                      {"utility_val_size", c.data.utility_val_size}};
  if (c.data.generator == "two_moons_rotate") {
    data["theta"] = c.data.moons.theta;
    data["noise_sigma"] = c.data.moons.noise_sigma;
    data["n_source"] = c.data.moons.n_source;
    data["n_pool"] = c.data.moons.n_pool;
    data["n_test"] = c.data.moons.n_test;
  } else if (c.data.generator == "gauss_mix_shift") {
    data["k"] = c.data.gaussmix.k;
    data["per_class_source"] = c.data.gaussmix.per_class_source;
    data["per_class_pool"] = c.data.gaussmix.per_class_pool;
    data["per_class_test"] = c.data.gaussmix.per_class_test;
    data["dim"] = c.data.gaussmix.dim;
    data["radius"] = c.data.gaussmix.radius;
    data["sigma"] = c.data.gaussmix.sigma;
    data["shift_angle"] = c.data.gaussmix.shift_angle;
    data["shift"] = c.data.gaussmix.shift;
  } else if (c.data.generator == "label_mismatch") {
    data["classes_total"] = c.data.label_mismatch.classes_total;
    data["source_classes"] = c.data.label_mismatch.source_classes;
    data["per_class_source"] = c.data.label_mismatch.per_class_source;
    data["per_class_pool"] = c.data.label_mismatch.per_class_pool;
    data["per_class_pool_counts"] = c.data.label_mismatch.per_class_pool_counts;
    data["per_class_test"] = c.data.label_mismatch.per_class_test;
    data["dim"] = c.data.label_mismatch.dim;
    data["radius"] = c.data.label_mismatch.radius;
    data["sigma"] = c.data.label_mismatch.sigma;
  } else if (c.data.generator == "idx") {
    data["source_images"] = c.data.source_images;
    data["source_labels"] = c.data.source_labels;
    data["target_images"] = c.data.target_images;
    data["target_labels"] = c.data.target_labels;
    data["test_images"] = c.data.test_images;
    data["test_labels"] = c.data.test_labels;
  }

  return nlohmann::json{
      {"seed", c.seed},
      {"workers", c.workers},
      {"out", c.out},
      {"data", data},
      {"usample",
       {{"n", c.usample.n},
        {"size_min", c.usample.size_min},
        {"size_max", c.usample.size_max},
        {"proxy", c.usample.proxy},
        {"proxy_epochs", c.usample.proxy_epochs},
        {"proxy_lr", c.usample.proxy_lr}}},
      {"train",
       {{"k", c.train.k},
        {"epochs", c.train.epochs},
        {"deepsets_inner_epochs", c.train.deepsets_inner_epochs},
        {"gf_utility_lr", c.train.gf_utility_lr},
        {"da_lr", c.train.da_lr},
        {"lambda", c.train.lambda},
        {"da_batch", c.train.da_batch},
        {"embed_dim", c.train.embed_dim},
        {"gf_hidden", c.train.gf_hidden},
        {"gy_hidden", c.train.gy_hidden},
        {"gd_hidden", c.train.gd_hidden},
        {"deepsets_hidden", c.train.deepsets_hidden},
        {"deepsets_set_dim", c.train.deepsets_set_dim},
        {"deepsets_lr", c.train.deepsets_lr},
        {"deepsets_batch", c.train.deepsets_batch},
        {"reset_deepsets_each_epoch", c.train.reset_deepsets_each_epoch}}},
      {"select",
       {{"strategies", c.select.strategies},
        {"budgets", c.select.budgets},
        {"epsilon", c.select.epsilon}}},
      {"eval",
       {{"evaluators", c.eval.evaluators},
        {"seeds", c.eval.seeds},
        {"evaluator_epochs", c.eval.evaluator_epochs},
        {"correlation_subsets", c.eval.correlation_subsets},
        {"correlation_sample", c.eval.correlation_sample},
        {"finetune_epochs", c.eval.finetune_epochs}}}};
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using config_detail::opt;
  ExperimentConfig c;
  opt(j, "seed", c.seed);
  opt(j, "workers", c.workers);
  opt(j, "out", c.out);

  if (j.contains("data")) {
    const auto& d = j.at("data");
    opt(d, "generator", c.data.generator);
    opt(d, "corrupt_fraction", c.data.corrupt_fraction);
    opt(d, "corrupt_sigma", c.data.corrupt_sigma);
    opt(d, "corrupt_source_pool", c.data.corrupt_source_pool);
    opt(d, "corrupt_target_pool", c.data.corrupt_target_pool);
    opt(d, "utility_pool_size", c.data.utility_pool_size);
    opt(d, "utility_val_size", c.data.utility_val_size);
    opt(d, "theta", c.data.moons.theta);
    opt(d, "noise_sigma", c.data.moons.noise_sigma);
    opt(d, "n_source", c.data.moons.n_source);
    opt(d, "n_pool", c.data.moons.n_pool);
    opt(d, "n_test", c.data.moons.n_test);
    opt(d, "k", c.data.gaussmix.k);
    opt(d, "per_class_source", c.data.gaussmix.per_class_source);
    opt(d, "per_class_pool", c.data.gaussmix.per_class_pool);
    opt(d, "per_class_test", c.data.gaussmix.per_class_test);
    opt(d, "dim", c.data.gaussmix.dim);
    opt(d, "radius", c.data.gaussmix.radius);
    opt(d, "sigma", c.data.gaussmix.sigma);
    opt(d, "shift_angle", c.data.gaussmix.shift_angle);
    opt(d, "shift", c.data.gaussmix.shift);
    opt(d, "classes_total", c.data.label_mismatch.classes_total);
    opt(d, "source_classes", c.data.label_mismatch.source_classes);
    opt(d, "per_class_pool_counts", c.data.label_mismatch.per_class_pool_counts);
    if (c.data.generator == "label_mismatch") {
      opt(d, "per_class_source", c.data.label_mismatch.per_class_source);
      opt(d, "per_class_pool", c.data.label_mismatch.per_class_pool);
      opt(d, "per_class_test", c.data.label_mismatch.per_class_test);
      opt(d, "dim", c.data.label_mismatch.dim);
      opt(d, "radius", c.data.label_mismatch.radius);
      opt(d, "sigma", c.data.label_mismatch.sigma);
    }
    opt(d, "source_images", c.data.source_images);
    opt(d, "source_labels", c.data.source_labels);
    opt(d, "target_images", c.data.target_images);
    opt(d, "target_labels", c.data.target_labels);
    opt(d, "test_images", c.data.test_images);
    opt(d, "test_labels", c.data.test_labels);
  }
  if (j.contains("usample")) {
    const auto& u = j.at("usample");
    opt(u, "n", c.usample.n);
    opt(u, "size_min", c.usample.size_min);
    opt(u, "size_max", c.usample.size_max);
    opt(u, "proxy", c.usample.proxy);
    opt(u, "proxy_epochs", c.usample.proxy_epochs);
    opt(u, "proxy_lr", c.usample.proxy_lr);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    opt(t, "k", c.train.k);
    opt(t, "epochs", c.train.epochs);
    opt(t, "deepsets_inner_epochs", c.train.deepsets_inner_epochs);
    opt(t, "gf_utility_lr", c.train.gf_utility_lr);
    opt(t, "da_lr", c.train.da_lr);
    opt(t, "lambda", c.train.lambda);
    opt(t, "da_batch", c.train.da_batch);
    opt(t, "embed_dim", c.train.embed_dim);
    opt(t, "gf_hidden", c.train.gf_hidden);
    opt(t, "gy_hidden", c.train.gy_hidden);
    opt(t, "gd_hidden", c.train.gd_hidden);
    opt(t, "deepsets_hidden", c.train.deepsets_hidden);
    opt(t, "deepsets_set_dim", c.train.deepsets_set_dim);
    opt(t, "deepsets_lr", c.train.deepsets_lr);
    opt(t, "deepsets_batch", c.train.deepsets_batch);
    opt(t, "reset_deepsets_each_epoch", c.train.reset_deepsets_each_epoch);
  }
  if (j.contains("select")) {
    const auto& s = j.at("select");
    opt(s, "strategies", c.select.strategies);
    opt(s, "budgets", c.select.budgets);
    opt(s, "epsilon", c.select.epsilon);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    opt(e, "evaluators", c.eval.evaluators);
    opt(e, "seeds", c.eval.seeds);
    opt(e, "evaluator_epochs", c.eval.evaluator_epochs);
    opt(e, "correlation_subsets", c.eval.correlation_subsets);
    opt(e, "correlation_sample", c.eval.correlation_sample);
    opt(e, "finetune_epochs", c.eval.finetune_epochs);
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// Stable content hash of the canonical config dump (the `out` path does not
// participate: moving a run directory must not invalidate its artifacts).
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("out");
  j.erase("workers");
  std::string dump = j.dump();
  return fnv1a64(dump.data(), dump.size());
}

// Cross-field validation; runs before any compute.
inline void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };

  if (c.workers < 1) fail("workers must be >= 1");
  if (c.data.generator != "two_moons_rotate" && c.data.generator != "gauss_mix_shift" &&
      c.data.generator != "label_mismatch" && c.data.generator != "idx")
    fail("unknown generator '" + c.data.generator + "'");
  if (c.data.corrupt_fraction < 0.0 || c.data.corrupt_fraction > 1.0)
    fail("corrupt_fraction must be in [0, 1]");
  if (c.data.corrupt_sigma <= 0.0) fail("corrupt_sigma must be > 0");

  int pool_n = 0, source_n = 0;
  if (c.data.generator == "two_moons_rotate") {
    pool_n = c.data.moons.n_pool;
    source_n = c.data.moons.n_source;
  } else if (c.data.generator == "gauss_mix_shift") {
    pool_n = c.data.gaussmix.k * c.data.gaussmix.per_class_pool;
    source_n = c.data.gaussmix.k * c.data.gaussmix.per_class_source;
  } else if (c.data.generator == "label_mismatch") {
    const auto& lm = c.data.label_mismatch;
    int tc = lm.classes_total - lm.source_classes;
    if (!lm.per_class_pool_counts.empty()) {
      for (int v : lm.per_class_pool_counts) pool_n += v;
    } else {
      pool_n = tc * lm.per_class_pool;
    }
    source_n = lm.source_classes * lm.per_class_source;
  } else {
    pool_n = -1;  // idx sizes are known only at load time
    source_n = -1;
  }

  if (source_n > 0 && c.data.utility_pool_size + std::max(c.data.utility_val_size, 1) > source_n)
    fail("utility_pool_size + utility_val_size exceeds the source size");
  if (c.data.utility_pool_size < 2) fail("utility_pool_size must be >= 2");

  if (c.usample.n < 1) fail("usample.n must be >= 1");
  if (c.usample.size_min < 1) fail("usample.size_min must be >= 1");
  if (c.usample.size_max != 0 && c.usample.size_max < c.usample.size_min)
    fail("usample.size_max must be 0 or >= size_min");
  if (c.usample.size_max == 0 && c.usample.size_min > c.data.utility_pool_size)
    fail("usample.size_min exceeds the utility pool size");
  proxy_from_name(c.usample.proxy);  // throws on a bad name

  if (c.train.k < 1) fail("train.k must be >= 1");
  if (c.train.epochs < 0) fail("train.epochs must be >= 0");
  if (c.train.gf_utility_lr <= 0 || c.train.da_lr <= 0 || c.train.deepsets_lr <= 0)
    fail("learning rates must be > 0");
  if (c.train.lambda < 0) fail("train.lambda must be >= 0");

  if (c.select.strategies.empty()) fail("select.strategies is empty");
  for (const auto& s : c.select.strategies) strategy_from_name(s);
  if (c.select.budgets.empty()) fail("select.budgets is empty");
  for (int b : c.select.budgets) {
    if (b < 1) fail("budgets must be >= 1");
    if (pool_n > 0 && b > pool_n)
      fail("budget " + std::to_string(b) + " exceeds the target pool size " +
           std::to_string(pool_n));
  }
  if (!(c.select.epsilon > 0.0 && c.select.epsilon < 1.0)) fail("epsilon must be in (0, 1)");

  if (c.eval.evaluators.empty()) fail("eval.evaluators is empty");
  for (const auto& e : c.eval.evaluators)
    if (e != "finetune") proxy_from_name(e);
  if (c.eval.seeds.empty()) fail("eval.seeds is empty");
  if (c.eval.correlation_subsets < 0) fail("correlation_subsets must be >= 0");
}

}  // namespace dusel
