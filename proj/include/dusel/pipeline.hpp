#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "dusel/checkpoint.hpp"
#include "dusel/config.hpp"
#include "dusel/eval.hpp"
#include "dusel/idx.hpp"

namespace dusel {

// File-based experiment pipeline. Stages communicate only through artifacts
// on disk, so each one doubles as a standalone CLI subcommand. A stage
// directory carrying a stage.json whose config hash matches is considered
// done and gets skipped when resuming.

namespace fs = std::filesystem;

struct StageStatus {
  std::string name;
  bool ok = false;
  bool skipped = false;
  std::string message;
};

struct PipelineResult {
  std::vector<StageStatus> stages;
  bool ok = true;
};

struct PipelineOptions {
  bool resume = true;
  std::optional<std::string> out_override;
  std::optional<int> workers_override;
};

namespace pipeline_detail {

inline fs::path out_dir(const ExperimentConfig& cfg, const PipelineOptions& opts) {
  fs::path out = opts.out_override ? *opts.out_override : cfg.out;
  if (out.is_relative()) {
    if (const char* root = std::getenv("DUSEL_OUT_ROOT")) out = fs::path(root) / out;
  }
  return out;
}

inline int workers(const ExperimentConfig& cfg, const PipelineOptions& opts) {
  return opts.workers_override ? *opts.workers_override : cfg.workers;
}

inline bool stage_done(const fs::path& dir, std::uint64_t hash) {
  std::ifstream is(dir / "stage.json");
  if (!is) return false;
  try {
    nlohmann::json j;
    is >> j;
    return j.at("config_hash").get<std::uint64_t>() == hash && j.at("ok").get<bool>();
  } catch (...) {
    return false;
  }
}

inline void mark_stage(const fs::path& dir, const std::string& name, std::uint64_t hash,
                       std::uint64_t seed) {
  std::ofstream os(dir / "stage.json");
  os << nlohmann::json{{"stage", name}, {"config_hash", hash}, {"seed", seed}, {"ok", true}}
            .dump(2)
     << "\n";
}

inline DomainPair generate_pair(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  if (d.generator == "two_moons_rotate") return gen_shift(d.moons, cfg.seed);
  if (d.generator == "gauss_mix_shift") return gen_shift(d.gaussmix, cfg.seed);
  if (d.generator == "label_mismatch") return gen_shift(d.label_mismatch, cfg.seed);
  // idx ingestion
  DomainPair pair;
  pair.source = load_idx(d.source_images,
                         d.source_labels.empty() ? std::nullopt
                                                 : std::optional<fs::path>(d.source_labels),
                         "idx-source");
  pair.target_pool = load_idx(d.target_images,
                              d.target_labels.empty()
                                  ? std::nullopt
                                  : std::optional<fs::path>(d.target_labels),
                              "idx-pool");
  if (pair.target_pool.has_labels())
    pair.target_pool = pair.target_pool.with_quarantined_labels();
  pair.target_test = load_idx(d.test_images,
                              d.test_labels.empty() ? std::nullopt
                                                    : std::optional<fs::path>(d.test_labels),
                              "idx-test");
  pair.shift_descriptor = "idx";
  return pair;
}

struct DataArtifacts {
  DomainPair pair;
  Dataset utility_pool;
  Dataset utility_val;
  IndexSet corrupted;  // over the target pool
};

inline DataArtifacts load_data_artifacts(const fs::path& out) {
  DataArtifacts a;
  a.pair.source = load_dataset(out / "data" / "source.dsb");
  a.pair.target_pool = load_dataset(out / "data" / "target_pool.dsb");
  a.pair.target_test = load_dataset(out / "data" / "target_test.dsb");
  a.utility_pool = load_dataset(out / "data" / "utility_pool.dsb");
  a.utility_val = load_dataset(out / "data" / "utility_val.dsb");
  std::ifstream is(out / "data" / "meta.json");
  if (!is) throw std::runtime_error("missing data/meta.json; run the gen-data stage first");
  nlohmann::json j;
  is >> j;
  a.pair.shift_descriptor = j.value("shift_descriptor", "");
  a.corrupted =
      IndexSet(j.at("corrupted").get<std::vector<int>>(), a.pair.target_pool.n());
  return a;
}

struct TrainArtifacts {
  AdaptModel adapt;
  DeepSetsModel deepsets;
};

inline void save_train_artifacts(const TrainArtifacts& t, const fs::path& dir) {
  fs::create_directories(dir);
  save_net(t.adapt.g_f, dir / "gf.ckpt");
  save_net(t.adapt.g_y, dir / "gy.ckpt");
  save_net(t.adapt.g_d, dir / "gd.ckpt");
  save_net(t.deepsets.phi, dir / "ds_phi.ckpt");
  save_net(t.deepsets.rho, dir / "ds_rho.ckpt");
  std::ofstream manifest(dir / "nets.txt");
  manifest << "g_f\n" << net_manifest(t.adapt.g_f) << "\ng_y\n" << net_manifest(t.adapt.g_y)
           << "\ng_d\n" << net_manifest(t.adapt.g_d) << "\nphi\n" << net_manifest(t.deepsets.phi)
           << "\nrho\n" << net_manifest(t.deepsets.rho);
}

inline TrainArtifacts load_train_artifacts(const fs::path& dir, double lambda) {
  if (!fs::exists(dir / "gf.ckpt"))
    throw std::runtime_error("missing checkpoints in " + dir.string() +
                             "; run the train stage first");
  TrainArtifacts t;
  t.adapt.g_f = load_net(dir / "gf.ckpt");
  t.adapt.g_y = load_net(dir / "gy.ckpt");
  t.adapt.g_d = load_net(dir / "gd.ckpt");
  t.adapt.lambda = lambda;
  t.deepsets.phi = load_net(dir / "ds_phi.ckpt");
  t.deepsets.rho = load_net(dir / "ds_rho.ckpt");
  t.deepsets.input_dim = t.deepsets.phi.layers.front().w.rows;
  return t;
}

inline JointConfig joint_config(const ExperimentConfig& cfg) {
  JointConfig jc;
  jc.k = cfg.train.k;
  jc.epochs = cfg.train.epochs;
  jc.deepsets_inner_epochs = cfg.train.deepsets_inner_epochs;
  jc.gf_utility_lr = cfg.train.gf_utility_lr;
  jc.reset_deepsets_each_epoch = cfg.train.reset_deepsets_each_epoch;
  jc.adapt.embed_dim = cfg.train.embed_dim;
  jc.adapt.gf_hidden = cfg.train.gf_hidden;
  jc.adapt.gy_hidden = cfg.train.gy_hidden;
  jc.adapt.gd_hidden = cfg.train.gd_hidden;
  jc.adapt.lambda = cfg.train.lambda;
  jc.adapt.optimizer.lr = cfg.train.da_lr;
  jc.adapt.batch = cfg.train.da_batch;
  jc.deepsets.hidden = cfg.train.deepsets_hidden;
  jc.deepsets.set_dim = cfg.train.deepsets_set_dim;
  jc.deepsets.lr = cfg.train.deepsets_lr;
  jc.deepsets.batch = cfg.train.deepsets_batch;
  jc.seed = derive_seed(cfg.seed, 0x11a1);
  return jc;
}

inline ProxyHyper usample_hyper(const ExperimentConfig& cfg) {
  ProxyHyper h;
  h.epochs = cfg.usample.proxy_epochs;
  h.lr = cfg.usample.proxy_lr;
  return h;
}

inline nlohmann::json log_to_json(const JointLog& log) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : log.epochs)
    epochs.push_back({{"da_steps", e.da_steps},
                      {"cls_loss", e.cls_loss},
                      {"gan_loss", e.gan_loss},
                      {"disc_acc", e.disc_acc},
                      {"ds_train_mse", e.ds_train_mse},
                      {"ds_val_mse", e.ds_val_mse},
                      {"gf_utility_mse", e.gf_utility_mse}});
  return nlohmann::json{{"epochs", epochs},
                        {"total_da_steps", log.total_da_steps},
                        {"diverged", log.diverged},
                        {"divergence_message", log.divergence_message}};
}

inline std::uint64_t cell_seed(const ExperimentConfig& cfg, std::uint64_t rep,
                               const std::string& strategy, int budget) {
  return derive_seed(cfg.seed, fnv1a64(strategy.data(), strategy.size()), rep,
                     static_cast<std::uint64_t>(budget));
}

}  // namespace pipeline_detail

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline StageStatus stage_gen_data(const ExperimentConfig& cfg, const PipelineOptions& opts) {
  namespace pd = pipeline_detail;
  StageStatus status{"gen-data"};
  fs::path out = pd::out_dir(cfg, opts);
  fs::path dir = out / "data";
  std::uint64_t hash = config_hash(cfg);
  if (opts.resume && pd::stage_done(dir, hash)) {
    status.ok = status.skipped = true;
    return status;
  }
  fs::create_directories(dir);

  DomainPair pair = pd::generate_pair(cfg);

  IndexSet corrupted({}, pair.target_pool.n());
  if (cfg.data.corrupt_fraction > 0.0 && cfg.data.corrupt_target_pool) {
    auto [pool, idx] = corrupt_white_noise(pair.target_pool, cfg.data.corrupt_fraction,
                                           cfg.data.corrupt_sigma, derive_seed(cfg.seed, 0xc1));
    pair.target_pool = std::move(pool);
    corrupted = std::move(idx);
  }

  // carve L^I and L_val out of the source
  int n = pair.source.n();
  int pool_size = std::min(cfg.data.utility_pool_size, n - 1);
  int val_size = cfg.data.utility_val_size == 0
                     ? n - pool_size
                     : std::min(cfg.data.utility_val_size, n - pool_size);
  Rng rng(derive_seed(cfg.seed, 0xc2));
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  rng.shuffle(perm);
  Dataset upool = pair.source.subset(
      IndexSet(std::vector<int>(perm.begin(), perm.begin() + pool_size), n), "upool");
  Dataset uval = pair.source.subset(
      IndexSet(std::vector<int>(perm.begin() + pool_size, perm.begin() + pool_size + val_size), n),
      "uval");

  if (cfg.data.corrupt_fraction > 0.0 && cfg.data.corrupt_source_pool)
    upool = corrupt_white_noise(upool, cfg.data.corrupt_fraction, cfg.data.corrupt_sigma,
                                derive_seed(cfg.seed, 0xc3))
                .first;

  save_dataset(pair.source, dir / "source.dsb", hash, cfg.seed);
  save_dataset(pair.target_pool, dir / "target_pool.dsb", hash, cfg.seed);
  save_dataset(pair.target_test, dir / "target_test.dsb", hash, cfg.seed);
  save_dataset(upool, dir / "utility_pool.dsb", hash, cfg.seed);
  save_dataset(uval, dir / "utility_val.dsb", hash, cfg.seed);
  export_csv(pair.source, dir / "source.csv");

  std::ofstream meta(dir / "meta.json");
  meta << nlohmann::json{{"shift_descriptor", pair.shift_descriptor},
                         {"corrupted", corrupted.indices},
                         {"config_hash", hash},
                         {"seed", cfg.seed}}
              .dump(2)
       << "\n";
  pd::mark_stage(dir, "gen-data", hash, cfg.seed);
  status.ok = true;
  return status;
}

inline StageStatus stage_sample_utility(const ExperimentConfig& cfg,
                                        const PipelineOptions& opts) {
  namespace pd = pipeline_detail;
  StageStatus status{"sample-utility"};
  fs::path out = pd::out_dir(cfg, opts);
  fs::path dir = out / "usample";
  std::uint64_t hash = config_hash(cfg);
  if (opts.resume && pd::stage_done(dir, hash)) {
    status.ok = status.skipped = true;
    return status;
  }
  auto data = pd::load_data_artifacts(out);
  fs::create_directories(dir);

  UtilitySampleConfig ucfg;
  ucfg.n = cfg.usample.n;
  ucfg.size_min = cfg.usample.size_min;
  ucfg.size_max = cfg.usample.size_max;
  ucfg.proxy_kind = proxy_from_name(cfg.usample.proxy);
  ucfg.proxy_hyper = pd::usample_hyper(cfg);
  ucfg.workers = pd::workers(cfg, opts);

  UtilityDataset sds =
      sample_utility(data.utility_pool, data.utility_val, ucfg, derive_seed(cfg.seed, 0x5d5));
  save_utility_dataset(sds, dir / "sds.jsonl", hash);
  pd::mark_stage(dir, "sample-utility", hash, cfg.seed);
  status.ok = true;
  return status;
}

inline StageStatus stage_train(const ExperimentConfig& cfg, const PipelineOptions& opts) {
  namespace pd = pipeline_detail;
  StageStatus status{"train"};
  fs::path out = pd::out_dir(cfg, opts);
  fs::path dir = out / "train";
  std::uint64_t hash = config_hash(cfg);
  if (opts.resume && pd::stage_done(dir, hash)) {
    status.ok = status.skipped = true;
    return status;
  }
  auto data = pd::load_data_artifacts(out);
  UtilityDataset sds = load_utility_dataset(out / "usample" / "sds.jsonl",
                                            data.utility_pool.n());
  fs::create_directories(dir);

  JointConfig jc = pd::joint_config(cfg);
  JointResult joint = train_joint(data.pair, sds, data.utility_pool, jc);
  if (joint.log.diverged) {
    status.message = "training diverged: " + joint.log.divergence_message;
    pd::save_train_artifacts({joint.adapt, joint.deepsets}, dir / "last_good");
    return status;
  }
  pd::save_train_artifacts({joint.adapt, joint.deepsets}, dir);
  {
    std::ofstream manifest(dir / "manifest.json");
    manifest << nlohmann::json{{"config", to_json(cfg)},
                               {"config_hash", hash},
                               {"seed", cfg.seed},
                               {"log", pd::log_to_json(joint.log)}}
                    .dump(2)
             << "\n";
  }

  // upper-bound model on oracle-labeled target data, when requested
  bool want_optimal = false;
  for (const auto& s : cfg.select.strategies)
    if (strategy_from_name(s) == Strategy::OptimalOracle) want_optimal = true;
  if (want_optimal) {
    int pool_size = std::min(cfg.data.utility_pool_size, data.pair.target_pool.n() - 1);
    Rng rng(derive_seed(cfg.seed, 0x0b7));
    IndexSet held(rng.sample_without_replacement(data.pair.target_pool.n(), pool_size),
                  data.pair.target_pool.n());
    Dataset target_labeled = oracle_labeled_subset(data.pair.target_pool, held, "optimal-pool");

    UtilitySampleConfig ucfg;
    ucfg.n = cfg.usample.n;
    ucfg.size_min = std::min(cfg.usample.size_min, target_labeled.n());
    ucfg.size_max = cfg.usample.size_max == 0
                        ? 0
                        : std::min(cfg.usample.size_max, target_labeled.n());
    ucfg.proxy_kind = proxy_from_name(cfg.usample.proxy);
    ucfg.proxy_hyper = pd::usample_hyper(cfg);
    ucfg.workers = pd::workers(cfg, opts);
    UtilityDataset sds_target = sample_utility(target_labeled, data.pair.target_test, ucfg,
                                               derive_seed(cfg.seed, 0x0b8));

    JointConfig oc = jc;
    oc.seed = derive_seed(cfg.seed, 0x0b9);
    JointResult oracle = train_optimal_oracle(target_labeled, sds_target, oc);
    if (oracle.log.diverged) {
      status.message = "optimal-oracle training diverged: " + oracle.log.divergence_message;
      return status;
    }
    pd::save_train_artifacts({oracle.adapt, oracle.deepsets}, out / "train_optimal");
    std::ofstream held_json(out / "train_optimal" / "held.json");
    held_json << nlohmann::json{{"indices", held.indices}, {"config_hash", hash}}.dump() << "\n";
  }

  pd::mark_stage(dir, "train", hash, cfg.seed);
  status.ok = true;
  return status;
}

inline StageStatus stage_select(const ExperimentConfig& cfg, const PipelineOptions& opts) {
  namespace pd = pipeline_detail;
  StageStatus status{"select"};
  fs::path out = pd::out_dir(cfg, opts);
  fs::path dir = out / "select";
  std::uint64_t hash = config_hash(cfg);
  if (opts.resume && pd::stage_done(dir, hash)) {
    status.ok = status.skipped = true;
    return status;
  }
  auto data = pd::load_data_artifacts(out);
  fs::create_directories(dir);

  pd::TrainArtifacts main_model, optimal_model;
  bool main_loaded = false, optimal_loaded = false;
  for (const auto& sname : cfg.select.strategies) {
    Strategy strat = strategy_from_name(sname);
    if (strat == Strategy::OptimalOracle && !optimal_loaded) {
      optimal_model = pd::load_train_artifacts(out / "train_optimal", cfg.train.lambda);
      optimal_loaded = true;
    } else if (strat != Strategy::Random && strat != Strategy::OptimalOracle && !main_loaded) {
      main_model = pd::load_train_artifacts(out / "train", cfg.train.lambda);
      main_loaded = true;
    }
  }

  for (const auto& sname : cfg.select.strategies) {
    Strategy strat = strategy_from_name(sname);
    for (int budget : cfg.select.budgets) {
      for (std::size_t rep = 0; rep < cfg.eval.seeds.size(); ++rep) {
        SelectionConfig scfg;
        scfg.budget = budget;
        scfg.epsilon = cfg.select.epsilon;
        scfg.strategy = strat;
        scfg.seed = pd::cell_seed(cfg, cfg.eval.seeds[rep], sname, budget);

        SelectionResult result;
        switch (strat) {
          case Strategy::D2ulo:
            result = stochastic_greedy(data.pair.target_pool, main_model.adapt,
                                       main_model.deepsets, scfg);
            break;
          case Strategy::OptimalOracle:
            result = stochastic_greedy(data.pair.target_pool, optimal_model.adapt,
                                       optimal_model.deepsets, scfg);
            break;
          case Strategy::Random:
            result = select_random(data.pair.target_pool, scfg);
            break;
          case Strategy::Badge:
            result = select_badge(data.pair.target_pool, main_model.adapt, scfg);
            break;
          case Strategy::Aada:
            result = select_aada(data.pair.target_pool, main_model.adapt, scfg);
            break;
          case Strategy::Fass:
            result = select_fass(data.pair.target_pool, main_model.adapt, scfg);
            break;
        }
        nlohmann::json j = selection_to_json(result);
        j["config_hash"] = hash;
        j["rep"] = cfg.eval.seeds[rep];
        std::ofstream os(dir / (sname + "_b" + std::to_string(budget) + "_s" +
                                std::to_string(cfg.eval.seeds[rep]) + ".json"));
        os << j.dump() << "\n";
      }
    }
  }
  pd::mark_stage(dir, "select", hash, cfg.seed);
  status.ok = true;
  return status;
}

inline StageStatus stage_evaluate(const ExperimentConfig& cfg, const PipelineOptions& opts) {
  namespace pd = pipeline_detail;
  StageStatus status{"evaluate"};
  fs::path out = pd::out_dir(cfg, opts);
  fs::path dir = out / "eval";
  std::uint64_t hash = config_hash(cfg);
  if (opts.resume && pd::stage_done(dir, hash)) {
    status.ok = status.skipped = true;
    return status;
  }
  auto data = pd::load_data_artifacts(out);
  fs::create_directories(dir);

  bool need_model = cfg.eval.correlation_subsets > 0;
  for (const auto& e : cfg.eval.evaluators)
    if (e == "finetune") need_model = true;
  pd::TrainArtifacts model;
  if (need_model) model = pd::load_train_artifacts(out / "train", cfg.train.lambda);

  struct Cell {
    std::string strategy, evaluator;
    int budget;
    std::uint64_t rep;
    IndexSet chosen;
  };
  std::vector<Cell> cells;
  std::vector<double> noise_fracs;
  for (const auto& sname : cfg.select.strategies)
    for (int budget : cfg.select.budgets)
      for (std::uint64_t rep : cfg.eval.seeds) {
        fs::path sel = out / "select" /
                       (sname + "_b" + std::to_string(budget) + "_s" + std::to_string(rep) +
                        ".json");
        std::ifstream is(sel);
        if (!is)
          throw std::runtime_error("missing selection artifact " + sel.string() +
                                   "; run the select stage first");
        nlohmann::json j;
        is >> j;
        SelectionResult result = selection_from_json(j, data.pair.target_pool.n());
        if (sname == "d2ulo" && data.corrupted.size() > 0)
          noise_fracs.push_back(noise_pick_fraction(result, data.corrupted));
        for (const auto& evaluator : cfg.eval.evaluators)
          cells.push_back({sname, evaluator, budget, rep, result.chosen});
      }

  EvalReport report;
  report.cells.resize(cells.size());
  int nworkers = pd::workers(cfg, opts);
  parallel_for(static_cast<int>(cells.size()), nworkers, [&](int i) {
    const Cell& c = cells[static_cast<std::size_t>(i)];
    std::uint64_t seed = derive_seed(pd::cell_seed(cfg, c.rep, c.strategy, c.budget), 0xe7a1,
                                     fnv1a64(c.evaluator.data(), c.evaluator.size()));
    double acc;
    if (c.evaluator == "finetune") {
      FinetuneOptions fopts;
      fopts.epochs = cfg.eval.finetune_epochs;
      acc = finetune_eval(c.chosen, data.pair, model.adapt, seed, fopts);
    } else {
      ProxyHyper hyper;
      hyper.epochs = cfg.eval.evaluator_epochs;
      acc = train_from_scratch(c.chosen, data.pair, proxy_from_name(c.evaluator), hyper, seed);
    }
    report.cells[static_cast<std::size_t>(i)] = {c.strategy, c.evaluator, c.budget, c.rep, acc};
  });

  if (!noise_fracs.empty()) {
    double sum = 0.0;
    for (double f : noise_fracs) sum += f;
    report.noise_pick_fraction = sum / static_cast<double>(noise_fracs.size());
  }

  if (cfg.eval.correlation_subsets > 0) {
    CorrelationConfig ccfg;
    ccfg.n_subsets = cfg.eval.correlation_subsets;
    ccfg.sample_size = cfg.eval.correlation_sample;
    ccfg.proxy_kind = proxy_from_name(cfg.usample.proxy);
    ccfg.proxy_hyper = pd::usample_hyper(cfg);
    ccfg.workers = nworkers;
    CorrelationReport corr = utility_correlation(model.deepsets, model.adapt, data.pair, ccfg,
                                                 derive_seed(cfg.seed, 0xc0a));
    report.utility_correlation = {corr.pearson_r, corr.spearman_r};
    write_scatter_csv(corr, dir / "scatter.csv");
  }

  report.write_csv(dir / "results.csv", hash);
  {
    nlohmann::json j = report.to_json();
    j["config_hash"] = hash;
    j["seed"] = cfg.seed;
    std::ofstream os(dir / "results.json");
    os << j.dump(2) << "\n";
  }
  pd::mark_stage(dir, "evaluate", hash, cfg.seed);
  status.ok = true;
  return status;
}

// Merges evaluation CSVs into per-(strategy, evaluator, budget) mean rows
// followed by the per-seed rows. Mixing config hashes requires force.
inline void write_report(const std::vector<fs::path>& eval_csvs, const fs::path& out_csv,
                         bool force = false) {
  struct Row {
    std::string strategy, evaluator;
    int budget;
    std::uint64_t seed;
    double accuracy;
  };
  std::vector<Row> rows;
  std::set<std::string> hashes;
  for (const auto& path : eval_csvs) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open eval csv: " + path.string());
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      Row r;
      std::string hash_field;
      std::stringstream ss(line);
      std::string field;
      std::getline(ss, r.strategy, ',');
      std::getline(ss, r.evaluator, ',');
      std::getline(ss, field, ',');
      r.budget = std::stoi(field);
      std::getline(ss, field, ',');
      r.seed = std::stoull(field);
      std::getline(ss, field, ',');
      r.accuracy = std::stod(field);
      std::getline(ss, hash_field, ',');
      hashes.insert(hash_field);
      rows.push_back(std::move(r));
    }
  }
  if (hashes.size() > 1 && !force)
    throw std::runtime_error("refusing to merge eval results from " +
                             std::to_string(hashes.size()) +
                             " different configs (use force to override)");

  std::map<std::tuple<std::string, std::string, int>, std::vector<const Row*>> groups;
  for (const auto& r : rows) groups[{r.strategy, r.evaluator, r.budget}].push_back(&r);

  std::ofstream os(out_csv);
  if (!os) throw std::runtime_error("cannot open for write: " + out_csv.string());
  os.precision(17);
  os << "kind,strategy,evaluator,budget,seed,accuracy,std\n";
  for (const auto& [key, group] : groups) {
    double mean = 0.0;
    for (const Row* r : group) mean += r->accuracy;
    mean /= static_cast<double>(group.size());
    double var = 0.0;
    for (const Row* r : group) var += (r->accuracy - mean) * (r->accuracy - mean);
    double sd = std::sqrt(var / static_cast<double>(group.size()));
    os << "mean," << std::get<0>(key) << "," << std::get<1>(key) << "," << std::get<2>(key)
       << ",," << mean << "," << sd << "\n";
  }
  for (const auto& [key, group] : groups)
    for (const Row* r : group)
      os << "seed," << r->strategy << "," << r->evaluator << "," << r->budget << "," << r->seed
         << "," << r->accuracy << ",\n";
}

inline StageStatus stage_report(const ExperimentConfig& cfg, const PipelineOptions& opts) {
  namespace pd = pipeline_detail;
  StageStatus status{"report"};
  fs::path out = pd::out_dir(cfg, opts);
  fs::path dir = out / "report";
  std::uint64_t hash = config_hash(cfg);
  if (opts.resume && pd::stage_done(dir, hash)) {
    status.ok = status.skipped = true;
    return status;
  }
  fs::path eval_csv = out / "eval" / "results.csv";
  if (!fs::exists(eval_csv))
    throw std::runtime_error("missing " + eval_csv.string() + "; run the evaluate stage first");
  fs::create_directories(dir);
  write_report({eval_csv}, dir / "summary.csv");
  pd::mark_stage(dir, "report", hash, cfg.seed);
  status.ok = true;
  return status;
}

// ---------------------------------------------------------------------------
// End-to-end driver
// ---------------------------------------------------------------------------

inline PipelineResult run_pipeline(const ExperimentConfig& cfg, const PipelineOptions& opts = {},
                                   std::ostream* log = nullptr) {
  validate(cfg);
  PipelineResult result;
  using StageFn = StageStatus (*)(const ExperimentConfig&, const PipelineOptions&);
  const std::pair<const char*, StageFn> stages[] = {
      {"gen-data", stage_gen_data},     {"sample-utility", stage_sample_utility},
      {"train", stage_train},           {"select", stage_select},
      {"evaluate", stage_evaluate},     {"report", stage_report},
  };
  for (const auto& [name, fn] : stages) {
    StageStatus status;
    try {
      status = fn(cfg, opts);
    } catch (const std::exception& e) {
      status.name = name;
      status.ok = false;
      status.message = e.what();
    }
    if (log)
      *log << "[" << (status.ok ? (status.skipped ? "skip" : " ok ") : "FAIL") << "] "
           << status.name << (status.message.empty() ? "" : ": " + status.message) << "\n";
    bool failed = !status.ok;
    result.stages.push_back(std::move(status));
    if (failed) {
      result.ok = false;
      break;  // partial artifacts stay on disk; the log names the failing stage
    }
  }
  return result;
}

}  // namespace dusel
