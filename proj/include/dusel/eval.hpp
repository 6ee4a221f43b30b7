#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dusel/adapt.hpp"
#include "dusel/proxy.hpp"
#include "dusel/select.hpp"
#include "dusel/usample.hpp"

namespace dusel {

// Evaluation protocols. This module is the only place allowed to read the
// quarantined pool labels, always through the named oracle accessor.

// Materializes an oracle-labeled subset of a quarantined pool.
inline Dataset oracle_labeled_subset(const Dataset& pool, const IndexSet& idx,
                                     const std::string& name = "oracle-subset") {
  Matrix f = take_rows(pool.features(), idx.indices);
  std::vector<int> labels;
  labels.reserve(idx.indices.size());
  const auto& oracle = pool.oracle_labels();
  for (int i : idx.indices) labels.push_back(oracle[static_cast<std::size_t>(i)]);
  return Dataset(std::move(f), std::move(labels), pool.num_classes(), pool.domain_tag(), name);
}

// ---------------------------------------------------------------------------
// correlation helpers
// ---------------------------------------------------------------------------

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double num = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  double denom = std::sqrt(va * vb);
  return denom == 0.0 ? 0.0 : num / denom;
}

inline std::vector<double> fractional_ranks(const std::vector<double>& v) {
  std::vector<int> order(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return v[static_cast<std::size_t>(a)] < v[static_cast<std::size_t>(b)]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() &&
           v[static_cast<std::size_t>(order[j + 1])] == v[static_cast<std::size_t>(order[i])])
      ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;  // ties share ranks
    for (std::size_t k = i; k <= j; ++k) ranks[static_cast<std::size_t>(order[k])] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(fractional_ranks(a), fractional_ranks(b));
}

// ---------------------------------------------------------------------------
// Train-from-Scratch
// ---------------------------------------------------------------------------

// Fresh proxy on the chosen points (oracle labels), scored on target_test.
inline double train_from_scratch(const IndexSet& chosen, const DomainPair& pair,
                                 ProxyKind evaluator, const ProxyHyper& hyper,
                                 std::uint64_t seed) {
  Dataset train = oracle_labeled_subset(pair.target_pool, chosen, "tfs-train");
  ProxyModel model = train_proxy(evaluator, train, hyper, derive_seed(seed, 0x7f5));
  return accuracy(model, pair.target_test);
}

// ---------------------------------------------------------------------------
// Fine-tune protocol
// ---------------------------------------------------------------------------

enum class CentroidSimilarity { Wasserstein1, Euclidean };

struct FinetuneOptions {
  int epochs = 20;
  double lr = 1e-4;
  int batch = 64;
  bool freeze_gf = false;
  double delta = 1e-8;
  CentroidSimilarity similarity = CentroidSimilarity::Wasserstein1;
  std::ostream* log = nullptr;
};

// 1-D Wasserstein distance between the coordinate multisets of two vectors:
// mean absolute difference of the sorted sequences.
inline double wasserstein1(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) sum += std::fabs(sa[i] - sb[i]);
  return sum / static_cast<double>(sa.size());
}

namespace eval_detail {

inline std::vector<double> row_vec(const Matrix& m, int r) {
  return std::vector<double>(m.row(r), m.row(r) + m.cols);
}

inline double similarity(const std::vector<double>& x, const std::vector<double>& c,
                         const FinetuneOptions& opts) {
  if (opts.similarity == CentroidSimilarity::Euclidean) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - c[i]) * (x[i] - c[i]);
    return 1.0 / (std::sqrt(s) + opts.delta);
  }
  return 1.0 / (wasserstein1(x, c) + opts.delta);
}

}  // namespace eval_detail

// Fine-tunes g_y (and g_f unless frozen) on the chosen labeled points plus
// similarity-weighted pseudo-labeled pool points; returns target_test
// accuracy. Zero epochs reduce to the model's baseline accuracy.
inline double finetune_eval(const IndexSet& chosen, const DomainPair& pair, AdaptModel model,
                            std::uint64_t seed, const FinetuneOptions& opts = {}) {
  if (opts.epochs > 0) {
    const int num_classes = pair.target_pool.num_classes();
    Dataset chosen_ds = oracle_labeled_subset(pair.target_pool, chosen, "ft-chosen");
    Matrix emb_all = forward(model.g_f, pair.target_pool.features());

    // per-class centroids of the chosen embeddings
    std::vector<std::vector<double>> centroid(static_cast<std::size_t>(num_classes));
    std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
    {
      Matrix emb_chosen = forward(model.g_f, chosen_ds.features());
      for (int r = 0; r < emb_chosen.rows; ++r) {
        int y = chosen_ds.labels()[static_cast<std::size_t>(r)];
        auto& c = centroid[static_cast<std::size_t>(y)];
        if (c.empty()) c.assign(static_cast<std::size_t>(emb_chosen.cols), 0.0);
        for (int j = 0; j < emb_chosen.cols; ++j) c[static_cast<std::size_t>(j)] += emb_chosen(r, j);
        ++counts[static_cast<std::size_t>(y)];
      }
      for (int y = 0; y < num_classes; ++y) {
        if (counts[static_cast<std::size_t>(y)] == 0) {
          if (opts.log)
            *opts.log << "finetune: class " << y
                      << " absent from the chosen set; pseudo-labels restricted to present classes\n";
          continue;
        }
        for (double& v : centroid[static_cast<std::size_t>(y)]) v /= counts[static_cast<std::size_t>(y)];
      }
    }

    // pseudo-label every unchosen pool point by centroid similarity
    std::vector<int> ft_rows = chosen.indices;
    std::vector<int> ft_labels = chosen_ds.labels();
    std::vector<double> ft_weights(ft_rows.size(), 1.0);
    for (int r = 0; r < pair.target_pool.n(); ++r) {
      if (chosen.contains(r)) continue;
      auto x = eval_detail::row_vec(emb_all, r);
      double total = 0.0, best_sim = -1.0;
      int best = -1;
      for (int y = 0; y < num_classes; ++y) {
        if (counts[static_cast<std::size_t>(y)] == 0) continue;
        double s = eval_detail::similarity(x, centroid[static_cast<std::size_t>(y)], opts);
        total += s;
        if (s > best_sim) {
          best_sim = s;
          best = y;
        }
      }
      if (best < 0) continue;  // no centroids at all
      ft_rows.push_back(r);
      ft_labels.push_back(best);
      ft_weights.push_back(best_sim / total);  // normalized per point across classes
    }

    // weighted cross-entropy fine-tuning
    Matrix ft_feats = take_rows(pair.target_pool.features(), ft_rows);
    AdamOpt opt_y(AdamConfig{opts.lr, 0.9, 0.999, 1e-8});
    AdamOpt opt_f(AdamConfig{opts.lr, 0.9, 0.999, 1e-8});
    const int n_ft = static_cast<int>(ft_rows.size());
    std::vector<int> order(static_cast<std::size_t>(n_ft));
    for (int i = 0; i < n_ft; ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
      Rng rng(derive_seed(seed, 0xf17e, static_cast<std::uint64_t>(epoch)));
      rng.shuffle(order);
      for (int at = 0; at < n_ft; at += opts.batch) {
        int bend = std::min(at + opts.batch, n_ft);
        std::vector<int> rows;
        std::vector<int> ys;
        std::vector<double> ws;
        for (int i = at; i < bend; ++i) {
          rows.push_back(order[static_cast<std::size_t>(i)]);
          ys.push_back(ft_labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
          ws.push_back(ft_weights[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
        }
        Matrix bx = take_rows(ft_feats, rows);

        ForwardCache cf, cy;
        Matrix emb = forward(model.g_f, bx, &cf);
        Matrix probs = forward(model.g_y, emb, &cy);

        // weighted mean CE gradient wrt probabilities
        double wsum = 0.0;
        for (double w : ws) wsum += w;
        Matrix dprobs(probs.rows, probs.cols);
        for (int r = 0; r < probs.rows; ++r) {
          int y = ys[static_cast<std::size_t>(r)];
          double p = std::max(probs(r, y), kLogClamp);
          dprobs(r, y) = -ws[static_cast<std::size_t>(r)] / (wsum * p);
        }
        Grads gy = backward(model.g_y, cy, dprobs);
        if (!opts.freeze_gf) {
          Grads gf = backward(model.g_f, cf, gy.input);
          opt_f.step(model.g_f, gf);
        }
        opt_y.step(model.g_y, gy);
      }
    }
  }
  return classifier_accuracy(model, pair.target_test);
}

// ---------------------------------------------------------------------------
// Estimated-vs-true utility diagnostic
// ---------------------------------------------------------------------------

struct CorrelationReport {
  double pearson_r = 0.0;
  double spearman_r = 0.0;
  bool constant_estimator = false;
  std::vector<std::pair<double, double>> scatter;  // (estimated, true)
};

using SetUtilityEstimator = std::function<double(const Matrix& subset_features)>;

struct CorrelationConfig {
  int n_subsets = 500;
  int sample_size = 300;  // held-out target points the subsets draw from
  int size_min = 20;
  int size_max = 0;  // 0 = sample_size
  ProxyKind proxy_kind = ProxyKind::Logistic;
  ProxyHyper proxy_hyper;
  int workers = 1;
};

// Draws random subsets of a held-out target sample, computes true utilities
// by training the proxy on oracle labels, and correlates them against the
// estimator's predictions.
inline CorrelationReport utility_correlation(const SetUtilityEstimator& estimator,
                                             const DomainPair& pair,
                                             const CorrelationConfig& cfg, std::uint64_t seed) {
  int sample_size = std::min(cfg.sample_size, pair.target_pool.n());
  int size_max = cfg.size_max == 0 ? sample_size : cfg.size_max;
  if (cfg.size_min < 1 || cfg.size_min > size_max)
    throw ParamError("utility_correlation: bad subset size range");

  Rng rng(derive_seed(seed, 0xc022));
  IndexSet held(rng.sample_without_replacement(pair.target_pool.n(), sample_size),
                pair.target_pool.n());
  Dataset held_labeled = oracle_labeled_subset(pair.target_pool, held, "corr-held");

  std::vector<double> estimated(static_cast<std::size_t>(cfg.n_subsets));
  std::vector<double> truth(static_cast<std::size_t>(cfg.n_subsets));
  parallel_for(cfg.n_subsets, cfg.workers, [&](int i) {
    Rng r(derive_seed(seed, 0xc023, static_cast<std::uint64_t>(i)));
    int size = r.uniform_int(cfg.size_min, size_max);
    IndexSet subset(r.sample_without_replacement(sample_size, size), sample_size);
    Dataset sub = held_labeled.subset(subset);
    ProxyModel proxy = train_proxy(cfg.proxy_kind, sub, cfg.proxy_hyper,
                                   derive_seed(seed, 0xc024, static_cast<std::uint64_t>(i)));
    truth[static_cast<std::size_t>(i)] = accuracy(proxy, pair.target_test);
    estimated[static_cast<std::size_t>(i)] = estimator(sub.features());
  });

  CorrelationReport report;
  report.scatter.reserve(estimated.size());
  for (std::size_t i = 0; i < estimated.size(); ++i)
    report.scatter.emplace_back(estimated[i], truth[i]);

  double var = 0.0, mean = 0.0;
  for (double e : estimated) mean += e;
  mean /= static_cast<double>(estimated.size());
  for (double e : estimated) var += (e - mean) * (e - mean);
  if (var < 1e-18) {
    report.constant_estimator = true;  // correlation undefined, reported as 0
    return report;
  }
  report.pearson_r = pearson(estimated, truth);
  report.spearman_r = spearman(estimated, truth);
  return report;
}

inline CorrelationReport utility_correlation(const DeepSetsModel& ds, const AdaptModel& adapt,
                                             const DomainPair& pair,
                                             const CorrelationConfig& cfg, std::uint64_t seed) {
  SetUtilityEstimator estimator = [&](const Matrix& subset_features) {
    return ds_predict(ds, forward(adapt.g_f, subset_features));
  };
  return utility_correlation(estimator, pair, cfg, seed);
}

inline void write_scatter_csv(const CorrelationReport& report, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for write: " + path.string());
  os.precision(17);
  os << "estimated,true\n";
  for (const auto& [est, tru] : report.scatter) os << est << "," << tru << "\n";
}

// ---------------------------------------------------------------------------
// Robustness metric + report container
// ---------------------------------------------------------------------------

inline double noise_pick_fraction(const SelectionResult& result, const IndexSet& corrupted) {
  if (result.chosen.size() == 0) return 0.0;
  return static_cast<double>(intersect(result.chosen, corrupted).size()) /
         static_cast<double>(result.chosen.size());
}

struct EvalCell {
  std::string strategy;
  std::string evaluator;  // proxy kind or "finetune"
  int budget = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

struct EvalReport {
  std::vector<EvalCell> cells;
  std::optional<double> noise_pick_fraction;
  std::optional<std::pair<double, double>> utility_correlation;  // (pearson, spearman)

  void write_csv(const std::filesystem::path& path, std::uint64_t config_hash = 0) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for write: " + path.string());
    os.precision(17);
    os << "strategy,evaluator,budget,seed,accuracy,config_hash\n";
    for (const auto& c : cells)
      os << c.strategy << "," << c.evaluator << "," << c.budget << "," << c.seed << ","
         << c.accuracy << "," << config_hash << "\n";
  }

  nlohmann::json to_json() const {
    nlohmann::json cells_json = nlohmann::json::array();
    for (const auto& c : cells)
      cells_json.push_back({{"strategy", c.strategy},
                            {"evaluator", c.evaluator},
                            {"budget", c.budget},
                            {"seed", c.seed},
                            {"accuracy", c.accuracy}});
    nlohmann::json j{{"cells", cells_json}};
    if (noise_pick_fraction) j["noise_pick_fraction"] = *noise_pick_fraction;
    if (utility_correlation)
      j["utility_correlation"] = {{"pearson", utility_correlation->first},
                                  {"spearman", utility_correlation->second}};
    return j;
  }
};

}  // namespace dusel
