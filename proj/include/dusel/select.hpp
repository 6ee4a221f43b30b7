#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dusel/adapt.hpp"
#include "dusel/dataset.hpp"
#include "dusel/deepsets.hpp"
#include "dusel/rng.hpp"

namespace dusel {

// Budgeted unlabeled-data selection. Every strategy returns exactly M
// distinct pool indices, is deterministic per seed, and breaks ties by the
// lowest index. None of this code may touch pool labels — the quarantine in
// the data module enforces that at runtime.

enum class Strategy { D2ulo, Random, Badge, Aada, Fass, OptimalOracle };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::D2ulo: return "d2ulo";
    case Strategy::Random: return "random";
    case Strategy::Badge: return "badge";
    case Strategy::Aada: return "aada";
    case Strategy::Fass: return "fass";
    case Strategy::OptimalOracle: return "optimal";
  }
  return "?";
}

inline Strategy strategy_from_name(const std::string& s) {
  if (s == "d2ulo") return Strategy::D2ulo;
  if (s == "random") return Strategy::Random;
  if (s == "badge") return Strategy::Badge;
  if (s == "aada") return Strategy::Aada;
  if (s == "fass") return Strategy::Fass;
  if (s == "optimal") return Strategy::OptimalOracle;
  throw std::invalid_argument("unknown strategy: " + s);
}

struct SelectionConfig {
  int budget = 0;
  double epsilon = 1e-3;  // stochastic-greedy accuracy knob
  Strategy strategy = Strategy::Random;
  std::uint64_t seed = 0;
};

struct SelectionResult {
  IndexSet chosen;
  std::vector<double> gains;  // greedy strategies only; gains[0] = first singleton value
  std::optional<double> estimated_utility;
  Strategy strategy = Strategy::Random;
  std::uint64_t seed = 0;
};

inline void validate_selection(const SelectionConfig& cfg, int pool_n) {
  if (cfg.budget < 1 || cfg.budget > pool_n)
    throw ParamError("selection: budget must be in [1, pool size]");
  if (!(cfg.epsilon > 0.0 && cfg.epsilon < 1.0))
    throw ParamError("selection: epsilon must be in (0, 1)");
}

// ---------------------------------------------------------------------------
// Stochastic greedy over an abstract incremental set objective
// ---------------------------------------------------------------------------

// Incremental oracle for f(S u {x}); implementations cache whatever pooled
// state makes value_with cheap.
struct SetObjective {
  virtual ~SetObjective() = default;
  virtual double value_with(int idx) const = 0;  // f(S u {idx})
  virtual void commit(int idx) = 0;
  virtual int universe_size() const = 0;
};

// r = ceil((n / M) * ln(1 / eps)), clamped to the remaining candidates later.
inline int stochastic_greedy_sample_size(int n, int budget, double epsilon) {
  return static_cast<int>(
      std::ceil(static_cast<double>(n) / budget * std::log(1.0 / epsilon)));
}

inline SelectionResult stochastic_greedy_core(SetObjective& objective,
                                              const SelectionConfig& cfg) {
  const int n = objective.universe_size();
  validate_selection(cfg, n);
  const int r = stochastic_greedy_sample_size(n, cfg.budget, cfg.epsilon);

  std::vector<int> remaining(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) remaining[static_cast<std::size_t>(i)] = i;

  SelectionResult result;
  result.strategy = cfg.strategy;
  result.seed = cfg.seed;
  double current = 0.0;

  std::vector<int> picked;
  for (int step = 0; step < cfg.budget; ++step) {
    Rng rng(derive_seed(cfg.seed, 0x9eed, static_cast<std::uint64_t>(step)));
    int m = std::min<int>(r, static_cast<int>(remaining.size()));
    // partial shuffle: the first m entries become the candidate sample
    for (int i = 0; i < m; ++i) {
      int j = rng.uniform_int(i, static_cast<int>(remaining.size()) - 1);
      std::swap(remaining[static_cast<std::size_t>(i)], remaining[static_cast<std::size_t>(j)]);
    }
    int best_idx = -1;
    double best_value = 0.0;
    for (int i = 0; i < m; ++i) {
      int cand = remaining[static_cast<std::size_t>(i)];
      double v = objective.value_with(cand);
      if (best_idx < 0 || v > best_value || (v == best_value && cand < best_idx)) {
        best_idx = cand;
        best_value = v;
      }
    }
    objective.commit(best_idx);
    result.gains.push_back(step == 0 ? best_value : best_value - current);
    current = best_value;
    picked.push_back(best_idx);
    remaining.erase(std::find(remaining.begin(), remaining.end(), best_idx));
  }
  result.estimated_utility = current;
  result.chosen = IndexSet(std::move(picked), n);
  return result;
}

// DeepSets utility objective over g_f embeddings; phi rows are precomputed
// so each candidate costs one rho pass.
class DeepSetsObjective final : public SetObjective {
 public:
  DeepSetsObjective(const DeepSetsModel& model, const AdaptModel& adapt, const Matrix& pool_feats)
      : scorer_(model, forward(adapt.g_f, pool_feats)), n_(pool_feats.rows) {}

  double value_with(int idx) const override { return scorer_.value_with(idx); }
  void commit(int idx) override { scorer_.commit(idx); }
  int universe_size() const override { return n_; }

 private:
  PooledSetScorer scorer_;
  int n_;
};

inline SelectionResult stochastic_greedy(const Dataset& pool, const AdaptModel& adapt,
                                         const DeepSetsModel& model, const SelectionConfig& cfg) {
  DeepSetsObjective objective(model, adapt, pool.features());
  return stochastic_greedy_core(objective, cfg);
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

inline SelectionResult select_random(const Dataset& pool, const SelectionConfig& cfg) {
  validate_selection(cfg, pool.n());
  Rng rng(derive_seed(cfg.seed, 0x7a2d));
  SelectionResult result;
  result.strategy = cfg.strategy;
  result.seed = cfg.seed;
  result.chosen = IndexSet(rng.sample_without_replacement(pool.n(), cfg.budget), pool.n());
  return result;
}

// highest scores win, ties to the lowest index
inline std::vector<int> top_m_indices(const std::vector<double>& scores, int m) {
  std::vector<int> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    return a < b;
  });
  order.resize(static_cast<std::size_t>(m));
  return order;
}

namespace select_detail {

inline std::vector<int> hypothesized_labels(const AdaptModel& adapt, const Matrix& probs) {
  (void)adapt;
  std::vector<int> out(static_cast<std::size_t>(probs.rows));
  for (int r = 0; r < probs.rows; ++r) {
    int best = 0;
    for (int c = 1; c < probs.cols; ++c)
      if (probs(r, c) > probs(r, best)) best = c;
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

inline double sq_dist(const double* a, const double* b, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) {
    double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

// k-means++ seeding: first center uniform, then proportional to the squared
// distance to the nearest chosen center. A zero-mass distribution falls back
// to the lowest unchosen index.
inline std::vector<int> kmeanspp_indices(const Matrix& points, int m, Rng& rng) {
  const int n = points.rows;
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  std::vector<double> d2(static_cast<std::size_t>(n), 0.0);
  std::vector<int> picks;

  int first = rng.uniform_int(0, n - 1);
  picks.push_back(first);
  chosen[static_cast<std::size_t>(first)] = true;
  for (int i = 0; i < n; ++i)
    d2[static_cast<std::size_t>(i)] = sq_dist(points.row(i), points.row(first), points.cols);

  while (static_cast<int>(picks.size()) < m) {
    double total = 0.0;
    for (int i = 0; i < n; ++i)
      if (!chosen[static_cast<std::size_t>(i)]) total += d2[static_cast<std::size_t>(i)];

    int next = -1;
    if (total <= 0.0) {
      for (int i = 0; i < n; ++i)
        if (!chosen[static_cast<std::size_t>(i)]) {
          next = i;
          break;
        }
    } else {
      double u = rng.uniform() * total;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        if (chosen[static_cast<std::size_t>(i)]) continue;
        acc += d2[static_cast<std::size_t>(i)];
        if (u < acc) {
          next = i;
          break;
        }
      }
      if (next < 0)  // numeric tail: take the last unchosen
        for (int i = n - 1; i >= 0; --i)
          if (!chosen[static_cast<std::size_t>(i)]) {
            next = i;
            break;
          }
    }
    picks.push_back(next);
    chosen[static_cast<std::size_t>(next)] = true;
    for (int i = 0; i < n; ++i) {
      if (chosen[static_cast<std::size_t>(i)]) continue;
      double d = sq_dist(points.row(i), points.row(next), points.cols);
      if (d < d2[static_cast<std::size_t>(i)]) d2[static_cast<std::size_t>(i)] = d;
    }
  }
  return picks;
}

}  // namespace select_detail

// Gradient-embedding diversity: the cross-entropy gradient of the final g_y
// layer under the hypothesized label, clustered by k-means++ seeding.
inline SelectionResult select_badge(const Dataset& pool, const AdaptModel& adapt,
                                    const SelectionConfig& cfg) {
  validate_selection(cfg, pool.n());
  Matrix emb = forward(adapt.g_f, pool.features());
  ForwardCache cy;
  Matrix probs = forward(adapt.g_y, emb, &cy);
  auto hyp = select_detail::hypothesized_labels(adapt, probs);

  // penultimate activation feeding g_y's final linear layer
  const Matrix& h = adapt.g_y.layers.size() >= 2
                        ? cy.activations[adapt.g_y.layers.size() - 2]
                        : emb;
  const int c_dim = probs.cols;
  const int h_dim = h.cols;
  Matrix grad_emb(pool.n(), c_dim * h_dim);
  for (int r = 0; r < pool.n(); ++r) {
    for (int c = 0; c < c_dim; ++c) {
      double coeff = probs(r, c) - (c == hyp[static_cast<std::size_t>(r)] ? 1.0 : 0.0);
      double* dst = grad_emb.row(r) + static_cast<std::size_t>(c) * h_dim;
      const double* hr = h.row(r);
      for (int j = 0; j < h_dim; ++j) dst[j] = coeff * hr[j];
    }
  }

  Rng rng(derive_seed(cfg.seed, 0xbad9e));
  SelectionResult result;
  result.strategy = cfg.strategy;
  result.seed = cfg.seed;
  result.chosen =
      IndexSet(select_detail::kmeanspp_indices(grad_emb, cfg.budget, rng), pool.n());
  return result;
}

// Importance-weighted uncertainty: ((1 - D) / D) * H(G_y(G_f(x))), top-M.
inline SelectionResult select_aada(const Dataset& pool, const AdaptModel& adapt,
                                   const SelectionConfig& cfg) {
  validate_selection(cfg, pool.n());
  Matrix emb = forward(adapt.g_f, pool.features());
  Matrix probs = forward(adapt.g_y, emb);
  Matrix disc = forward(adapt.g_d, emb);

  std::vector<double> scores(static_cast<std::size_t>(pool.n()));
  for (int r = 0; r < pool.n(); ++r) {
    double d = std::clamp(disc(r, 0), 1e-6, 1.0 - 1e-6);
    double entropy = 0.0;
    for (int c = 0; c < probs.cols; ++c) {
      double p = probs(r, c);
      if (p > 0.0) entropy -= p * std::log(p);
    }
    scores[static_cast<std::size_t>(r)] = (1.0 - d) / d * entropy;
  }

  SelectionResult result;
  result.strategy = cfg.strategy;
  result.seed = cfg.seed;
  result.chosen = IndexSet(top_m_indices(scores, cfg.budget), pool.n());
  return result;
}

// ---------------------------------------------------------------------------
// FASS: facility-location coverage within hypothesized-label strata
// ---------------------------------------------------------------------------

namespace select_detail {

// Lazy greedy on F(S) = sum_x max_{s in S} sim(x, s), candidates restricted
// to `candidates`. cover[] carries the running max over the chosen set.
inline std::vector<int> facility_location_greedy(const Matrix& sim,
                                                 const std::vector<int>& candidates, int budget,
                                                 std::vector<double>& cover) {
  struct Entry {
    double gain;
    int idx;
    int stamp;
  };
  auto cmp = [](const Entry& a, const Entry& b) {
    if (a.gain != b.gain) return a.gain < b.gain;
    return a.idx > b.idx;  // ties: lowest index wins
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(cmp)> heap(cmp);

  auto gain_of = [&](int s) {
    double g = 0.0;
    const int n = sim.rows;
    for (int x = 0; x < n; ++x) {
      double v = sim(x, s) - cover[static_cast<std::size_t>(x)];
      if (v > 0.0) g += v;
    }
    return g;
  };

  for (int s : candidates) heap.push({gain_of(s), s, 0});

  std::vector<int> picked;
  int stamp = 0;
  while (static_cast<int>(picked.size()) < budget && !heap.empty()) {
    Entry top = heap.top();
    heap.pop();
    if (top.stamp != stamp) {
      top.gain = gain_of(top.idx);
      top.stamp = stamp;
      heap.push(top);
      continue;
    }
    picked.push_back(top.idx);
    ++stamp;
    const int n = sim.rows;
    for (int x = 0; x < n; ++x)
      if (sim(x, top.idx) > cover[static_cast<std::size_t>(x)])
        cover[static_cast<std::size_t>(x)] = sim(x, top.idx);
  }
  return picked;
}

}  // namespace select_detail

// Similarity = max pairwise distance minus Euclidean distance (non-negative).
// Budget is apportioned to strata proportionally by largest remainder.
inline SelectionResult select_fass(const Dataset& pool, const AdaptModel& adapt,
                                   const SelectionConfig& cfg) {
  validate_selection(cfg, pool.n());
  const int n = pool.n();
  Matrix emb = forward(adapt.g_f, pool.features());
  Matrix probs = forward(adapt.g_y, emb);
  auto hyp = select_detail::hypothesized_labels(adapt, probs);

  Matrix dist(n, n);
  double max_dist = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double d = std::sqrt(select_detail::sq_dist(emb.row(i), emb.row(j), emb.cols));
      dist(i, j) = dist(j, i) = d;
      max_dist = std::max(max_dist, d);
    }
  Matrix sim(n, n);
  for (std::size_t i = 0; i < sim.a.size(); ++i) sim.a[i] = max_dist - dist.a[i];

  // strata and proportional budgets
  const int num_classes = probs.cols;
  std::vector<std::vector<int>> strata(static_cast<std::size_t>(num_classes));
  for (int i = 0; i < n; ++i) strata[static_cast<std::size_t>(hyp[static_cast<std::size_t>(i)])].push_back(i);

  std::vector<int> quota(static_cast<std::size_t>(num_classes), 0);
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (int c = 0; c < num_classes; ++c) {
    double exact = static_cast<double>(cfg.budget) * strata[static_cast<std::size_t>(c)].size() / n;
    quota[static_cast<std::size_t>(c)] = static_cast<int>(std::floor(exact));
    assigned += quota[static_cast<std::size_t>(c)];
    remainders.push_back({exact - std::floor(exact), c});
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; assigned < cfg.budget; ++i) {
    int c = remainders[static_cast<std::size_t>(i % num_classes)].second;
    if (quota[static_cast<std::size_t>(c)] < static_cast<int>(strata[static_cast<std::size_t>(c)].size())) {
      ++quota[static_cast<std::size_t>(c)];
      ++assigned;
    }
  }
  // cap at stratum sizes, spilling leftovers to classes with spare capacity
  for (int c = 0; c < num_classes; ++c)
    if (quota[static_cast<std::size_t>(c)] > static_cast<int>(strata[static_cast<std::size_t>(c)].size())) {
      int spill = quota[static_cast<std::size_t>(c)] - static_cast<int>(strata[static_cast<std::size_t>(c)].size());
      quota[static_cast<std::size_t>(c)] -= spill;
      for (int o = 0; o < num_classes && spill > 0; ++o) {
        int room = static_cast<int>(strata[static_cast<std::size_t>(o)].size()) - quota[static_cast<std::size_t>(o)];
        int take = std::min(room, spill);
        quota[static_cast<std::size_t>(o)] += take;
        spill -= take;
      }
    }

  std::vector<double> cover(static_cast<std::size_t>(n), 0.0);
  std::vector<int> picked;
  for (int c = 0; c < num_classes; ++c) {
    if (quota[static_cast<std::size_t>(c)] == 0 || strata[static_cast<std::size_t>(c)].empty()) continue;
    auto sub = select_detail::facility_location_greedy(sim, strata[static_cast<std::size_t>(c)],
                                                       quota[static_cast<std::size_t>(c)], cover);
    picked.insert(picked.end(), sub.begin(), sub.end());
  }

  SelectionResult result;
  result.strategy = cfg.strategy;
  result.seed = cfg.seed;
  result.chosen = IndexSet(std::move(picked), n);
  return result;
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

inline nlohmann::json selection_to_json(const SelectionResult& r) {
  nlohmann::json j{{"strategy", strategy_name(r.strategy)},
                   {"seed", r.seed},
                   {"M", r.chosen.size()},
                   {"indices", r.chosen.indices}};
  if (!r.gains.empty()) j["gains"] = r.gains;
  if (r.estimated_utility) j["estimated_utility"] = *r.estimated_utility;
  return j;
}

inline SelectionResult selection_from_json(const nlohmann::json& j, int universe_size) {
  SelectionResult r;
  r.strategy = strategy_from_name(j.at("strategy").get<std::string>());
  r.seed = j.at("seed").get<std::uint64_t>();
  r.chosen = IndexSet(j.at("indices").get<std::vector<int>>(), universe_size);
  if (j.contains("gains")) r.gains = j.at("gains").get<std::vector<double>>();
  if (j.contains("estimated_utility"))
    r.estimated_utility = j.at("estimated_utility").get<double>();
  if (r.chosen.size() != j.at("M").get<int>())
    throw std::runtime_error("selection json: M does not match the index list");
  return r;
}

}  // namespace dusel
