#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dusel/dataset.hpp"
#include "dusel/proxy.hpp"
#include "dusel/rng.hpp"

namespace dusel {

// Utility sampling: repeatedly train a proxy on a random subset of the pool
// and record (subset, validation accuracy). Record i is a pure function of
// (inputs, seed, i), so the loop parallelizes without changing the result.

struct UtilityRecord {
  IndexSet subset;
  double utility = 0.0;
};

struct UtilityDataset {
  std::vector<UtilityRecord> records;
  std::uint64_t pool_hash = 0;
  int n = 0;
  ProxyKind proxy_kind = ProxyKind::Logistic;
  std::uint64_t seed = 0;
};

struct UtilitySampleConfig {
  int n = 5000;
  int size_min = 20;
  int size_max = 0;  // 0 means |pool|
  ProxyKind proxy_kind = ProxyKind::Logistic;
  ProxyHyper proxy_hyper;
  int workers = 1;
};

inline UtilityDataset sample_utility(const Dataset& pool, const Dataset& val,
                                     const UtilitySampleConfig& cfg, std::uint64_t seed) {
  if (val.n() < 1 || !val.has_labels()) throw ParamError("sample_utility: empty validation set");
  if (!pool.has_labels()) throw ParamError("sample_utility: pool must be labeled");
  int size_max = cfg.size_max == 0 ? pool.n() : cfg.size_max;
  if (cfg.size_min < 1 || cfg.size_min > size_max || size_max > pool.n())
    throw ParamError("sample_utility: need 1 <= size_min <= size_max <= |pool|");
  if (cfg.n < 1) throw ParamError("sample_utility: n must be >= 1");

  UtilityDataset out;
  out.records.resize(static_cast<std::size_t>(cfg.n));
  out.pool_hash = pool.content_hash();
  out.n = cfg.n;
  out.proxy_kind = cfg.proxy_kind;
  out.seed = seed;

  parallel_for(cfg.n, cfg.workers, [&](int i) {
    Rng rng(derive_seed(seed, 0xa161, static_cast<std::uint64_t>(i)));
    int size = rng.uniform_int(cfg.size_min, size_max);
    IndexSet subset(rng.sample_without_replacement(pool.n(), size), pool.n());
    Dataset sub = pool.subset(subset, "u" + std::to_string(i));
    ProxyModel model = train_proxy(cfg.proxy_kind, sub, cfg.proxy_hyper,
                                   derive_seed(seed, 0xa162, static_cast<std::uint64_t>(i)));
    out.records[static_cast<std::size_t>(i)] = {std::move(subset), accuracy(model, val)};
  });
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines persistence: a header line followed by one record per line.
// ---------------------------------------------------------------------------

inline void save_utility_dataset(const UtilityDataset& ds, const std::filesystem::path& path,
                                 std::uint64_t config_hash = 0) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for write: " + path.string());
  nlohmann::json header{{"n", ds.n},
                        {"seed", ds.seed},
                        {"proxy_kind", proxy_name(ds.proxy_kind)},
                        {"pool_hash", ds.pool_hash},
                        {"config_hash", config_hash}};
  os << header.dump() << "\n";
  for (const auto& rec : ds.records) {
    nlohmann::json line{{"idx", rec.subset.indices}, {"u", rec.utility}};
    os << line.dump() << "\n";
  }
}

inline UtilityDataset load_utility_dataset(const std::filesystem::path& path,
                                           int universe_size,
                                           std::uint64_t* config_hash = nullptr) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("missing header line: " + path.string());
  nlohmann::json header = nlohmann::json::parse(line);
  UtilityDataset ds;
  ds.n = header.at("n").get<int>();
  ds.seed = header.at("seed").get<std::uint64_t>();
  ds.proxy_kind = proxy_from_name(header.at("proxy_kind").get<std::string>());
  ds.pool_hash = header.at("pool_hash").get<std::uint64_t>();
  if (config_hash) *config_hash = header.value("config_hash", std::uint64_t{0});
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line);
    UtilityRecord r;
    r.subset = IndexSet(rec.at("idx").get<std::vector<int>>(), universe_size);
    r.utility = rec.at("u").get<double>();
    ds.records.push_back(std::move(r));
  }
  if (static_cast<int>(ds.records.size()) != ds.n)
    throw std::runtime_error("record count " + std::to_string(ds.records.size()) +
                             " != header n " + std::to_string(ds.n) + " in " + path.string());
  return ds;
}

}  // namespace dusel
