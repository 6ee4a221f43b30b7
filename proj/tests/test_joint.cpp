#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dusel/generators.hpp"
#include "dusel/joint.hpp"
#include "testutil.hpp"

using namespace dusel;

namespace {

JointConfig tiny_config(std::uint64_t seed) {
  JointConfig cfg;
  cfg.seed = seed;
  cfg.k = 3;
  cfg.epochs = 2;
  cfg.deepsets_inner_epochs = 4;
  cfg.adapt.embed_dim = 8;
  cfg.adapt.gf_hidden = {16};
  cfg.adapt.gy_hidden = {8};
  cfg.adapt.gd_hidden = {8};
  cfg.adapt.batch = 32;
  cfg.deepsets.hidden = 16;
  cfg.deepsets.set_dim = 16;
  cfg.deepsets.lr = 1e-3;
  cfg.deepsets.batch = 16;
  cfg.gf_utility_lr = 1e-4;
  return cfg;
}

struct Fixture {
  DomainPair pair;
  Dataset pool;
  Dataset val;
  UtilityDataset sds;
};

Fixture make_fixture(std::uint64_t seed, int n_records = 60) {
  Fixture f{gen_shift(MoonsParams{0.8, 0.1, 300, 200, 64}, seed), {}, {}, {}};
  auto [pool, val] = split(f.pair.source, {3, 2}, derive_seed(seed, 77));
  f.pool = pool;
  f.val = val;
  UtilitySampleConfig ucfg;
  ucfg.n = n_records;
  ucfg.size_min = 5;
  ucfg.proxy_hyper.epochs = 25;
  f.sds = sample_utility(f.pool, f.val, ucfg, derive_seed(seed, 78));
  return f;
}

double spearman_local(std::vector<double> a, std::vector<double> b) {
  auto ranks = [](std::vector<double> v) {
    std::vector<int> order(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int x, int y) { return v[static_cast<std::size_t>(x)] < v[static_cast<std::size_t>(y)]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size(); ++i) r[static_cast<std::size_t>(order[i])] = static_cast<double>(i);
    return r;
  };
  auto ra = ranks(std::move(a)), rb = ranks(std::move(b));
  double ma = testutil::mean(ra), mb = testutil::mean(rb);
  double num = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("zero epochs returns the initialized models untouched") {
  Fixture f = make_fixture(1, 20);
  JointConfig cfg = tiny_config(5);
  cfg.epochs = 0;
  JointResult r = train_joint(f.pair, f.sds, f.pool, cfg);
  REQUIRE(r.log.epochs.empty());
  REQUIRE(r.log.total_da_steps == 0);

  AdaptModel fresh = make_adapt_model(2, 2, cfg.adapt, derive_seed(cfg.seed, 0x01));
  for (std::size_t li = 0; li < fresh.g_f.layers.size(); ++li)
    REQUIRE(r.adapt.g_f.layers[li].w.a == fresh.g_f.layers[li].w.a);
  DeepSetsModel fresh_ds = make_deepsets(cfg.adapt.embed_dim, cfg.deepsets, derive_seed(cfg.seed, 0x02));
  for (std::size_t li = 0; li < fresh_ds.phi.layers.size(); ++li)
    REQUIRE(r.deepsets.phi.layers[li].w.a == fresh_ds.phi.layers[li].w.a);
}

TEST_CASE("log accounts for exactly k DA steps per utility phase") {
  Fixture f = make_fixture(2, 30);
  for (int k : {5, 10}) {
    JointConfig cfg = tiny_config(6);
    cfg.k = k;
    cfg.epochs = 3;
    JointResult r = train_joint(f.pair, f.sds, f.pool, cfg);
    REQUIRE(r.log.epochs.size() == 3);
    for (const auto& e : r.log.epochs) REQUIRE(e.da_steps == k);
    REQUIRE(r.log.total_da_steps == k * 3);
  }
}

TEST_CASE("utility-loss gradient through g_f matches finite differences") {
  Fixture f = make_fixture(3, 10);
  JointConfig cfg = tiny_config(7);
  AdaptModel adapt = make_adapt_model(2, 2, cfg.adapt, 91);
  DeepSetsModel ds = make_deepsets(cfg.adapt.embed_dim, cfg.deepsets, 92);

  const auto& rec = f.sds.records.front();
  Matrix x = take_rows(f.pool.features(), rec.subset.indices);
  const double u = rec.utility;

  auto loss_fn = [&]() {
    Matrix emb = forward(adapt.g_f, x);
    double pred = ds_predict(ds, emb);
    return (pred - u) * (pred - u);
  };

  // analytic chain: rho -> pooled broadcast -> phi -> g_f
  ForwardCache gf_cache, phi_cache, rho_cache;
  Matrix emb = forward(adapt.g_f, x, &gf_cache);
  Matrix phi_out = forward(ds.phi, emb, &phi_cache);
  Matrix pooled(1, phi_out.cols);
  for (int r = 0; r < phi_out.rows; ++r)
    for (int c = 0; c < phi_out.cols; ++c) pooled(0, c) += phi_out(r, c);
  Matrix pred = forward(ds.rho, pooled, &rho_cache);
  Matrix dpred(1, 1);
  dpred(0, 0) = 2.0 * (pred(0, 0) - u);
  Grads g_rho = backward(ds.rho, rho_cache, dpred);
  Matrix phi_grad_out(phi_out.rows, phi_out.cols);
  for (int r = 0; r < phi_out.rows; ++r)
    std::copy(g_rho.input.row(0), g_rho.input.row(0) + phi_out.cols, phi_grad_out.row(r));
  Grads g_phi = backward(ds.phi, phi_cache, phi_grad_out);
  Grads g_f = backward(adapt.g_f, gf_cache, g_phi.input);

  auto numeric = testutil::numeric_grad(testutil::param_ptrs(adapt.g_f), loss_fn);
  REQUIRE(testutil::max_rel_err(testutil::flatten_grads(g_f), numeric) < 1e-4);
}

TEST_CASE("deepsets training loss is mostly non-increasing within a phase") {
  Fixture f = make_fixture(4, 80);
  JointConfig cfg = tiny_config(8);
  cfg.epochs = 4;
  cfg.deepsets_inner_epochs = 8;
  // a still-descending regime: at higher rates Adam reaches its noise floor
  // and oscillates there, which is not what this sanity check is about
  cfg.deepsets.lr = 1e-5;
  cfg.deepsets.batch = 64;
  JointResult r = train_joint(f.pair, f.sds, f.pool, cfg);

  int decreasing = 0, total = 0;
  for (const auto& e : r.log.epochs) {
    for (std::size_t i = 1; i < e.ds_inner_curve.size(); ++i) {
      ++total;
      if (e.ds_inner_curve[i] <= e.ds_inner_curve[i - 1] * (1.0 + 1e-9)) ++decreasing;
    }
  }
  REQUIRE(total > 0);
  REQUIRE(static_cast<double>(decreasing) / total >= 0.9);
}

TEST_CASE("joint training is deterministic per seed") {
  Fixture f = make_fixture(5, 20);
  JointConfig cfg = tiny_config(9);
  JointResult a = train_joint(f.pair, f.sds, f.pool, cfg);
  JointResult b = train_joint(f.pair, f.sds, f.pool, cfg);
  for (std::size_t li = 0; li < a.adapt.g_f.layers.size(); ++li)
    REQUIRE(a.adapt.g_f.layers[li].w.a == b.adapt.g_f.layers[li].w.a);
  for (std::size_t li = 0; li < a.deepsets.phi.layers.size(); ++li)
    REQUIRE(a.deepsets.phi.layers[li].w.a == b.deepsets.phi.layers[li].w.a);
}

TEST_CASE("optimal oracle equals the joint loop with DA disabled") {
  Fixture f = make_fixture(6, 20);
  // lift the quarantine the way evaluation code would
  Dataset labeled_pool = f.pool;  // source-derived pool doubles as "target"
  JointConfig cfg = tiny_config(10);

  JointResult oracle = train_optimal_oracle(labeled_pool, f.sds, cfg);
  REQUIRE(oracle.log.total_da_steps == 0);

  cfg.mode = JointMode::OptimalTargetOracle;
  DomainPair degenerate{labeled_pool, labeled_pool.with_quarantined_labels(), labeled_pool, ""};
  JointResult direct = train_joint(degenerate, f.sds, labeled_pool, cfg);
  for (std::size_t li = 0; li < oracle.deepsets.rho.layers.size(); ++li)
    REQUIRE(oracle.deepsets.rho.layers[li].w.a == direct.deepsets.rho.layers[li].w.a);

  // the trained surrogate keeps exact permutation invariance
  Matrix emb = forward(oracle.adapt.g_f, take_rows(f.pool.features(), {0, 5, 9, 14, 20}));
  double base = ds_predict(oracle.deepsets, emb);
  Matrix permuted = take_rows(emb, {4, 0, 3, 1, 2});
  REQUIRE(ds_predict(oracle.deepsets, permuted) == base);

  REQUIRE_THROWS_AS(train_optimal_oracle(f.pair.target_pool, f.sds, cfg), QuarantineError);
}

TEST_CASE("mismatched utility pool is rejected") {
  Fixture f = make_fixture(7, 10);
  JointConfig cfg = tiny_config(11);
  REQUIRE_THROWS_AS(train_joint(f.pair, f.sds, f.val, cfg), ParamError);
}

TEST_CASE("domain adaptation improves target-subset utility ranking") {
  // fixed-size subsets so the ranking signal is composition, not cardinality
  std::vector<double> da_rho, noda_rho;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto pair = gen_shift(MoonsParams{1.5707963267948966, 0.12, 400, 300, 200}, 200 + seed);
    auto [pool, val] = split(pair.source, {3, 2}, derive_seed(seed, 1));

    UtilitySampleConfig ucfg;
    ucfg.n = 220;
    ucfg.size_min = 12;
    ucfg.size_max = 12;
    ucfg.proxy_hyper.epochs = 40;
    UtilityDataset sds = sample_utility(pool, val, ucfg, derive_seed(seed, 2));

    JointConfig cfg = tiny_config(300 + seed);
    cfg.epochs = 6;
    cfg.k = 60;
    cfg.deepsets_inner_epochs = 12;
    cfg.adapt.embed_dim = 8;
    cfg.adapt.gf_hidden = {32};
    cfg.deepsets.lr = 2e-3;
    cfg.gf_utility_lr = 1e-5;

    JointConfig ablated = cfg;
    ablated.mode = JointMode::OptimalTargetOracle;  // same loop, DA steps removed

    JointResult with_da = train_joint(pair, sds, pool, cfg);
    JointResult without_da = train_joint(pair, sds, pool, ablated);

    // true utilities of fixed-size target subsets, via the oracle labels
    Dataset oracle_pool(pair.target_pool.features(), pair.target_pool.oracle_labels(),
                        pair.target_pool.num_classes(), DomainTag::Target, "oracle-pool");
    Rng rng(derive_seed(seed, 3));
    std::vector<double> truth, est_da, est_noda;
    for (int trial = 0; trial < 60; ++trial) {
      IndexSet subset(rng.sample_without_replacement(oracle_pool.n(), 12), oracle_pool.n());
      Dataset sub = oracle_pool.subset(subset);
      ProxyModel proxy = train_proxy(ProxyKind::Logistic, sub, {.epochs = 40}, 0);
      truth.push_back(accuracy(proxy, pair.target_test));
      Matrix x = take_rows(pair.target_pool.features(), subset.indices);
      est_da.push_back(ds_predict(with_da.deepsets, forward(with_da.adapt.g_f, x)));
      est_noda.push_back(ds_predict(without_da.deepsets, forward(without_da.adapt.g_f, x)));
    }
    da_rho.push_back(spearman_local(est_da, truth));
    noda_rho.push_back(spearman_local(est_noda, truth));
  }
  CAPTURE(da_rho, noda_rho);
  REQUIRE(testutil::mean(da_rho) > testutil::mean(noda_rho));
}
