#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dusel/adapt.hpp"
#include "dusel/generators.hpp"
#include "testutil.hpp"

using namespace dusel;

namespace {

// forces g_d to output exactly 0.5 everywhere
void zero_discriminator(AdaptModel& m) {
  for (auto& l : m.g_d.layers) {
    for (double& v : l.w.a) v = 0.0;
    for (double& v : l.b) v = 0.0;
  }
}

Matrix random_batch(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x(n, d);
  for (double& v : x.a) v = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("gan loss of a maximally confused discriminator is 2 ln 2") {
  AdaptModel m = make_adapt_model(2, 2, {}, 1);
  zero_discriminator(m);
  Matrix bs = random_batch(16, 2, 2);
  Matrix bt = random_batch(24, 2, 3);
  REQUIRE(gan_loss(m, bs, bt) == Catch::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  // symmetry at 0.5: swapping the domains changes nothing
  REQUIRE(gan_loss(m, bt, bs) == Catch::Approx(gan_loss(m, bs, bt)).epsilon(1e-12));
}

TEST_CASE("gan loss approaches zero under perfect discrimination") {
  // identity feature map, single sigmoid unit with a huge weight on x0
  AdaptModel m;
  {
    Layer id;
    id.w = Matrix(1, 1);
    id.w(0, 0) = 1.0;
    id.b = {0.0};
    id.act = Act::Identity;
    m.g_f.layers.push_back(id);
    Layer d;
    d.w = Matrix(1, 1);
    d.w(0, 0) = 20.0;  // sigmoid(+-20) is extreme but not yet rounded to 0/1
    d.b = {0.0};
    d.act = Act::Sigmoid;
    m.g_d.layers.push_back(d);
  }
  Matrix bs(3, 1), bt(3, 1);
  for (int r = 0; r < 3; ++r) {
    bs(r, 0) = 1.0;   // source mapped to D ~ 1
    bt(r, 0) = -1.0;  // target mapped to D ~ 0
  }
  double loss = gan_loss(m, bs, bt);
  REQUIRE(loss > 0.0);  // clamped logs keep it positive
  REQUIRE(loss < 1e-3);
}

TEST_CASE("gan loss is non-negative on random models") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    AdaptConfig cfg;
    cfg.embed_dim = 8;
    cfg.gf_hidden = {8};
    cfg.gd_hidden = {8};
    AdaptModel m = make_adapt_model(3, 2, cfg, seed);
    REQUIRE(gan_loss(m, random_batch(8, 3, seed + 100), random_batch(8, 3, seed + 200)) >= 0.0);
  }
}

TEST_CASE("classification loss limits") {
  AdaptModel m = make_adapt_model(2, 10, {}, 4);

  SECTION("uniform predictor gives ln C") {
    for (auto& l : m.g_y.layers) {
      for (double& v : l.w.a) v = 0.0;
      for (double& v : l.b) v = 0.0;
    }
    Matrix bs = random_batch(12, 2, 5);
    std::vector<int> ys(12, 3);
    REQUIRE(cls_loss(m, bs, ys) == Catch::Approx(std::log(10.0)).epsilon(1e-12));
  }
  SECTION("confident correct predictor gives ~0") {
    // single layer with a huge bias on class 2
    m.g_y.layers.clear();
    Layer l;
    l.w = Matrix(m.g_f.output_dim(), 10);
    l.b.assign(10, 0.0);
    l.b[2] = 80.0;
    l.act = Act::Softmax;
    m.g_y.layers.push_back(l);
    Matrix bs = random_batch(6, 2, 6);
    std::vector<int> ys(6, 2);
    REQUIRE(cls_loss(m, bs, ys) < 1e-9);
  }
  SECTION("duplicating the batch leaves the mean loss unchanged") {
    Matrix bs = random_batch(5, 2, 7);
    std::vector<int> ys{0, 3, 1, 9, 2};
    Matrix doubled = vstack(bs, bs);
    std::vector<int> ys2 = ys;
    ys2.insert(ys2.end(), ys.begin(), ys.end());
    REQUIRE(cls_loss(m, doubled, ys2) == Catch::Approx(cls_loss(m, bs, ys)).epsilon(1e-12));
  }
  SECTION("out-of-range label is rejected") {
    Matrix bs = random_batch(2, 2, 8);
    REQUIRE_THROWS_AS(cls_loss(m, bs, std::vector<int>{0, 10}), std::out_of_range);
  }
}

TEST_CASE("lambda zero reduces da_step to a plain supervised step") {
  AdaptConfig cfg;
  cfg.embed_dim = 16;
  cfg.gf_hidden = {32};
  cfg.gy_hidden = {16};
  cfg.gd_hidden = {16};
  cfg.lambda = 0.0;

  auto pair = gen_shift(MoonsParams{0.6, 0.1, 200, 200, 64}, 9);
  AdaptModel m = make_adapt_model(2, 2, cfg, 33);
  AdaptModel ref = m;  // identical init

  DaTrainer trainer(cfg.optimizer);
  train_da(m, trainer, pair.source, pair.target_pool.features(), 25, 64, 5);

  // reference: supervised-only trainer with the same batch stream
  AdamOpt opt_f(cfg.optimizer), opt_y(cfg.optimizer);
  for (int step = 0; step < 25; ++step) {
    Rng rng(derive_seed(5, 0xda57e9, static_cast<std::uint64_t>(step)));
    auto s_idx = rng.sample_without_replacement(pair.source.n(), 64);
    (void)rng.sample_without_replacement(pair.target_pool.n(), 64);  // keep streams aligned
    Matrix bs = take_rows(pair.source.features(), s_idx);
    std::vector<int> ys;
    for (int i : s_idx) ys.push_back(pair.source.labels()[static_cast<std::size_t>(i)]);

    ForwardCache cf, cy;
    Matrix es = forward(ref.g_f, bs, &cf);
    Matrix probs = forward(ref.g_y, es, &cy);
    auto ce = cross_entropy(probs, ys);
    Grads gy = backward(ref.g_y, cy, ce.grad);
    Grads gf = backward(ref.g_f, cf, gy.input);
    opt_y.step(ref.g_y, gy);
    opt_f.step(ref.g_f, gf);
  }

  for (std::size_t li = 0; li < m.g_f.layers.size(); ++li)
    REQUIRE(m.g_f.layers[li].w.a == ref.g_f.layers[li].w.a);
  for (std::size_t li = 0; li < m.g_y.layers.size(); ++li)
    REQUIRE(m.g_y.layers[li].w.a == ref.g_y.layers[li].w.a);
}

TEST_CASE("da_step is deterministic") {
  auto pair = gen_shift(MoonsParams{0.8, 0.1, 128, 128, 64}, 10);
  AdaptConfig cfg;
  cfg.embed_dim = 8;
  cfg.gf_hidden = {16};
  cfg.gy_hidden = {8};
  cfg.gd_hidden = {8};

  auto run = [&]() {
    AdaptModel m = make_adapt_model(2, 2, cfg, 77);
    DaTrainer t(cfg.optimizer);
    train_da(m, t, pair.source, pair.target_pool.features(), 3, 32, 21);
    return m;
  };
  AdaptModel a = run(), b = run();
  for (std::size_t li = 0; li < a.g_f.layers.size(); ++li)
    REQUIRE(a.g_f.layers[li].w.a == b.g_f.layers[li].w.a);
  for (std::size_t li = 0; li < a.g_d.layers.size(); ++li)
    REQUIRE(a.g_d.layers[li].w.a == b.g_d.layers[li].w.a);
}

TEST_CASE("identical domains leave the discriminator near chance") {
  auto pair = gen_shift(MoonsParams{0.0, 0.1, 400, 400, 200}, 12);
  AdaptConfig cfg;
  cfg.embed_dim = 16;
  cfg.gf_hidden = {32};
  cfg.gy_hidden = {16};
  cfg.gd_hidden = {16};
  AdaptModel m = make_adapt_model(2, 2, cfg, 3);
  DaTrainer t(cfg.optimizer);
  train_da(m, t, pair.source, pair.target_pool.features(), 500, 128, 8);

  // held-out draws from both domains
  auto held = gen_shift(MoonsParams{0.0, 0.1, 300, 300, 64}, 999);
  double acc = discriminator_accuracy(m, held.source.features(), held.target_pool.features());
  REQUIRE(acc >= 0.40);
  REQUIRE(acc <= 0.60);
}

TEST_CASE("da training gradients match finite differences through the reversal") {
  // one adversarial objective evaluated at fixed parameters: the g_f grads
  // produced by the reversal path must equal -lambda times the true gradient
  AdaptConfig cfg;
  cfg.embed_dim = 4;
  cfg.gf_hidden = {5};
  cfg.gd_hidden = {4};
  cfg.lambda = 0.7;
  AdaptModel m = make_adapt_model(3, 2, cfg, 15);
  Matrix bs = random_batch(4, 3, 60);
  Matrix bt = random_batch(5, 3, 61);

  // analytic: reversal-scaled grads wrt g_f params
  ForwardCache cf_s, cf_t, cd_s, cd_t;
  Matrix es = forward(m.g_f, bs, &cf_s);
  Matrix et = forward(m.g_f, bt, &cf_t);
  Matrix ds = forward(m.g_d, es, &cd_s);
  Matrix dt = forward(m.g_d, et, &cd_t);
  Matrix dgs(ds.rows, 1), dgt(dt.rows, 1);
  for (int r = 0; r < ds.rows; ++r) dgs(r, 0) = -1.0 / (ds.rows * std::max(ds(r, 0), kLogClamp));
  for (int r = 0; r < dt.rows; ++r)
    dgt(r, 0) = 1.0 / (dt.rows * std::max(1.0 - dt(r, 0), kLogClamp));
  Grads gd_s = backward(m.g_d, cd_s, dgs, -cfg.lambda);
  Grads gd_t = backward(m.g_d, cd_t, dgt, -cfg.lambda);
  Grads gf = backward(m.g_f, cf_s, gd_s.input);
  gf.accumulate(backward(m.g_f, cf_t, gd_t.input));

  auto loss_fn = [&]() { return -cfg.lambda * gan_loss(m, bs, bt); };
  auto numeric = testutil::numeric_grad(testutil::param_ptrs(m.g_f), loss_fn);
  REQUIRE(testutil::max_rel_err(testutil::flatten_grads(gf), numeric) < 1e-4);
}
