#include <catch2/catch_amalgamated.hpp>

#include "dusel/generators.hpp"
#include "dusel/proxy.hpp"
#include "testutil.hpp"

using namespace dusel;

namespace {

// linearly separable blobs
Dataset blobs(int per_class, int k, std::uint64_t seed, double sigma = 0.2) {
  GaussMixParams p;
  p.k = k;
  p.per_class_source = per_class;
  p.sigma = sigma;
  return gen_shift(p, seed).source;
}

// all one class, features pure noise: nothing for the weights to latch onto
Dataset single_class_set(int n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix f(n, 2);
  for (double& v : f.a) v = rng.normal();
  return Dataset(std::move(f), std::vector<int>(static_cast<std::size_t>(n), 0), 2,
                 DomainTag::Source, "degenerate");
}

}  // namespace

TEST_CASE("logistic fits separable classes perfectly") {
  Dataset train = blobs(50, 2, 1);
  ProxyModel m = train_proxy(ProxyKind::Logistic, train, {}, 0);
  REQUIRE_FALSE(m.single_class);
  REQUIRE(accuracy(m, train) == 1.0);
}

TEST_CASE("hinge and mlp proxies also separate clean blobs") {
  Dataset train = blobs(50, 3, 2);
  REQUIRE(accuracy(train_proxy(ProxyKind::LinearHinge, train, {}, 0), train) >= 0.98);
  REQUIRE(accuracy(train_proxy(ProxyKind::SmallMlp, train, {}, 0), train) >= 0.98);
}

TEST_CASE("single-class subsets train to a flagged constant predictor") {
  Dataset degenerate = single_class_set(40, 3);
  ProxyModel m = train_proxy(ProxyKind::Logistic, degenerate, {}, 0);
  REQUIRE(m.single_class);
  Dataset val = blobs(50, 2, 4);  // balanced two-class validation set
  REQUIRE(accuracy(m, val) == 0.5);
}

TEST_CASE("training is deterministic per seed") {
  Dataset train = blobs(30, 2, 5);
  for (ProxyKind kind : {ProxyKind::Logistic, ProxyKind::LinearHinge, ProxyKind::SmallMlp}) {
    ProxyModel a = train_proxy(kind, train, {}, 7);
    ProxyModel b = train_proxy(kind, train, {}, 7);
    for (std::size_t li = 0; li < a.net.layers.size(); ++li) {
      REQUIRE(a.net.layers[li].w.a == b.net.layers[li].w.a);
      REQUIRE(a.net.layers[li].b == b.net.layers[li].b);
    }
  }
}

TEST_CASE("accuracy counts argmax-correct predictions") {
  // hand-built model: weights steer everything to class 0 except big x1
  ProxyModel m;
  m.kind = ProxyKind::Logistic;
  m.num_classes = 2;
  Layer l;
  l.w = Matrix(1, 2);
  l.w(0, 0) = 0.0;
  l.w(0, 1) = 1.0;
  l.b = {0.0, 0.0};
  l.act = Act::Softmax;
  m.net.layers.push_back(l);

  // rows: -1 -> class 0, +1 -> class 1; at 0 the tie goes to class 0
  Matrix f(4, 1);
  f(0, 0) = -1.0;
  f(1, 0) = -2.0;
  f(2, 0) = 1.0;
  f(3, 0) = 0.0;
  Dataset eval(f, std::vector<int>{0, 0, 1, 1}, 2, DomainTag::Source, "eval");
  REQUIRE(accuracy(m, eval) == 0.75);  // tie row counts as class 0, wrong

  Dataset all_right(eval.features(), std::vector<int>{0, 0, 1, 0}, 2, DomainTag::Source, "e2");
  REQUIRE(accuracy(m, all_right) == 1.0);
}

TEST_CASE("constant predictor scores 1/C on a balanced set") {
  ProxyModel m;
  m.kind = ProxyKind::Logistic;
  m.num_classes = 4;
  Layer l;
  l.w = Matrix(2, 4);  // all-zero scores: argmax tie -> class 0 always
  l.b.assign(4, 0.0);
  l.act = Act::Softmax;
  m.net.layers.push_back(l);

  Dataset val = blobs(25, 4, 6);
  REQUIRE(accuracy(m, val) == Catch::Approx(0.25));
}

TEST_CASE("dimension mismatch is a shape error") {
  Dataset train = blobs(20, 2, 8);
  ProxyModel m = train_proxy(ProxyKind::Logistic, train, {}, 0);
  GaussMixParams p;
  p.k = 2;
  p.per_class_source = 10;
  p.dim = 3;
  Dataset wrong = gen_shift(p, 0).source;
  REQUIRE_THROWS_AS(accuracy(m, wrong), ShapeError);
}

TEST_CASE("mean utility grows from nested subset to superset") {
  Dataset pool = blobs(120, 2, 9, 0.45);
  Dataset val = blobs(60, 2, 10, 0.45);
  Rng rng(123);
  std::vector<double> small_acc, big_acc;
  for (int trial = 0; trial < 30; ++trial) {
    auto big_rows = rng.sample_without_replacement(pool.n(), 40);
    std::vector<int> small_rows(big_rows.begin(), big_rows.begin() + 8);
    Dataset big = pool.subset(IndexSet(big_rows, pool.n()));
    Dataset small = pool.subset(IndexSet(small_rows, pool.n()));
    big_acc.push_back(accuracy(train_proxy(ProxyKind::Logistic, big, {}, 0), val));
    small_acc.push_back(accuracy(train_proxy(ProxyKind::Logistic, small, {}, 0), val));
  }
  REQUIRE(testutil::mean(big_acc) >= testutil::mean(small_acc));
}

TEST_CASE("logistic training is equivariant to feature permutation") {
  GaussMixParams p;
  p.k = 3;
  p.per_class_source = 30;
  p.dim = 4;
  Dataset train = gen_shift(p, 11).source;
  Dataset val = gen_shift(p, 12).source;

  std::vector<int> perm{2, 0, 3, 1};
  auto permute = [&](const Dataset& ds) {
    Matrix f(ds.n(), ds.dim());
    for (int r = 0; r < ds.n(); ++r)
      for (int c = 0; c < ds.dim(); ++c) f(r, c) = ds.features()(r, perm[static_cast<std::size_t>(c)]);
    return Dataset(std::move(f), ds.labels(), ds.num_classes(), ds.domain_tag(), "perm");
  };

  double base = accuracy(train_proxy(ProxyKind::Logistic, train, {}, 0), val);
  double permuted =
      accuracy(train_proxy(ProxyKind::Logistic, permute(train), {}, 0), permute(val));
  REQUIRE(base == permuted);
}
