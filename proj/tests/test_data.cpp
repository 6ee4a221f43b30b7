#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <set>

#include "dusel/dataset.hpp"
#include "dusel/generators.hpp"
#include "dusel/idx.hpp"
#include "testutil.hpp"

using namespace dusel;
namespace fs = std::filesystem;

namespace {

std::vector<double> column(const Matrix& m, int c) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.rows));
  for (int r = 0; r < m.rows; ++r) out.push_back(m(r, c));
  return out;
}

// counts per-coordinate Welch rejections at alpha = 0.01
int mean_shift_rejections(const Matrix& a, const Matrix& b) {
  int rejections = 0;
  for (int c = 0; c < a.cols; ++c)
    if (std::fabs(testutil::welch_z(column(a, c), column(b, c))) > 2.5758) ++rejections;
  return rejections;
}

}  // namespace

TEST_CASE("moons with zero rotation are indistinguishable across domains") {
  int rejections = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto pair = gen_shift(MoonsParams{0.0, 0.1, 500, 500, 16}, seed);
    rejections += mean_shift_rejections(pair.source.features(), pair.target_pool.features());
  }
  // 40 tests at alpha=0.01; a handful of false rejections would be ~5-sigma
  REQUIRE(rejections <= 3);
}

TEST_CASE("half-turn rotation is undone by negating both coordinates") {
  int rejections = 0;
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    auto pair = gen_shift(MoonsParams{std::numbers::pi, 0.1, 500, 500, 16}, seed);
    Matrix back = pair.target_pool.features();
    for (double& v : back.a) v = -v;
    rejections += mean_shift_rejections(pair.source.features(), back);
  }
  REQUIRE(rejections <= 3);
}

TEST_CASE("rotation actually shifts the pool") {
  auto pair = gen_shift(MoonsParams{std::numbers::pi / 2, 0.1, 800, 800, 16}, 5);
  REQUIRE(mean_shift_rejections(pair.source.features(), pair.target_pool.features()) > 0);
}

TEST_CASE("generators are bit-reproducible per seed") {
  auto a = gen_shift(MoonsParams{0.7, 0.1, 64, 64, 16}, 99);
  auto b = gen_shift(MoonsParams{0.7, 0.1, 64, 64, 16}, 99);
  REQUIRE(a.source.features().a == b.source.features().a);
  REQUIRE(a.target_pool.features().a == b.target_pool.features().a);
  REQUIRE(a.target_test.oracle_labels() == b.target_test.oracle_labels());
}

TEST_CASE("label mismatch produces disjoint original class sets") {
  LabelMismatchParams p;
  p.classes_total = 10;
  p.source_classes = 5;
  auto pair = gen_shift(p, 3);

  // source uses original ids 0..4
  std::set<int> src(pair.source.oracle_labels().begin(), pair.source.oracle_labels().end());
  REQUIRE(*src.rbegin() <= 4);

  // target ids were remapped; recover originals through the descriptor map
  REQUIRE(pair.shift_descriptor.find("remap=5->0;6->1;7->2;8->3;9->4") != std::string::npos);
  std::set<int> tgt_original;
  for (int y : pair.target_pool.oracle_labels()) tgt_original.insert(y + 5);
  for (int orig : tgt_original) REQUIRE(src.count(orig) == 0);

  REQUIRE(pair.source.num_classes() == 5);
  REQUIRE(pair.target_pool.num_classes() == 5);
}

TEST_CASE("generator parameter validation") {
  GaussMixParams bad;
  bad.k = 1;
  REQUIRE_THROWS_AS(gen_shift(bad, 0), ParamError);
  GaussMixParams neg;
  neg.per_class_pool = -5;
  REQUIRE_THROWS_AS(gen_shift(neg, 0), ParamError);
}

TEST_CASE("quarantined pool labels are unreadable except through the oracle") {
  auto pair = gen_shift(MoonsParams{0.3, 0.1, 32, 32, 16}, 1);
  REQUIRE(pair.target_pool.has_labels());
  REQUIRE(pair.target_pool.is_quarantined());
  REQUIRE_THROWS_AS(pair.target_pool.labels(), QuarantineError);
  REQUIRE(pair.target_pool.oracle_labels().size() == 32);
  // quarantine survives subsetting
  auto sub = pair.target_pool.subset(IndexSet({0, 3, 5}, 32));
  REQUIRE_THROWS_AS(sub.labels(), QuarantineError);
  // source labels stay readable
  REQUIRE(pair.source.labels().size() == 32);
}

TEST_CASE("idx round trip against the reference encoder") {
  auto dir = fs::temp_directory_path();
  auto img_path = dir / "dusel_idx_img.bin";
  auto lab_path = dir / "dusel_idx_lab.bin";

  std::vector<unsigned char> pixels(32);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<unsigned char>(i * 8);
  testutil::write_bytes(img_path, testutil::idx_encode(0x00000803, {2, 4, 4}, pixels));
  testutil::write_bytes(lab_path, testutil::idx_encode(0x00000801, {2}, {3, 7}));

  Dataset ds = load_idx(img_path, lab_path);
  REQUIRE(ds.n() == 2);
  REQUIRE(ds.dim() == 16);
  REQUIRE(ds.labels() == std::vector<int>{3, 7});
  for (std::size_t i = 0; i < pixels.size(); ++i)
    REQUIRE(ds.features().a[i] == Catch::Approx(pixels[i] / 255.0));

  fs::remove(img_path);
  fs::remove(lab_path);
}

TEST_CASE("idx failure modes carry byte offsets") {
  auto dir = fs::temp_directory_path();
  auto path = dir / "dusel_idx_bad.bin";

  SECTION("bad magic") {
    testutil::write_bytes(path, testutil::idx_encode(0x00000805, {1, 2, 2}, {0, 0, 0, 0}));
    REQUIRE_THROWS_AS(load_idx(path), IdxBadMagic);
  }
  SECTION("truncated payload reports expected vs actual") {
    auto bytes = testutil::idx_encode(0x00000803, {2, 4, 4}, std::vector<unsigned char>(32, 1));
    bytes.pop_back();
    testutil::write_bytes(path, bytes);
    try {
      load_idx(path);
      FAIL("expected IdxTruncated");
    } catch (const IdxTruncated& e) {
      std::string msg = e.what();
      REQUIRE(msg.find("expected 32") != std::string::npos);
      REQUIRE(msg.find("found 31") != std::string::npos);
      REQUIRE(msg.find("offset") != std::string::npos);
    }
  }
  SECTION("label count mismatch") {
    auto img_path = dir / "dusel_idx_img2.bin";
    testutil::write_bytes(img_path,
                          testutil::idx_encode(0x00000803, {2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
    testutil::write_bytes(path, testutil::idx_encode(0x00000801, {3}, {1, 2, 3}));
    REQUIRE_THROWS_AS(load_idx(img_path, path), IdxCountMismatch);
    fs::remove(img_path);
  }
  fs::remove(path);
}

TEST_CASE("white-noise corruption") {
  auto pair = gen_shift(MoonsParams{0.0, 0.1, 16, 100, 16}, 11);
  const Dataset& pool = pair.target_pool;

  SECTION("fraction zero is a bit-for-bit no-op") {
    auto [out, idx] = corrupt_white_noise(pool, 0.0, 1.0, 4);
    REQUIRE(idx.size() == 0);
    REQUIRE(out.features().a == pool.features().a);
  }
  SECTION("fraction one corrupts every row") {
    auto [out, idx] = corrupt_white_noise(pool, 1.0, 1.0, 4);
    REQUIRE(idx.size() == 100);
    int changed = 0;
    for (int r = 0; r < pool.n(); ++r)
      if (out.features()(r, 0) != pool.features()(r, 0)) ++changed;
    REQUIRE(changed == 100);
  }
  SECTION("different seeds corrupt different rows") {
    auto [out1, idx1] = corrupt_white_noise(pool, 0.3, 1.0, 4);
    auto [out2, idx2] = corrupt_white_noise(pool, 0.3, 1.0, 5);
    REQUIRE(idx1.size() == 30);
    REQUIRE(idx2.size() == 30);
    REQUIRE(idx1.indices != idx2.indices);
  }
  SECTION("fraction outside [0,1] is rejected") {
    REQUIRE_THROWS_AS(corrupt_white_noise(pool, 1.5, 1.0, 4), ParamError);
  }
}

TEST_CASE("split sizes follow the ratio") {
  auto pair = gen_shift(MoonsParams{0.0, 0.1, 5000, 16, 16}, 21);
  auto [train, val] = split(pair.source, {4, 1}, 7);
  REQUIRE(train.n() == 4000);
  REQUIRE(val.n() == 1000);

  auto small = pair.source.subset(IndexSet({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 5000));
  auto [a, b] = split(small, {1, 1}, 7);
  REQUIRE(a.n() == 5);
  REQUIRE(b.n() == 5);

  // union of the halves is the original multiset of rows
  std::multiset<double> seen, expect;
  for (int r = 0; r < a.n(); ++r) seen.insert(a.features()(r, 0));
  for (int r = 0; r < b.n(); ++r) seen.insert(b.features()(r, 0));
  for (int r = 0; r < small.n(); ++r) expect.insert(small.features()(r, 0));
  REQUIRE(seen == expect);

  auto [a2, b2] = split(small, {1, 1}, 7);
  REQUIRE(a2.features().a == a.features().a);
  REQUIRE(b2.features().a == b.features().a);

  REQUIRE_THROWS_AS(split(small.subset(IndexSet({0, 1}, 10)), {4, 1}, 0), ParamError);
}

TEST_CASE("dataset container round trip and csv export") {
  auto pair = gen_shift(MoonsParams{0.5, 0.1, 24, 24, 16}, 2);
  auto dir = fs::temp_directory_path();
  auto bin = dir / "dusel_ds.dsb";
  auto csv = dir / "dusel_ds.csv";

  save_dataset(pair.target_pool, bin, 0xabcdef, 42);
  std::uint64_t hash = 0, seed = 0;
  Dataset back = load_dataset(bin, &hash, &seed);
  REQUIRE(hash == 0xabcdef);
  REQUIRE(seed == 42);
  REQUIRE(back.n() == 24);
  REQUIRE(back.is_quarantined());
  REQUIRE(back.features().a == pair.target_pool.features().a);
  REQUIRE(back.oracle_labels() == pair.target_pool.oracle_labels());
  REQUIRE(back.content_hash() == pair.target_pool.content_hash());

  export_csv(pair.source, csv);
  std::ifstream is(csv);
  std::string header;
  std::getline(is, header);
  REQUIRE(header == "x0,x1,label");
  int lines = 0;
  for (std::string line; std::getline(is, line);) ++lines;
  REQUIRE(lines == 24);

  fs::remove(bin);
  fs::remove(csv);
}

TEST_CASE("index set invariants") {
  REQUIRE_THROWS_AS(IndexSet({0, 0, 1}, 5), ParamError);
  REQUIRE_THROWS_AS(IndexSet({0, 9}, 5), ParamError);
  IndexSet s({4, 1, 3}, 5);
  REQUIRE(s.indices == std::vector<int>{1, 3, 4});  // sorted on construction
  REQUIRE(intersect(s, IndexSet({1, 2, 4}, 5)).indices == std::vector<int>{1, 4});
}
