#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dusel/errors.hpp"
#include "dusel/matrix.hpp"
#include "dusel/rng.hpp"

namespace dusel {

// Thrown when selection-path code tries to read quarantined labels.
struct QuarantineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DomainTag : std::uint8_t { Source = 0, Target = 1 };

// Sorted set of distinct indices into a universe of known size.
struct IndexSet {
  std::vector<int> indices;
  int universe_size = 0;

  IndexSet() = default;
  IndexSet(std::vector<int> idx, int universe) : indices(std::move(idx)), universe_size(universe) {
    std::sort(indices.begin(), indices.end());
    validate();
  }

  void validate() const {
    int prev = -1;
    for (int i : indices) {
      if (i < 0 || i >= universe_size)
        throw ParamError("IndexSet: index " + std::to_string(i) + " outside universe of " +
                         std::to_string(universe_size));
      if (i == prev) throw ParamError("IndexSet: duplicate index " + std::to_string(i));
      prev = i;
    }
  }

  int size() const { return static_cast<int>(indices.size()); }
  bool contains(int i) const { return std::binary_search(indices.begin(), indices.end(), i); }

  bool operator==(const IndexSet& o) const {
    return universe_size == o.universe_size && indices == o.indices;
  }
};

inline IndexSet intersect(const IndexSet& a, const IndexSet& b) {
  std::vector<int> out;
  std::set_intersection(a.indices.begin(), a.indices.end(), b.indices.begin(), b.indices.end(),
                        std::back_inserter(out));
  return IndexSet(std::move(out), a.universe_size);
}

// Feature matrix with optional class labels. Labels of an unlabeled target
// pool are kept but quarantined: labels() throws, and only the explicitly
// named oracle_labels() accessor — reserved for evaluation code — can read
// them. Immutable after construction.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Matrix features, std::optional<std::vector<int>> labels, int num_classes,
          DomainTag tag, std::string name)
      : features_(std::move(features)),
        labels_(std::move(labels)),
        num_classes_(num_classes),
        tag_(tag),
        name_(std::move(name)) {
    if (features_.rows < 1) throw ParamError("Dataset: needs at least one row");
    if (labels_) {
      if (static_cast<int>(labels_->size()) != features_.rows)
        throw ParamError("Dataset: label count != row count");
      for (int y : *labels_)
        if (y < 0 || y >= num_classes_)
          throw ParamError("Dataset: label " + std::to_string(y) + " outside [0, " +
                           std::to_string(num_classes_) + ")");
    }
  }

  int n() const { return features_.rows; }
  int dim() const { return features_.cols; }
  int num_classes() const { return num_classes_; }
  DomainTag domain_tag() const { return tag_; }
  const std::string& name() const { return name_; }
  const Matrix& features() const { return features_; }
  bool has_labels() const { return labels_.has_value(); }
  bool is_quarantined() const { return quarantined_; }

  const std::vector<int>& labels() const {
    if (quarantined_)
      throw QuarantineError("labels of '" + name_ +
                            "' are quarantined; evaluation code must use oracle_labels()");
    return require_labels();
  }

  // Evaluation-only accessor. Selection code must never call this; the eval
  // module is its single legitimate caller.
  const std::vector<int>& oracle_labels() const { return require_labels(); }

  Dataset with_quarantined_labels() const {
    Dataset d = *this;
    d.quarantined_ = true;
    return d;
  }

  // Row subset. Labels follow the rows; the quarantine flag is inherited.
  Dataset subset(const IndexSet& idx, const std::string& suffix = "subset") const {
    if (idx.universe_size != n()) throw ParamError("Dataset::subset: universe mismatch");
    if (idx.indices.empty()) throw ParamError("Dataset::subset: empty index set");
    Matrix f = take_rows(features_, idx.indices);
    std::optional<std::vector<int>> lab;
    if (labels_) {
      lab.emplace();
      lab->reserve(idx.indices.size());
      for (int i : idx.indices) lab->push_back((*labels_)[static_cast<std::size_t>(i)]);
    }
    Dataset d(std::move(f), std::move(lab), num_classes_, tag_, name_ + "/" + suffix);
    d.quarantined_ = quarantined_;
    return d;
  }

  std::uint64_t content_hash() const {
    std::uint64_t h = fnv1a64(features_.a.data(), features_.a.size() * sizeof(double));
    if (labels_) h = fnv1a64(labels_->data(), labels_->size() * sizeof(int), h);
    return h;
  }

 private:
  const std::vector<int>& require_labels() const {
    if (!labels_) throw std::logic_error("dataset '" + name_ + "' has no labels");
    return *labels_;
  }

  Matrix features_;
  std::optional<std::vector<int>> labels_;
  int num_classes_ = 0;
  DomainTag tag_ = DomainTag::Source;
  std::string name_;
  bool quarantined_ = false;
};

// Labeled source plus unlabeled (quarantined) target pool and a held-out
// labeled target test set.
struct DomainPair {
  Dataset source;
  Dataset target_pool;
  Dataset target_test;
  std::string shift_descriptor;
};

// ---------------------------------------------------------------------------
// Self-describing binary container + CSV export
// ---------------------------------------------------------------------------

struct ContainerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t kContainerMagic = 0x31534444'4c455355ULL;  // "USEL" "DDS1"
inline constexpr std::uint32_t kContainerVersion = 1;

namespace container_detail {
template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw ContainerError("truncated container header");
  return v;
}
}  // namespace container_detail

// Header carries the producing config hash and seed so every artifact can be
// traced back to its run.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& path,
                         std::uint64_t config_hash = 0, std::uint64_t seed = 0) {
  namespace cd = container_detail;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContainerError("cannot open for write: " + path.string());
  cd::put(os, kContainerMagic);
  cd::put(os, kContainerVersion);
  std::uint32_t flags = 0;
  if (ds.has_labels()) flags |= 1u;
  if (ds.is_quarantined()) flags |= 2u;
  if (ds.domain_tag() == DomainTag::Target) flags |= 4u;
  cd::put(os, flags);
  cd::put(os, static_cast<std::uint64_t>(ds.n()));
  cd::put(os, static_cast<std::uint64_t>(ds.dim()));
  cd::put(os, static_cast<std::uint32_t>(ds.num_classes()));
  cd::put(os, config_hash);
  cd::put(os, seed);
  cd::put(os, static_cast<std::uint32_t>(ds.name().size()));
  os.write(ds.name().data(), static_cast<std::streamsize>(ds.name().size()));
  os.write(reinterpret_cast<const char*>(ds.features().a.data()),
           static_cast<std::streamsize>(ds.features().a.size() * sizeof(double)));
  if (ds.has_labels()) {
    const auto& lab = ds.oracle_labels();
    os.write(reinterpret_cast<const char*>(lab.data()),
             static_cast<std::streamsize>(lab.size() * sizeof(int)));
  }
  if (!os) throw ContainerError("write failed: " + path.string());
}

inline Dataset load_dataset(const std::filesystem::path& path, std::uint64_t* config_hash = nullptr,
                            std::uint64_t* seed = nullptr) {
  namespace cd = container_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContainerError("cannot open: " + path.string());
  if (cd::get<std::uint64_t>(is) != kContainerMagic)
    throw ContainerError("bad container magic: " + path.string());
  if (cd::get<std::uint32_t>(is) != kContainerVersion)
    throw ContainerError("unsupported container version: " + path.string());
  std::uint32_t flags = cd::get<std::uint32_t>(is);
  auto n = static_cast<int>(cd::get<std::uint64_t>(is));
  auto d = static_cast<int>(cd::get<std::uint64_t>(is));
  auto c = static_cast<int>(cd::get<std::uint32_t>(is));
  std::uint64_t ch = cd::get<std::uint64_t>(is);
  std::uint64_t sd = cd::get<std::uint64_t>(is);
  if (config_hash) *config_hash = ch;
  if (seed) *seed = sd;
  std::uint32_t name_len = cd::get<std::uint32_t>(is);
  std::string name(name_len, '\0');
  if (!is.read(name.data(), name_len)) throw ContainerError("truncated name: " + path.string());

  Matrix f(n, d);
  if (!is.read(reinterpret_cast<char*>(f.a.data()),
               static_cast<std::streamsize>(f.a.size() * sizeof(double))))
    throw ContainerError("truncated feature payload: " + path.string());
  std::optional<std::vector<int>> labels;
  if (flags & 1u) {
    labels.emplace(static_cast<std::size_t>(n));
    if (!is.read(reinterpret_cast<char*>(labels->data()),
                 static_cast<std::streamsize>(labels->size() * sizeof(int))))
      throw ContainerError("truncated label payload: " + path.string());
  }
  DomainTag tag = (flags & 4u) ? DomainTag::Target : DomainTag::Source;
  Dataset ds(std::move(f), std::move(labels), c, tag, name);
  return (flags & 2u) ? ds.with_quarantined_labels() : ds;
}

inline void export_csv(const Dataset& ds, const std::filesystem::path& path,
                       bool with_oracle_labels = false) {
  std::ofstream os(path);
  if (!os) throw ContainerError("cannot open for write: " + path.string());
  os.precision(17);
  for (int c = 0; c < ds.dim(); ++c) os << (c ? "," : "") << "x" << c;
  bool labeled = ds.has_labels() && (with_oracle_labels || !ds.is_quarantined());
  if (labeled) os << ",label";
  os << "\n";
  for (int r = 0; r < ds.n(); ++r) {
    for (int c = 0; c < ds.dim(); ++c) os << (c ? "," : "") << ds.features()(r, c);
    if (labeled) os << "," << ds.oracle_labels()[static_cast<std::size_t>(r)];
    os << "\n";
  }
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

inline std::pair<Dataset, Dataset> split(const Dataset& ds, std::pair<int, int> ratio,
                                         std::uint64_t seed) {
  auto [ra, rb] = ratio;
  if (ra < 1 || rb < 1) throw ParamError("split: ratio parts must be >= 1");
  if (ds.n() < ra + rb)
    throw ParamError("split: dataset of " + std::to_string(ds.n()) +
                     " rows too small for ratio " + std::to_string(ra) + ":" + std::to_string(rb));
  int n = ds.n();
  auto na = static_cast<int>(
      std::llround(static_cast<double>(n) * ra / (static_cast<double>(ra) + rb)));
  na = std::clamp(na, 1, n - 1);

  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, 0x5917));
  rng.shuffle(perm);
  std::vector<int> first(perm.begin(), perm.begin() + na);
  std::vector<int> second(perm.begin() + na, perm.end());
  return {ds.subset(IndexSet(std::move(first), n), "a"),
          ds.subset(IndexSet(std::move(second), n), "b")};
}

// ---------------------------------------------------------------------------
// White-noise corruption
// ---------------------------------------------------------------------------

// Replaces floor(fraction * n) rows with i.i.d. N(0, sigma^2) samples.
inline std::pair<Dataset, IndexSet> corrupt_white_noise(const Dataset& pool, double fraction,
                                                        double sigma, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0)
    throw ParamError("corrupt_white_noise: fraction must be in [0, 1]");
  if (sigma <= 0.0) throw ParamError("corrupt_white_noise: sigma must be > 0");
  int n = pool.n();
  int m = static_cast<int>(std::floor(fraction * n));
  Rng rng(derive_seed(seed, 0xc0de));
  std::vector<int> rows = rng.sample_without_replacement(n, m);
  IndexSet corrupted(rows, n);

  if (m == 0) return {pool, corrupted};

  Matrix f = pool.features();
  for (int r : corrupted.indices) {
    Rng row_rng(derive_seed(seed, 0x4015e, static_cast<std::uint64_t>(r)));
    double* p = f.row(r);
    for (int c = 0; c < f.cols; ++c) p[c] = row_rng.normal(0.0, sigma);
  }
  std::optional<std::vector<int>> labels;
  if (pool.has_labels()) labels = pool.oracle_labels();
  Dataset out(std::move(f), std::move(labels), pool.num_classes(), pool.domain_tag(),
              pool.name());
  if (pool.is_quarantined()) out = out.with_quarantined_labels();
  return {std::move(out), corrupted};
}

}  // namespace dusel
