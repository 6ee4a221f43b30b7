#pragma once

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "dusel/dataset.hpp"
#include "dusel/rng.hpp"

namespace dusel {

// Synthetic domain-shift generators. All are bit-reproducible for a fixed
// (params, seed) and produce unit-scale features by construction, so no
// extra normalization pass is applied.

enum class ShiftKind { TwoMoonsRotate, GaussMixShift, LabelMismatch };

// Two interleaved half-moons; the target domain is the source distribution
// rotated about the origin by theta.
struct MoonsParams {
  double theta = 0.0;
  double noise_sigma = 0.1;
  int n_source = 500;
  int n_pool = 500;
  int n_test = 500;
};

// K Gaussian clusters on a circle; target centers are rotated/translated.
struct GaussMixParams {
  int k = 4;
  int per_class_source = 50;
  int per_class_pool = 50;
  int per_class_test = 50;
  int dim = 2;
  double radius = 2.0;
  double sigma = 0.35;
  double shift_angle = 0.0;
  std::vector<double> shift;  // optional translation, padded with zeros
};

// Disjoint label spaces: source draws from classes [0, source_classes),
// target from the remaining ones (remapped to a fresh 0..C_t-1 range).
struct LabelMismatchParams {
  int classes_total = 10;
  int source_classes = 5;
  int per_class_source = 40;
  int per_class_pool = 40;
  std::vector<int> per_class_pool_counts;  // per target class; overrides per_class_pool
  int per_class_test = 40;
  int dim = 2;
  double radius = 2.5;
  double sigma = 0.3;
};

using GeneratorSpec = std::variant<MoonsParams, GaussMixParams, LabelMismatchParams>;

inline ShiftKind spec_kind(const GeneratorSpec& spec) {
  return static_cast<ShiftKind>(spec.index());
}

namespace gen_detail {

inline void rotate2(double& x, double& y, double theta) {
  double c = std::cos(theta), s = std::sin(theta);
  double nx = c * x - s * y;
  double ny = s * x + c * y;
  x = nx;
  y = ny;
}

inline Dataset make_moons(int n, double theta, double sigma, Rng& rng, DomainTag tag,
                          const std::string& name) {
  Matrix f(n, 2);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    int cls = rng.uniform_int(0, 1);
    double t = rng.uniform(0.0, std::numbers::pi);
    double x = cls == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double y = cls == 0 ? std::sin(t) : 0.5 - std::sin(t);
    x += rng.normal(0.0, sigma);
    y += rng.normal(0.0, sigma);
    if (theta != 0.0) rotate2(x, y, theta);
    f(i, 0) = x;
    f(i, 1) = y;
    labels[static_cast<std::size_t>(i)] = cls;
  }
  return Dataset(std::move(f), std::move(labels), 2, tag, name);
}

inline std::vector<double> class_center(int cls, int k, int dim, double radius) {
  std::vector<double> c(static_cast<std::size_t>(dim), 0.0);
  double angle = 2.0 * std::numbers::pi * cls / k;
  c[0] = radius * std::cos(angle);
  if (dim > 1) c[1] = radius * std::sin(angle);
  return c;
}

inline Dataset make_mixture(const std::vector<int>& class_ids, const std::vector<int>& counts,
                            int k, int dim, double radius, double sigma, double rot,
                            const std::vector<double>& shift, const std::vector<int>& label_map,
                            int num_classes, Rng& rng, DomainTag tag, const std::string& name) {
  int n = 0;
  for (int c : counts) n += c;
  Matrix f(n, dim);
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(n));
  int row = 0;
  for (std::size_t ci = 0; ci < class_ids.size(); ++ci) {
    auto center = class_center(class_ids[ci], k, dim, radius);
    for (int j = 0; j < counts[ci]; ++j, ++row) {
      double* p = f.row(row);
      for (int dcol = 0; dcol < dim; ++dcol) p[dcol] = center[static_cast<std::size_t>(dcol)] + rng.normal(0.0, sigma);
      if (rot != 0.0 && dim >= 2) rotate2(p[0], p[1], rot);
      for (std::size_t s = 0; s < shift.size() && s < static_cast<std::size_t>(dim); ++s)
        p[s] += shift[s];
      labels.push_back(label_map[ci]);
    }
  }
  return Dataset(std::move(f), std::move(labels), num_classes, tag, name);
}

}  // namespace gen_detail

inline DomainPair gen_shift(const MoonsParams& p, std::uint64_t seed) {
  if (p.n_source < 2 || p.n_pool < 2 || p.n_test < 2)
    throw ParamError("moons: sample counts must be >= 2");
  if (p.noise_sigma < 0) throw ParamError("moons: negative noise sigma");
  Rng rs(derive_seed(seed, 1));
  Rng rp(derive_seed(seed, 2));
  Rng rt(derive_seed(seed, 3));
  DomainPair pair;
  pair.source = gen_detail::make_moons(p.n_source, 0.0, p.noise_sigma, rs, DomainTag::Source,
                                       "moons-source");
  pair.target_pool = gen_detail::make_moons(p.n_pool, p.theta, p.noise_sigma, rp,
                                            DomainTag::Target, "moons-pool")
                         .with_quarantined_labels();
  pair.target_test =
      gen_detail::make_moons(p.n_test, p.theta, p.noise_sigma, rt, DomainTag::Target, "moons-test");
  std::ostringstream desc;
  desc << "two_moons_rotate theta=" << p.theta << " sigma=" << p.noise_sigma;
  pair.shift_descriptor = desc.str();
  return pair;
}

inline DomainPair gen_shift(const GaussMixParams& p, std::uint64_t seed) {
  if (p.k < 2) throw ParamError("gaussmix: k must be >= 2");
  if (p.per_class_source < 1 || p.per_class_pool < 1 || p.per_class_test < 1)
    throw ParamError("gaussmix: per-class counts must be positive");
  if (p.dim < 2) throw ParamError("gaussmix: dim must be >= 2");

  std::vector<int> ids(static_cast<std::size_t>(p.k));
  std::vector<int> identity(static_cast<std::size_t>(p.k));
  for (int c = 0; c < p.k; ++c) ids[static_cast<std::size_t>(c)] = identity[static_cast<std::size_t>(c)] = c;

  auto counts = [&](int per) { return std::vector<int>(static_cast<std::size_t>(p.k), per); };
  Rng rs(derive_seed(seed, 1));
  Rng rp(derive_seed(seed, 2));
  Rng rt(derive_seed(seed, 3));

  DomainPair pair;
  pair.source = gen_detail::make_mixture(ids, counts(p.per_class_source), p.k, p.dim, p.radius,
                                         p.sigma, 0.0, {}, identity, p.k, rs, DomainTag::Source,
                                         "gaussmix-source");
  pair.target_pool =
      gen_detail::make_mixture(ids, counts(p.per_class_pool), p.k, p.dim, p.radius, p.sigma,
                               p.shift_angle, p.shift, identity, p.k, rp, DomainTag::Target,
                               "gaussmix-pool")
          .with_quarantined_labels();
  pair.target_test = gen_detail::make_mixture(ids, counts(p.per_class_test), p.k, p.dim, p.radius,
                                              p.sigma, p.shift_angle, p.shift, identity, p.k, rt,
                                              DomainTag::Target, "gaussmix-test");
  std::ostringstream desc;
  desc << "gauss_mix_shift k=" << p.k << " angle=" << p.shift_angle;
  pair.shift_descriptor = desc.str();
  return pair;
}

inline DomainPair gen_shift(const LabelMismatchParams& p, std::uint64_t seed) {
  if (p.classes_total < 2) throw ParamError("label_mismatch: classes_total must be >= 2");
  if (p.source_classes < 1 || p.source_classes >= p.classes_total)
    throw ParamError("label_mismatch: source_classes must split the class set in two");
  if (p.per_class_source < 1 || p.per_class_pool < 1 || p.per_class_test < 1)
    throw ParamError("label_mismatch: per-class counts must be positive");
  for (int c : p.per_class_pool_counts)
    if (c < 1) throw ParamError("label_mismatch: per-class pool counts must be positive");
  if (p.dim < 2) throw ParamError("label_mismatch: dim must be >= 2");

  int target_classes = p.classes_total - p.source_classes;
  if (!p.per_class_pool_counts.empty() &&
      static_cast<int>(p.per_class_pool_counts.size()) != target_classes)
    throw ParamError("label_mismatch: per_class_pool_counts length != target class count");

  std::vector<int> src_ids, tgt_ids, src_map, tgt_map;
  for (int c = 0; c < p.source_classes; ++c) {
    src_ids.push_back(c);
    src_map.push_back(c);
  }
  for (int c = p.source_classes; c < p.classes_total; ++c) {
    tgt_ids.push_back(c);
    tgt_map.push_back(c - p.source_classes);  // fresh 0..C_t-1 range
  }

  std::vector<int> src_counts(src_ids.size(), p.per_class_source);
  std::vector<int> pool_counts = p.per_class_pool_counts.empty()
                                     ? std::vector<int>(tgt_ids.size(), p.per_class_pool)
                                     : p.per_class_pool_counts;
  std::vector<int> test_counts(tgt_ids.size(), p.per_class_test);

  Rng rs(derive_seed(seed, 1));
  Rng rp(derive_seed(seed, 2));
  Rng rt(derive_seed(seed, 3));

  DomainPair pair;
  pair.source = gen_detail::make_mixture(src_ids, src_counts, p.classes_total, p.dim, p.radius,
                                         p.sigma, 0.0, {}, src_map, p.source_classes, rs,
                                         DomainTag::Source, "labelmismatch-source");
  pair.target_pool = gen_detail::make_mixture(tgt_ids, pool_counts, p.classes_total, p.dim,
                                              p.radius, p.sigma, 0.0, {}, tgt_map, target_classes,
                                              rp, DomainTag::Target, "labelmismatch-pool")
                         .with_quarantined_labels();
  pair.target_test = gen_detail::make_mixture(tgt_ids, test_counts, p.classes_total, p.dim,
                                              p.radius, p.sigma, 0.0, {}, tgt_map, target_classes,
                                              rt, DomainTag::Target, "labelmismatch-test");

  std::ostringstream desc;
  desc << "label_mismatch source_classes=0-" << p.source_classes - 1 << " target_classes="
       << p.source_classes << "-" << p.classes_total - 1 << " remap=";
  for (std::size_t i = 0; i < tgt_ids.size(); ++i)
    desc << (i ? ";" : "") << tgt_ids[i] << "->" << tgt_map[i];
  pair.shift_descriptor = desc.str();
  return pair;
}

inline DomainPair gen_shift(const GeneratorSpec& spec, std::uint64_t seed) {
  return std::visit([&](const auto& p) { return gen_shift(p, seed); }, spec);
}

}  // namespace dusel
