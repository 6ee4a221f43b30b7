#pragma once

// Shared test helpers: finite-difference gradient oracle, parameter
// flattening, small stats utilities. Test-only; nothing here is used by the
// library itself.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <vector>

#include "dusel/nn.hpp"

namespace testutil {

inline std::vector<double*> param_ptrs(dusel::MlpNet& net) {
  std::vector<double*> out;
  for (auto& l : net.layers) {
    for (auto& v : l.w.a) out.push_back(&v);
    for (auto& v : l.b) out.push_back(&v);
  }
  return out;
}

inline std::vector<double> flatten_grads(const dusel::Grads& g) {
  std::vector<double> out;
  for (std::size_t i = 0; i < g.w.size(); ++i) {
    out.insert(out.end(), g.w[i].a.begin(), g.w[i].a.end());
    out.insert(out.end(), g.b[i].begin(), g.b[i].end());
  }
  return out;
}

// Central finite differences over the given parameters.
inline std::vector<double> numeric_grad(std::vector<double*> params,
                                        const std::function<double()>& loss,
                                        double h = 1e-5) {
  std::vector<double> out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    double orig = *params[i];
    *params[i] = orig + h;
    double lp = loss();
    *params[i] = orig - h;
    double lm = loss();
    *params[i] = orig;
    out[i] = (lp - lm) / (2.0 * h);
  }
  return out;
}

// max_i |a_i - b_i| / max(1, |a_i|, |b_i|)
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double scale = std::max({1.0, std::fabs(a[i]), std::fabs(b[i])});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / scale);
  }
  return worst;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double variance(const std::vector<double>& v) {
  double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Welch two-sample z statistic for the difference of means.
inline double welch_z(const std::vector<double>& a, const std::vector<double>& b) {
  double se = std::sqrt(variance(a) / static_cast<double>(a.size()) +
                        variance(b) / static_cast<double>(b.size()));
  return (mean(a) - mean(b)) / se;
}

// ---------------------------------------------------------------------------
// Reference IDX encoder: a hand-written big-endian writer kept independent of
// the production parser so round-trip tests check it against something.
// ---------------------------------------------------------------------------

inline void idx_put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

inline std::vector<unsigned char> idx_encode(std::uint32_t magic,
                                             const std::vector<std::uint32_t>& dims,
                                             const std::vector<unsigned char>& payload) {
  std::vector<unsigned char> out;
  idx_put_be32(out, magic);
  for (auto d : dims) idx_put_be32(out, d);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& b) {
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace testutil
