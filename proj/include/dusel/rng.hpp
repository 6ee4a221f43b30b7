#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <thread>
#include <vector>
#include <random>

namespace dusel {

// splitmix64 finalizer; used both as a hash mixer and for seed derivation.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from (seed, a, b, c). Every sampler,
// worker and record gets its own derived seed so results never depend on
// execution order or worker count.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ (a + 0x100000001b3ULL));
  h = mix64(h ^ (b + 0x14650fb0739d0383ULL));
  h = mix64(h ^ (c + 0x2545f4914f6cdd1dULL));
  return h;
}

// FNV-1a over raw bytes; stable across runs and platforms (unlike std::hash).
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic RNG. The engine (mt19937_64) is fully specified by the
// standard and the distributions below are hand-rolled, so streams are
// bit-reproducible across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(mix64(seed)) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive range, rejection sampling keeps it unbiased
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    std::uint64_t span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
    if (span == 0) return static_cast<int>(next_u64());  // full 64-bit range, unreachable for int
    std::uint64_t t = (0 - span) % span;                 // 2^64 mod span
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x < t);
    return static_cast<int>(lo + static_cast<std::int64_t>(x % span));
  }

  // Box-Muller (cosine branch only, stateless)
  double normal(double mean = 0.0, double sd = 1.0) {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    return mean + sd * z;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from {0, ..., n-1}, in draw order (partial Fisher-Yates)
  std::vector<int> sample_without_replacement(int n, int k) {
    if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < k; ++i) {
      int j = uniform_int(i, n - 1);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

 private:
  std::mt19937_64 eng_;
};

// Chunked parallel map over [0, n). Each index must be a pure function of its
// own derived seed, which makes the result independent of the worker count.
template <typename Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  workers = std::min(workers, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (int i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace dusel
