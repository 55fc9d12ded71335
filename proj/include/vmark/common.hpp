#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace vmark {

class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid arguments or inconsistent configuration. CLI maps this to exit code 2.
class param_error : public error {
 public:
  using error::error;
};

// Filesystem and format failures. CLI maps this to exit code 1.
class io_error : public error {
 public:
  using error::error;
};

class format_error : public io_error {
 public:
  using io_error::io_error;
};

// Deterministic RNG. std::*_distribution output is implementation-defined, so
// everything downstream of a seed goes through this generator to keep results
// byte-identical across platforms and runs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // index in [0, n); n > 0
  std::uint64_t uniform_index(std::uint64_t n) {
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = n * (UINT64_MAX / n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // standard normal via Box-Muller; two uniforms consumed per call so the
  // stream position never depends on caller history
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // distinct indices in [0, n), ascending
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> pool(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
      const int j = i + static_cast<int>(uniform_index(static_cast<std::uint64_t>(n - i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    std::vector<int> out(pool.begin(), pool.begin() + k);
    std::sort(out.begin(), out.end());
    return out;
  }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    // one splitmix step over a xor-folded pair; used to derive per-item streams
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

inline std::atomic<int>& thread_cap_storage() {
  static std::atomic<int> cap{0};  // 0 = use hardware concurrency
  return cap;
}

inline void set_max_threads(int n) { thread_cap_storage().store(n); }

inline int max_threads() {
  int cap = thread_cap_storage().load();
  if (cap > 0) return cap;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs f(i) for i in [0, n). Work items must write to disjoint locations;
// under that contract results are identical for any thread count.
template <class F>
void parallel_for(std::ptrdiff_t n, F&& f) {
  if (n <= 0) return;
  const int threads = std::min<std::ptrdiff_t>(max_threads(), n) > 1
                          ? static_cast<int>(std::min<std::ptrdiff_t>(max_threads(), n))
                          : 1;
  if (threads == 1) {
    for (std::ptrdiff_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::ptrdiff_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  std::atomic<bool> failed{false};
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::ptrdiff_t i = next.fetch_add(1);
        if (i >= n || failed.load()) return;
        try {
          f(i);
        } catch (...) {
          failed.store(true);
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failed.load()) throw error("parallel_for: worker threw");
}

}  // namespace vmark
