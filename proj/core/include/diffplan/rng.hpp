#pragma once

#include <cstdint>
#include <random>

namespace diffplan {

// Deterministic random stream. Raw mt19937_64 output is mapped to doubles
// in-house so sequences do not depend on the standard library's
// distribution internals.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1), 53 mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second draw of each pair is cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(t);
    has_cached_ = true;
    return r * std::cos(t);
  }

  // Uniform integer in [0, n). Lemire's multiply-shift map; bias is
  // below 2^-64 for desk-scale n.
  size_t index(size_t n) {
    return static_cast<size_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Derive an independent child stream. Advances this stream once.
  RngStream split(uint64_t salt) {
    return RngStream(next_u64() ^ (salt * 0x9E3779B97F4A7C15ULL + 0x7F4A7C15ULL));
  }

 private:
  std::mt19937_64 gen_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace diffplan
