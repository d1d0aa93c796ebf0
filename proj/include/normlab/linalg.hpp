#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "normlab/errors.hpp"

namespace normlab {

using Vec = std::vector<double>;

/// Row-major dense matrix. Each row of a layer matrix is one normalized group.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols, cols};
  }

  friend bool operator==(const Mat&, const Mat&) = default;
};

inline void require_same_length(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": length mismatch (" + std::to_string(a) +
                         " vs " + std::to_string(b) + ")");
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Plain sum of squares, no rescaling: a norm that underflows to zero is
// exactly the 1/||w|| overflow the telemetry is meant to catch.
inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Population convention: divisor n.
inline MeanStd mean_std(std::span<const double> a) {
  if (a.empty()) throw DimensionError("mean_std: empty vector");
  const auto n = static_cast<double>(a.size());
  double m = 0.0;
  for (double x : a) m += x;
  m /= n;
  // constant input: exact zero spread, whatever rounding did to m
  if (std::all_of(a.begin(), a.end(), [&](double x) { return x == a[0]; })) return {a[0], 0.0};
  double ss = 0.0;
  for (double x : a) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / n)};
}

inline double mean(std::span<const double> a) { return mean_std(a).mean; }

inline Vec scaled(std::span<const double> a, double c) {
  Vec out(a.begin(), a.end());
  for (double& x : out) x *= c;
  return out;
}

inline bool all_finite(std::span<const double> a) {
  for (double x : a) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Counter-based generator: draw i is a pure function of (seed, i), so two
/// streams built from the same seed agree draw for draw on every platform.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() {
    ++counter_;
    return mix(seed_ + counter_ * kGolden);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    const unsigned __int128 prod = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::size_t>(prod >> 64);
  }

  /// Standard normal by Box-Muller; consumes two draws, keeps no spare.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  /// Independent child stream; the parent is left untouched.
  RngStream fork(std::uint64_t stream_id) const {
    return RngStream(mix(seed_ ^ mix(stream_id + 0x632BE59BD9B4E019ULL)));
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

/// He initialization, 'fan_out' mode: N(0, 2 / rows) with one row per output unit.
inline Mat he_fanout_init(std::size_t rows, std::size_t cols, RngStream& rng) {
  if (rows == 0 || cols == 0) throw DimensionError("he_fanout_init: empty shape");
  Mat m(rows, cols);
  const double sd = std::sqrt(2.0 / static_cast<double>(rows));
  for (double& x : m.values) x = rng.normal(0.0, sd);
  return m;
}

}  // namespace normlab
