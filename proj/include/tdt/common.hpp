#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using DenseVector = std::vector<double>;

// Row-major dense matrix. Vectors are treated as rows, so a d-vector times a
// d x m matrix yields an m-vector.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

// x (len rows) * M -> len cols
inline DenseVector row_times(std::span<const double> x, const Matrix& m) {
  DenseVector out(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* r = m.data.data() + i * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) out[j] += xi * r[j];
  }
  return out;
}

// M * y (len cols) -> len rows
inline DenseVector times_col(const Matrix& m, std::span<const double> y) {
  DenseVector out(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* r = m.data.data() + i * m.cols;
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) s += r[j] * y[j];
    out[i] = s;
  }
  return out;
}

// m += a^T b
inline void add_outer(Matrix& m, std::span<const double> a, std::span<const double> b, double scale = 1.0) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double ai = scale * a[i];
    if (ai == 0.0) continue;
    double* r = m.data.data() + i * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) r[j] += ai * b[j];
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(std::span<const double> a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

/// Cosine similarity; throws on a zero-norm input or a dimension mismatch.
inline double similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("similarity: dimension mismatch");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw Error("similarity: zero-norm input");
  double c = dot(a, b) / (na * nb);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return c;
}

inline double distance(std::span<const double> a, std::span<const double> b) { return 1.0 - similarity(a, b); }

// Deterministic RNG helpers. std::uniform_real_distribution is implementation
// defined, so snapshots and curves use these to stay bit-stable across
// standard libraries.
using Rng = std::mt19937_64;

/// Stateless 64-bit mixer; derives independent stream seeds from (seed, index).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Unbiased integer in [0, n) by rejection.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace tdt
