#pragma once

// Dense row-major vectors and matrices, splitmix64, and permutations.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bfi {

/// Thrown when a caller breaks an operation's preconditions (shape
/// mismatches, out-of-range indices, invalid configuration values).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <class... Args>
[[noreturn]] inline void fail(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  throw ContractViolation(os.str());
}

}  // namespace detail

template <class T>
class Vector {
 public:
  using value_type = T;

  Vector() = default;
  explicit Vector(std::size_t n, T fill = T(0)) : data_(n, fill) {}
  Vector(std::initializer_list<T> init) : data_(init) {}
  explicit Vector(std::vector<T> data) : data_(std::move(data)) {}

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  const std::vector<T>& raw() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Vector&) const = default;

 private:
  std::vector<T> data_;
};

template <class T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) detail::fail("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <class T>
std::string shape_of(const Matrix<T>& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

/// Counts scalar multiplies performed by matvec on the current thread while
/// an instance is alive. Scopes nest; the innermost one receives the counts.
class MultiplyCounter {
 public:
  MultiplyCounter() : prev_(current()) { current() = this; }
  ~MultiplyCounter() { current() = prev_; }
  MultiplyCounter(const MultiplyCounter&) = delete;
  MultiplyCounter& operator=(const MultiplyCounter&) = delete;

  std::uint64_t count() const { return count_; }
  void reset() { count_ = 0; }

  static void record(std::uint64_t n) {
    if (auto* c = current()) c->count_ += n;
  }

 private:
  static MultiplyCounter*& current() {
    thread_local MultiplyCounter* active = nullptr;
    return active;
  }

  MultiplyCounter* prev_;
  std::uint64_t count_ = 0;
};

/// out = W * x, writing into a caller-provided span of length W.rows().
template <class T>
void matvec_into(const Matrix<T>& w, std::span<const T> x, std::span<T> out) {
  if (w.cols() != x.size())
    detail::fail("matvec: matrix ", shape_of(w), " vs vector ", x.size());
  if (out.size() != w.rows())
    detail::fail("matvec: output ", out.size(), " vs matrix ", shape_of(w));
  const std::size_t rows = w.rows();
  const std::size_t cols = w.cols();
  const T* wp = w.data();
  for (std::size_t i = 0; i < rows; ++i) {
    const T* r = wp + i * cols;
    T acc = T(0);
    for (std::size_t j = 0; j < cols; ++j) acc += r[j] * x[j];
    out[i] = acc;
  }
  MultiplyCounter::record(static_cast<std::uint64_t>(rows) * cols);
}

template <class T>
Vector<T> matvec(const Matrix<T>& w, const Vector<T>& x) {
  if (w.cols() != x.size())
    detail::fail("matvec: matrix ", shape_of(w), " vs vector ", x.size());
  Vector<T> out(w.rows());
  matvec_into<T>(w, x.span(), out.span());
  return out;
}

/// out += W^T * g.
template <class T>
void matvec_transposed_add(const Matrix<T>& w, std::span<const T> g,
                           std::span<T> out) {
  if (w.rows() != g.size() || w.cols() != out.size())
    detail::fail("matvec_transposed: matrix ", shape_of(w), " vs ", g.size(),
                 " -> ", out.size());
  const std::size_t cols = w.cols();
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const T gi = g[i];
    const T* r = w.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += r[j] * gi;
  }
}

/// G += g * x^T.
template <class T>
void outer_add(std::span<const T> g, std::span<const T> x, Matrix<T>& grad) {
  if (grad.rows() != g.size() || grad.cols() != x.size())
    detail::fail("outer_add: ", g.size(), "x", x.size(), " into ",
                 shape_of(grad));
  for (std::size_t i = 0; i < g.size(); ++i) {
    T* r = grad.data() + i * grad.cols();
    const T gi = g[i];
    for (std::size_t j = 0; j < x.size(); ++j) r[j] += gi * x[j];
  }
}

template <class T>
Vector<T> elementwise_mult(const Vector<T>& a, const Vector<T>& b) {
  if (a.size() != b.size())
    detail::fail("elementwise_mult: lengths ", a.size(), " vs ", b.size());
  Vector<T> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <class T>
void add_into(Vector<T>& acc, const Vector<T>& v) {
  if (acc.size() != v.size())
    detail::fail("add_into: lengths ", acc.size(), " vs ", v.size());
  for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
}

template <class T>
bool all_finite(std::span<const T> xs) {
  return std::all_of(xs.begin(), xs.end(),
                     [](T v) { return std::isfinite(v); });
}

/// splitmix64 (Steele, Lea, Flood 2014). Same seed gives the same stream on
/// every platform.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n): modulo with the short tail rejected.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) detail::fail("SeededRng::below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = next();
    } while (v >= limit);
    return v % n;
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

/// Derives an independent stream seed from a base seed and a stream tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  SeededRng r(seed ^ (stream * 0xD1B54A32D192ED03ULL));
  r.next();
  return r.next();
}

class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<std::size_t> map) : map_(std::move(map)) {
    std::vector<bool> seen(map_.size(), false);
    for (std::size_t v : map_) {
      if (v >= map_.size() || seen[v])
        detail::fail("Permutation: not a bijection on 0..", map_.size() - 1);
      seen[v] = true;
    }
  }

  static Permutation identity(std::size_t n) {
    std::vector<std::size_t> m(n);
    std::iota(m.begin(), m.end(), std::size_t{0});
    return Permutation(std::move(m));
  }

  std::size_t size() const { return map_.size(); }
  std::size_t operator[](std::size_t i) const { return map_[i]; }
  const std::vector<std::size_t>& map() const { return map_; }

  bool is_identity() const {
    for (std::size_t i = 0; i < map_.size(); ++i)
      if (map_[i] != i) return false;
    return true;
  }

  bool operator==(const Permutation&) const = default;

 private:
  std::vector<std::size_t> map_;
};

/// Fisher-Yates over 0..n-1.
inline Permutation sample_permutation(std::size_t n, SeededRng& rng) {
  if (n == 0) detail::fail("sample_permutation: n must be >= 1");
  std::vector<std::size_t> m(n);
  std::iota(m.begin(), m.end(), std::size_t{0});
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i + 1));
    std::swap(m[i], m[j]);
  }
  return Permutation(std::move(m));
}

/// out[i] = x[p[i]].
template <class T>
Vector<T> apply_permutation(const Permutation& p, const Vector<T>& x) {
  if (p.size() != x.size())
    detail::fail("apply_permutation: permutation ", p.size(), " vs vector ",
                 x.size());
  Vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[p[i]];
  return out;
}

inline Permutation invert_permutation(const Permutation& p) {
  std::vector<std::size_t> inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[p[i]] = i;
  return Permutation(std::move(inv));
}

}  // namespace bfi
