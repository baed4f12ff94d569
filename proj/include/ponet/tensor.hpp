#pragma once

// Minimal dense tensor arithmetic: row-major, rank 1-3, float or double.
// Every op validates shapes and output finiteness; all ops are pure.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ponet/common.hpp"

namespace ponet {

template <class T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<size_t>(count(shape_)), T(0));
  }

  Tensor(std::initializer_list<int64_t> shape)
      : Tensor(std::vector<int64_t>(shape)) {}

  static Tensor from(std::vector<int64_t> shape, std::vector<T> data) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.validate_shape();
    if (count(t.shape_) != static_cast<int64_t>(data.size()))
      throw ShapeError("tensor data length does not match shape product");
    t.data_ = std::move(data);
    return t;
  }

  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  const std::vector<int64_t>& shape() const { return shape_; }
  bool empty() const { return data_.empty(); }

  // Rank-2 conveniences.
  int64_t rows() const { return dim(0); }
  int64_t cols() const { return dim(rank() - 1); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * cols() + j)]; }
  const T& at(int64_t i, int64_t j) const {
    return data_[static_cast<size_t>(i * cols() + j)];
  }

  std::span<T> row(int64_t i) {
    return std::span<T>(data_.data() + i * cols(), static_cast<size_t>(cols()));
  }
  std::span<const T> row(int64_t i) const {
    return std::span<const T>(data_.data() + i * cols(),
                              static_cast<size_t>(cols()));
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(T v) { data_.assign(data_.size(), v); }

 private:
  void validate_shape() const {
    if (shape_.empty() || shape_.size() > 3)
      throw ShapeError("tensor rank must be 1..3");
    for (int64_t d : shape_)
      if (d < 0) throw ShapeError("negative dimension");
  }

  static int64_t count(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
  }

  std::vector<int64_t> shape_;
  std::vector<T> data_;
};

template <class T>
void check_finite(const Tensor<T>& t, const char* what) {
  for (int64_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t[i]))
      throw NumericError(std::string("non-finite value in ") + what);
}

// c = a[m x k] * b[k x n]. The counter, when given, records m*k*n mults.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b,
                 OpCounter* counter = nullptr) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul expects rank-2 tensors");
  if (a.cols() != b.rows())
    throw ShapeError("matmul inner dimensions mismatch: " +
                     std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()));
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> c({m, n});
  for (int64_t i = 0; i < m; ++i) {
    T* ci = c.data() + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const T aik = a.at(i, kk);
      const T* bk = b.data() + kk * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  if (counter) counter->add(static_cast<unsigned long long>(m * k * n));
  check_finite(c, "matmul output");
  return c;
}

// c = a * b^T, used by backward passes (not part of the counted forward).
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt dimension mismatch");
  const int64_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor<T> c({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      T acc = 0;
      const T* ai = a.data() + i * k;
      const T* bj = b.data() + j * k;
      for (int64_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
      c.at(i, j) = acc;
    }
  check_finite(c, "matmul_nt output");
  return c;
}

// c = a^T * b.
template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn dimension mismatch");
  const int64_t m = a.cols(), k = a.rows(), n = b.cols();
  Tensor<T> c({m, n});
  for (int64_t kk = 0; kk < k; ++kk) {
    const T* ak = a.data() + kk * m;
    const T* bk = b.data() + kk * n;
    for (int64_t i = 0; i < m; ++i) {
      T* ci = c.data() + i * n;
      const T aki = ak[i];
      for (int64_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
  check_finite(c, "matmul_tn output");
  return c;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw ShapeError("add shape mismatch");
  Tensor<T> c = a;
  for (int64_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw ShapeError("sub shape mismatch");
  Tensor<T> c = a;
  for (int64_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  return c;
}

// Hadamard product; counted as one mult per element when a counter is given.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b,
              OpCounter* counter = nullptr) {
  if (!a.same_shape(b)) throw ShapeError("mul shape mismatch");
  Tensor<T> c = a;
  for (int64_t i = 0; i < c.size(); ++i) c[i] *= b[i];
  if (counter) counter->add(static_cast<unsigned long long>(a.size()));
  return c;
}

template <class T>
void add_row_inplace(Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.cols())
    throw ShapeError("add_row_inplace shape mismatch");
  for (int64_t i = 0; i < x.rows(); ++i) {
    T* xi = x.data() + i * x.cols();
    for (int64_t j = 0; j < x.cols(); ++j) xi[j] += bias[j];
  }
}

// x[N x d] * w[d x d'] + b, the projection primitive of the block.
template <class T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 OpCounter* counter = nullptr) {
  Tensor<T> y = matmul(x, w, counter);
  add_row_inplace(y, b);
  return y;
}

// Stable softmax over the last axis; each slice sums to 1.
template <class T>
Tensor<T> softmax_last(const Tensor<T>& x) {
  const int64_t n = x.cols();
  if (n == 0) throw ShapeError("softmax over empty axis");
  check_finite(x, "softmax input");
  Tensor<T> y = x;
  const int64_t slices = x.size() / n;
  for (int64_t s = 0; s < slices; ++s) {
    T* v = y.data() + s * n;
    T mx = v[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, v[j]);
    T sum = 0;
    for (int64_t j = 0; j < n; ++j) {
      v[j] = std::exp(v[j] - mx);
      sum += v[j];
    }
    for (int64_t j = 0; j < n; ++j) v[j] /= sum;
  }
  check_finite(y, "softmax output");
  return y;
}

// Column means of a rank-2 tensor (reduction over the sequence axis).
template <class T>
Tensor<T> reduce_mean_rows(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("reduce_mean_rows expects rank-2");
  if (x.rows() == 0) throw ShapeError("reduce_mean_rows on empty sequence");
  Tensor<T> m({x.cols()});
  for (int64_t i = 0; i < x.rows(); ++i)
    for (int64_t j = 0; j < x.cols(); ++j) m[j] += x.at(i, j);
  for (int64_t j = 0; j < x.cols(); ++j) m[j] /= static_cast<T>(x.rows());
  check_finite(m, "reduce_mean_rows output");
  return m;
}

template <class T>
struct MaxReduce {
  Tensor<T> values;              // [d]
  std::vector<int64_t> indices;  // winning row per column, lowest index on ties
};

template <class T>
MaxReduce<T> reduce_max_argmax_rows(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("reduce_max_argmax_rows expects rank-2");
  if (x.rows() == 0) throw ShapeError("reduce_max_argmax_rows on empty sequence");
  MaxReduce<T> r;
  r.values = Tensor<T>({x.cols()});
  r.indices.assign(static_cast<size_t>(x.cols()), 0);
  for (int64_t j = 0; j < x.cols(); ++j) r.values[j] = x.at(0, j);
  for (int64_t i = 1; i < x.rows(); ++i)
    for (int64_t j = 0; j < x.cols(); ++j)
      if (x.at(i, j) > r.values[j]) {
        r.values[j] = x.at(i, j);
        r.indices[static_cast<size_t>(j)] = i;
      }
  check_finite(r.values, "reduce_max_argmax_rows output");
  return r;
}

template <class T>
Tensor<T> column_sum(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("column_sum expects rank-2");
  Tensor<T> s({x.cols()});
  for (int64_t i = 0; i < x.rows(); ++i)
    for (int64_t j = 0; j < x.cols(); ++j) s[j] += x.at(i, j);
  return s;
}

// Portable deterministic RNG: mt19937_64 with fixed value mappings so the
// same seed produces the same tensors everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Standard normal via the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  // Uniform integer in [0, n) by masked rejection.
  int64_t below(int64_t n) {
    if (n <= 0) throw ConfigError("Rng::below needs n > 0");
    const uint64_t un = static_cast<uint64_t>(n);
    uint64_t mask = ~uint64_t(0);
    mask >>= __builtin_clzll(un | 1);
    uint64_t x;
    do {
      x = engine_() & mask;
    } while (x >= un);
    return static_cast<int64_t>(x);
  }

  template <class T>
  Tensor<T> normal_tensor(std::vector<int64_t> shape, double stddev) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<T>(normal() * stddev);
    return t;
  }

  template <class T>
  Tensor<T> uniform_tensor(std::vector<int64_t> shape, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<T>(lo + (hi - lo) * uniform());
    return t;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ponet
