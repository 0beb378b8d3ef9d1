#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "lvg/errors.hpp"
#include "lvg/rng.hpp"

namespace lvg {

// Dense row-major matrix. Double in tests, float instantiable for speed.
template <typename T = double>
struct Tensor2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Tensor2() = default;
  Tensor2(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  T* row(std::size_t r) { return data.data() + r * cols; }
  const T* row(std::size_t r) const { return data.data() + r * cols; }

  std::size_t size() const { return data.size(); }

  void fill(T v) { data.assign(rows * cols, v); }

  bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }

  Tensor2 transposed() const {
    Tensor2 out(cols, rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out(c, r) = (*this)(r, c);
    return out;
  }
};

template <typename T>
bool all_finite(const Tensor2<T>& t) {
  for (T v : t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
void require_shape(const Tensor2<T>& t, std::size_t r, std::size_t c, const char* what) {
  if (t.rows != r || t.cols != c)
    throw ShapeError(std::string(what) + ": expected " + std::to_string(r) + "x" +
                     std::to_string(c) + ", got " + std::to_string(t.rows) + "x" +
                     std::to_string(t.cols));
}

// C = A * B^T. Inner loops run over contiguous rows of both operands.
template <typename T>
Tensor2<T> matmul_bt(const Tensor2<T>& a, const Tensor2<T>& bt) {
  if (a.cols != bt.cols) throw ShapeError("matmul_bt: inner dims differ");
  Tensor2<T> c(a.rows, bt.rows);
  const std::size_t k = a.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const T* ai = a.row(i);
    T* ci = c.row(i);
    for (std::size_t j = 0; j < bt.rows; ++j) {
      const T* bj = bt.row(j);
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = acc;
    }
  }
  return c;
}

// C = A * B via saxpy over rows; contiguous in B and C.
template <typename T>
Tensor2<T> matmul(const Tensor2<T>& a, const Tensor2<T>& b) {
  if (a.cols != b.rows) throw ShapeError("matmul: inner dims differ");
  Tensor2<T> c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const T* ai = a.row(i);
    T* ci = c.row(i);
    for (std::size_t p = 0; p < a.cols; ++p) {
      const T aip = ai[p];
      const T* bp = b.row(p);
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

// C += A^T * B, accumulating (used for weight gradients).
template <typename T>
void add_atb(const Tensor2<T>& a, const Tensor2<T>& b, Tensor2<T>& c) {
  if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols)
    throw ShapeError("add_atb: shape mismatch");
  for (std::size_t n = 0; n < a.rows; ++n) {
    const T* an = a.row(n);
    const T* bn = b.row(n);
    for (std::size_t i = 0; i < a.cols; ++i) {
      const T ani = an[i];
      T* ci = c.row(i);
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += ani * bn[j];
    }
  }
}

template <typename T>
Tensor2<T> random_normal(std::size_t rows, std::size_t cols, Rng& rng, T scale = T(1)) {
  Tensor2<T> t(rows, cols);
  for (auto& v : t.data) v = static_cast<T>(rng.normal()) * scale;
  return t;
}

// Gauss-Jordan inverse with partial pivoting; small fixed matrices only.
template <typename T>
Tensor2<T> invert_square(const Tensor2<T>& m) {
  if (m.rows != m.cols) throw ShapeError("invert_square: not square");
  const std::size_t n = m.rows;
  Tensor2<T> a = m;
  Tensor2<T> inv(n, n);
  for (std::size_t i = 0; i < n; ++i) inv(i, i) = T(1);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(static_cast<double>(a(r, col))) >
          std::abs(static_cast<double>(a(piv, col))))
        piv = r;
    if (std::abs(static_cast<double>(a(piv, col))) < 1e-12)
      throw ShapeError("invert_square: singular matrix");
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) {
        std::swap(a(piv, c), a(col, c));
        std::swap(inv(piv, c), inv(col, c));
      }
    }
    const T d = a(col, col);
    for (std::size_t c = 0; c < n; ++c) {
      a(col, c) /= d;
      inv(col, c) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const T f = a(r, col);
      if (f == T(0)) continue;
      for (std::size_t c = 0; c < n; ++c) {
        a(r, c) -= f * a(col, c);
        inv(r, c) -= f * inv(col, c);
      }
    }
  }
  return inv;
}

}  // namespace lvg
