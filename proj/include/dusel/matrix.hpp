#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dusel {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major matrix of doubles. Plain value type; everything that
// trains holds one behind an exclusive handle, inference copies are cheap
// enough at this scale.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {
    if (r < 0 || c < 0) throw ShapeError("Matrix: negative dimension");
  }
  Matrix(int r, int c, std::vector<double> data) : rows(r), cols(c), a(std::move(data)) {
    if (a.size() != static_cast<std::size_t>(r) * c)
      throw ShapeError("Matrix: data length != rows*cols");
  }

  double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

  double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return a.data() + static_cast<std::size_t>(r) * cols; }

  std::size_t size() const { return a.size(); }

  bool all_finite() const {
    for (double v : a)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void check_same_shape(const Matrix& x, const Matrix& y, const char* where) {
  if (x.rows != y.rows || x.cols != y.cols)
    throw ShapeError(std::string(where) + ": shape mismatch (" + std::to_string(x.rows) + "x" +
                     std::to_string(x.cols) + " vs " + std::to_string(y.rows) + "x" +
                     std::to_string(y.cols) + ")");
}

// C = A * B   (ikj order so the inner loop streams over contiguous rows)
inline Matrix matmul(const Matrix& A, const Matrix& B) {
  if (A.cols != B.rows) throw ShapeError("matmul: inner dimensions differ");
  Matrix C(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i) {
    const double* ai = A.row(i);
    double* ci = C.row(i);
    for (int k = 0; k < A.cols; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = B.row(k);
      for (int j = 0; j < B.cols; ++j) ci[j] += aik * bk[j];
    }
  }
  return C;
}

// C = A^T * B
inline Matrix matmul_ta(const Matrix& A, const Matrix& B) {
  if (A.rows != B.rows) throw ShapeError("matmul_ta: row counts differ");
  Matrix C(A.cols, B.cols);
  for (int k = 0; k < A.rows; ++k) {
    const double* ak = A.row(k);
    const double* bk = B.row(k);
    for (int i = 0; i < A.cols; ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      double* ci = C.row(i);
      for (int j = 0; j < B.cols; ++j) ci[j] += aki * bk[j];
    }
  }
  return C;
}

// C = A * B^T
inline Matrix matmul_tb(const Matrix& A, const Matrix& B) {
  if (A.cols != B.cols) throw ShapeError("matmul_tb: column counts differ");
  Matrix C(A.rows, B.rows);
  for (int i = 0; i < A.rows; ++i) {
    const double* ai = A.row(i);
    double* ci = C.row(i);
    for (int j = 0; j < B.rows; ++j) {
      const double* bj = B.row(j);
      double s = 0.0;
      for (int k = 0; k < A.cols; ++k) s += ai[k] * bj[k];
      ci[j] = s;
    }
  }
  return C;
}

inline void add_row_inplace(Matrix& m, const std::vector<double>& v) {
  if (static_cast<int>(v.size()) != m.cols) throw ShapeError("add_row_inplace: width mismatch");
  for (int r = 0; r < m.rows; ++r) {
    double* p = m.row(r);
    for (int c = 0; c < m.cols; ++c) p[c] += v[c];
  }
}

inline std::vector<double> column_sums(const Matrix& m) {
  std::vector<double> s(static_cast<std::size_t>(m.cols), 0.0);
  for (int r = 0; r < m.rows; ++r) {
    const double* p = m.row(r);
    for (int c = 0; c < m.cols; ++c) s[c] += p[c];
  }
  return s;
}

inline Matrix take_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<int>(rows.size()), m.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = m.row(rows[i]);
    double* dst = out.row(static_cast<int>(i));
    for (int c = 0; c < m.cols; ++c) dst[c] = src[c];
  }
  return out;
}

inline Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.cols != bottom.cols) throw ShapeError("vstack: width mismatch");
  Matrix out(top.rows + bottom.rows, top.cols);
  std::copy(top.a.begin(), top.a.end(), out.a.begin());
  std::copy(bottom.a.begin(), bottom.a.end(), out.a.begin() + top.a.size());
  return out;
}

}  // namespace dusel
