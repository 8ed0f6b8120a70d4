#include "cilab/matrix.hpp"

#include <cmath>

#include "cilab/errors.hpp"

namespace cilab {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  for (const double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Matrix gram(const Matrix& x) {
  if (x.empty()) throw DimensionError("gram: input matrix is empty");
  const std::size_t b = x.rows();
  const std::size_t z = x.cols();
  Matrix k(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    const double* xi = x.row(i);
    for (std::size_t j = i; j < b; ++j) {
      const double* xj = x.row(j);
      double dot = 0.0;
      for (std::size_t c = 0; c < z; ++c) dot += xi[c] * xj[c];
      k(i, j) = dot;
      k(j, i) = dot;
    }
  }
  return k;
}

Matrix double_center(const Matrix& k) {
  if (k.empty()) throw DimensionError("double_center: input matrix is empty");
  if (k.rows() != k.cols()) throw DimensionError("double_center: matrix must be square");
  const std::size_t b = k.rows();
  std::vector<double> row_mean(b, 0.0);
  std::vector<double> col_mean(b, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      const double v = k(i, j);
      row_mean[i] += v;
      col_mean[j] += v;
      total += v;
    }
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) row_mean[i] *= inv_b;
  for (std::size_t j = 0; j < b; ++j) col_mean[j] *= inv_b;
  total *= inv_b * inv_b;
  Matrix out(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      out(i, j) = k(i, j) - row_mean[i] - col_mean[j] + total;
    }
  }
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions do not match");
  const std::size_t n = a.rows();
  const std::size_t k = a.cols();
  const std::size_t m = b.cols();
  Matrix c(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b.row(p);
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

Matrix hcat(const Matrix& a, const Matrix& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.rows() != b.rows()) throw DimensionError("hcat: row counts differ");
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* dst = out.row(i);
    const double* ra = a.row(i);
    const double* rb = b.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) dst[j] = ra[j];
    for (std::size_t j = 0; j < b.cols(); ++j) dst[a.cols() + j] = rb[j];
  }
  return out;
}

Matrix take_rows(const Matrix& src, const std::vector<int>& row_indices) {
  Matrix out(row_indices.size(), src.cols());
  for (std::size_t i = 0; i < row_indices.size(); ++i) {
    const double* r = src.row(static_cast<std::size_t>(row_indices[i]));
    double* dst = out.row(i);
    for (std::size_t j = 0; j < src.cols(); ++j) dst[j] = r[j];
  }
  return out;
}

}  // namespace cilab
