#pragma once

#include <cstddef>
#include <vector>

namespace cilab {

// Dense row-major matrix of doubles. The one data carrier used for
// activations, Gram matrices, and weights; problem sizes stay desk-scale
// so there is no sparse or blocked storage.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// K = X * X^T. Computes the upper triangle and mirrors it, so the result
// is symmetric exactly (max |K - K^T| = 0).
Matrix gram(const Matrix& x);

// K' = H K H with H = I - (1/b) 1 1^T (double centering). Every row and
// column mean of the result is 0 up to roundoff.
Matrix double_center(const Matrix& k);

// C = A * B with a fixed i-k-j accumulation order: for each output entry
// the sum over k runs left to right, which keeps results bit-stable.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

// Stacks the columns of a and b side by side (rows must match).
Matrix hcat(const Matrix& a, const Matrix& b);

// Copies the selected rows of `src`, in the given order.
Matrix take_rows(const Matrix& src, const std::vector<int>& row_indices);

}  // namespace cilab
