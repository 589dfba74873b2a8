#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace stealth {

// Dense row-major matrix of doubles. Batches are rows, features are columns.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Picks the listed rows, in order.
Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows);
// [a | b] column concatenation; row counts must agree.
Matrix hconcat(const Matrix& a, const Matrix& b);
// Columns [first, first + count).
Matrix column_block(const Matrix& m, std::size_t first, std::size_t count);
// One row per label with a 1 at the label index.
Matrix one_hot(std::span<const int> labels, std::size_t n_classes);

// out = a * b
void matmul(const Matrix& a, const Matrix& b, Matrix& out);
// out = a * b^T
void matmul_transpose_b(const Matrix& a, const Matrix& b, Matrix& out);
// out += a^T * b
void matmul_transpose_a_accumulate(const Matrix& a, const Matrix& b, double* out);

void require_same_shape(const Matrix& a, const Matrix& b, const std::string& context);
bool all_finite(const Matrix& m);

}  // namespace stealth
