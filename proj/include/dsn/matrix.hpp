#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace dsn {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& data() const { return data_; }

  std::vector<double> col(std::size_t c) const;

  Matrix transpose() const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// A * B
Matrix matmul(const Matrix& a, const Matrix& b);
/// A * B^T; the natural layout for weights stored as (out x in).
Matrix matmul_bt(const Matrix& a, const Matrix& b);
/// A^T * B
Matrix matmul_at(const Matrix& a, const Matrix& b);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// Max-abs entry of A^T A - I.
double orthogonality_error(const Matrix& a);
double frobenius_norm(const Matrix& a);

/// Rows of `m` selected by `indices`, in that order.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices);
/// Stack `a` on top of `b`.
Matrix vstack(const Matrix& a, const Matrix& b);

}  // namespace dsn
