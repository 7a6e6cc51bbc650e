#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace parameta {

using real = double;

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(Shape s);

// Dense row-major 2-D array. Plain value type; the differentiation layer
// wraps it with gradient bookkeeping.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, real fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<real> values);
  Matrix(std::initializer_list<std::initializer_list<real>> rows);

  static Matrix zeros(Shape s) { return Matrix(s.rows, s.cols); }
  static Matrix row_vector(std::span<const real> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  Shape shape() const { return {rows_, cols_}; }
  std::size_t size() const { return data_.size(); }

  real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<real> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const real> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<real>& data() { return data_; }
  const std::vector<real>& data() const { return data_; }

  Matrix transposed() const;
  void fill(real v);
  Matrix& operator+=(const Matrix& other);

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<real> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);

real dot(std::span<const real> a, std::span<const real> b);
real norm(std::span<const real> a);

// Cosine with long-double accumulation, clamped to [-1, 1]. Parallel
// vectors come out as exactly 1.0.
real cosine(std::span<const real> a, std::span<const real> b, real eps = 1e-8);

}  // namespace parameta
