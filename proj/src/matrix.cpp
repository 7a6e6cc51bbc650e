#include "parameta/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "parameta/errors.hpp"

namespace parameta {

std::string to_string(Shape s) {
  return "(" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + ")";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, real fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<real> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("matrix storage holds " + std::to_string(data_.size()) +
                         " values, shape " + to_string({rows, cols}) + " needs " +
                         std::to_string(rows * cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<real>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::row_vector(std::span<const real> v) {
  return Matrix(1, v.size(), std::vector<real>(v.begin(), v.end()));
}

Matrix Matrix::transposed() const {
  Matrix out(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
  return out;
}

void Matrix::fill(real v) { std::fill(data_.begin(), data_.end(), v); }

Matrix& Matrix::operator+=(const Matrix& other) {
  if (shape() != other.shape()) {
    throw DimensionError("cannot accumulate " + to_string(other.shape()) + " into " +
                         to_string(shape()));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul inner dimensions differ: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const real aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

real dot(std::span<const real> a, std::span<const real> b) {
  if (a.size() != b.size()) throw DimensionError("dot of vectors with different lengths");
  real s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

real norm(std::span<const real> a) { return std::sqrt(dot(a, a)); }

real cosine(std::span<const real> a, std::span<const real> b, real eps) {
  if (a.size() != b.size()) throw DimensionError("cosine of vectors with different lengths");
  long double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<long double>(a[i]) * b[i];
    aa += static_cast<long double>(a[i]) * a[i];
    bb += static_cast<long double>(b[i]) * b[i];
  }
  const long double na = std::max(std::sqrt(aa), static_cast<long double>(eps));
  const long double nb = std::max(std::sqrt(bb), static_cast<long double>(eps));
  const auto c = static_cast<real>(ab / (na * nb));
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace parameta
