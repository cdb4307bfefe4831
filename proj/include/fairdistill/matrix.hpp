#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fairdistill {

/// Thrown when operand shapes are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major dense matrix of doubles.
class DenseMat {
 public:
  DenseMat() = default;
  DenseMat(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMat(std::size_t rows, std::size_t cols, std::vector<double> data);

  /// Builds a matrix from nested rows; all rows must have equal length.
  static DenseMat from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static DenseMat identity(std::size_t n);

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

  bool all_finite() const noexcept;
  bool same_shape(const DenseMat& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  friend bool operator==(const DenseMat&, const DenseMat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// C = A * B.
DenseMat matmul(const DenseMat& a, const DenseMat& b);
/// C = A^T * B.
DenseMat matmul_tn(const DenseMat& a, const DenseMat& b);
/// C = A * B^T.
DenseMat matmul_nt(const DenseMat& a, const DenseMat& b);
DenseMat transpose(const DenseMat& a);
/// Columns of a followed by columns of b.
DenseMat hconcat(const DenseMat& a, const DenseMat& b);
/// Rows of m at the given indices, in order.
DenseMat gather_rows(const DenseMat& m, std::span<const std::size_t> indices);
/// Row-wise softmax with max subtraction.
DenseMat row_softmax(const DenseMat& logits);

/// Compressed sparse row matrix. Column indices are strictly increasing within
/// each row.
class SparseMat {
 public:
  struct Triplet {
    std::size_t row;
    std::size_t col;
    double value;
  };

  SparseMat() = default;
  SparseMat(std::size_t rows, std::size_t cols, std::vector<std::size_t> offsets,
            std::vector<std::size_t> indices, std::vector<double> values);

  /// Duplicate (row, col) entries are summed.
  static SparseMat from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets);
  static SparseMat identity(std::size_t n);
  /// Keeps every nonzero of `dense` (exact zeros are dropped).
  static SparseMat from_dense(const DenseMat& dense);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return values_.size(); }

  const std::vector<std::size_t>& offsets() const noexcept { return offsets_; }
  const std::vector<std::size_t>& indices() const noexcept { return indices_; }
  const std::vector<double>& values() const noexcept { return values_; }

  /// Value at (r, c), zero when not stored.
  double at(std::size_t r, std::size_t c) const;

  DenseMat to_dense() const;
  SparseMat transposed() const;
  /// this * dense
  DenseMat multiply(const DenseMat& dense) const;
  /// this^T * dense, accumulated in a fixed order.
  DenseMat transpose_multiply(const DenseMat& dense) const;

  friend bool operator==(const SparseMat&, const SparseMat&) = default;

 private:
  void validate() const;

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::size_t> indices_;
  std::vector<double> values_;
};

}  // namespace fairdistill
