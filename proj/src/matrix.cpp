#include "fairdistill/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fairdistill {

DenseMat::DenseMat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMat::DenseMat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("DenseMat: data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

DenseMat DenseMat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw ShapeError("DenseMat::from_rows: ragged rows");
    }
    data.insert(data.end(), row.begin(), row.end());
  }
  return DenseMat(r, c, std::move(data));
}

DenseMat DenseMat::identity(std::size_t n) {
  DenseMat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool DenseMat::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string DenseMat::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

DenseMat matmul(const DenseMat& a, const DenseMat& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_string() + " * " + b.shape_string());
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  DenseMat out(n, m);
  const double* bp = b.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.data().data() + i * m;
    const double* ar = a.data().data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      const double* br = bp + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

DenseMat matmul_tn(const DenseMat& a, const DenseMat& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: " + a.shape_string() + "^T * " + b.shape_string());
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  DenseMat out(k, m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* ar = a.data().data() + i * k;
    const double* br = b.data().data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      double* o = out.data().data() + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

DenseMat matmul_nt(const DenseMat& a, const DenseMat& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + a.shape_string() + " * " + b.shape_string() + "^T");
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  DenseMat out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* ar = a.data().data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* br = b.data().data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      out(i, j) = acc;
    }
  }
  return out;
}

DenseMat transpose(const DenseMat& a) {
  DenseMat out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

DenseMat hconcat(const DenseMat& a, const DenseMat& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("hconcat: row counts " + std::to_string(a.rows()) + " vs " +
                     std::to_string(b.rows()));
  }
  DenseMat out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    std::copy(a.row(i).begin(), a.row(i).end(), dst.begin());
    std::copy(b.row(i).begin(), b.row(i).end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

DenseMat gather_rows(const DenseMat& m, std::span<const std::size_t> indices) {
  DenseMat out(indices.size(), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= m.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(indices[i]) + " >= " +
                              std::to_string(m.rows()));
    }
    std::copy(m.row(indices[i]).begin(), m.row(indices[i]).end(), out.row(i).begin());
  }
  return out;
}

DenseMat row_softmax(const DenseMat& logits) {
  DenseMat out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (double& v : o) v /= z;
  }
  return out;
}

SparseMat::SparseMat(std::size_t rows, std::size_t cols, std::vector<std::size_t> offsets,
                     std::vector<std::size_t> indices, std::vector<double> values)
    : rows_(rows),
      cols_(cols),
      offsets_(std::move(offsets)),
      indices_(std::move(indices)),
      values_(std::move(values)) {
  validate();
}

void SparseMat::validate() const {
  if (offsets_.size() != rows_ + 1 || offsets_.front() != 0 || offsets_.back() != indices_.size() ||
      indices_.size() != values_.size()) {
    throw ShapeError("SparseMat: inconsistent CSR arrays");
  }
  for (std::size_t r = 0; r < rows_; ++r) {
    if (offsets_[r] > offsets_[r + 1]) throw ShapeError("SparseMat: offsets not monotone");
    for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) {
      if (indices_[k] >= cols_) throw ShapeError("SparseMat: column index out of range");
      if (k > offsets_[r] && indices_[k] <= indices_[k - 1]) {
        throw ShapeError("SparseMat: column indices not strictly increasing in row " +
                         std::to_string(r));
      }
      if (!std::isfinite(values_[k])) throw std::domain_error("SparseMat: non-finite value");
    }
  }
}

SparseMat SparseMat::from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets) {
  std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  std::vector<std::size_t> offsets(rows + 1, 0);
  std::vector<std::size_t> indices;
  std::vector<double> values;
  indices.reserve(triplets.size());
  values.reserve(triplets.size());
  for (std::size_t t = 0; t < triplets.size(); ++t) {
    const auto& tr = triplets[t];
    if (tr.row >= rows || tr.col >= cols) {
      throw std::out_of_range("SparseMat::from_triplets: entry outside " + std::to_string(rows) +
                              "x" + std::to_string(cols));
    }
    if (t > 0 && triplets[t - 1].row == tr.row && triplets[t - 1].col == tr.col) {
      values.back() += tr.value;
      continue;
    }
    indices.push_back(tr.col);
    values.push_back(tr.value);
    ++offsets[tr.row + 1];
  }
  for (std::size_t r = 0; r < rows; ++r) offsets[r + 1] += offsets[r];
  return SparseMat(rows, cols, std::move(offsets), std::move(indices), std::move(values));
}

SparseMat SparseMat::identity(std::size_t n) {
  std::vector<std::size_t> offsets(n + 1), indices(n);
  for (std::size_t i = 0; i <= n; ++i) offsets[i] = i;
  for (std::size_t i = 0; i < n; ++i) indices[i] = i;
  return SparseMat(n, n, std::move(offsets), std::move(indices), std::vector<double>(n, 1.0));
}

SparseMat SparseMat::from_dense(const DenseMat& dense) {
  std::vector<Triplet> trips;
  for (std::size_t i = 0; i < dense.rows(); ++i)
    for (std::size_t j = 0; j < dense.cols(); ++j)
      if (dense(i, j) != 0.0) trips.push_back({i, j, dense(i, j)});
  return from_triplets(dense.rows(), dense.cols(), std::move(trips));
}

double SparseMat::at(std::size_t r, std::size_t c) const {
  const auto first = indices_.begin() + static_cast<std::ptrdiff_t>(offsets_[r]);
  const auto last = indices_.begin() + static_cast<std::ptrdiff_t>(offsets_[r + 1]);
  const auto it = std::lower_bound(first, last, c);
  if (it == last || *it != c) return 0.0;
  return values_[static_cast<std::size_t>(it - indices_.begin())];
}

DenseMat SparseMat::to_dense() const {
  DenseMat out(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) out(r, indices_[k]) = values_[k];
  return out;
}

SparseMat SparseMat::transposed() const {
  std::vector<Triplet> trips;
  trips.reserve(nnz());
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) trips.push_back({indices_[k], r, values_[k]});
  return from_triplets(cols_, rows_, std::move(trips));
}

DenseMat SparseMat::multiply(const DenseMat& dense) const {
  if (cols_ != dense.rows()) {
    throw ShapeError("SparseMat::multiply: " + std::to_string(rows_) + "x" + std::to_string(cols_) +
                     " * " + dense.shape_string());
  }
  const std::size_t m = dense.cols();
  DenseMat out(rows_, m);
  for (std::size_t r = 0; r < rows_; ++r) {
    double* o = out.data().data() + r * m;
    for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) {
      const double v = values_[k];
      const double* d = dense.data().data() + indices_[k] * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += v * d[j];
    }
  }
  return out;
}

DenseMat SparseMat::transpose_multiply(const DenseMat& dense) const {
  if (rows_ != dense.rows()) {
    throw ShapeError("SparseMat::transpose_multiply: (" + std::to_string(rows_) + "x" +
                     std::to_string(cols_) + ")^T * " + dense.shape_string());
  }
  const std::size_t m = dense.cols();
  DenseMat out(cols_, m);
  for (std::size_t r = 0; r < rows_; ++r) {
    const double* d = dense.data().data() + r * m;
    for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) {
      const double v = values_[k];
      double* o = out.data().data() + indices_[k] * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += v * d[j];
    }
  }
  return out;
}

}  // namespace fairdistill
