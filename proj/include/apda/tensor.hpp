#ifndef APDA_TENSOR_HPP
#define APDA_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace apda {

// Error taxonomy. The CLI maps ValidationError (and its children) to exit code 1
// and everything else to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File-system failures (missing files, unwritable paths).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of doubles. Value type: copies are deep.
///
/// Most of the library works on rank-2 tensors (rows x cols); vectors are
/// stored as n x 1 columns unless stated otherwise.
class Tensor {
 public:
  Tensor() : shape_{0, 0} {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    for (auto d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
    if (shape_size(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                           shape_string(shape_));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor column(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n, 1}, std::move(values));
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

  static Tensor identity(std::size_t n) {
    Tensor t = matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const {
    require_matrix();
    return shape_[0];
  }
  std::size_t cols() const {
    require_matrix();
    return shape_.size() == 2 ? shape_[1] : 1;
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double item() const {
    if (data_.size() != 1) throw ContractViolation("item() on non-scalar tensor " + shape_string(shape_));
    return data_[0];
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  const double* row_ptr(std::size_t r) const { return data_.data() + r * cols(); }
  double* row_ptr(std::size_t r) { return data_.data() + r * cols(); }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor transposed() const {
    Tensor t = matrix(cols(), rows());
    for (std::size_t i = 0; i < rows(); ++i)
      for (std::size_t j = 0; j < cols(); ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  Tensor rows_slice(std::size_t begin, std::size_t end) const {
    if (begin >= end || end > rows()) throw DimensionError("row slice out of range");
    const std::size_t c = cols();
    return Tensor({end - begin, c}, std::vector<double>(data_.begin() + begin * c, data_.begin() + end * c));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  void require_matrix() const {
    if (shape_.size() != 2) throw DimensionError("expected a rank-2 tensor, got " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

// Plain (non-recording) matrix product, used by both the tape ops and callers
// that only need values.
inline Tensor matmul_values(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul inner dimensions differ: " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.row_ptr(i);
    const double* ar = a.row_ptr(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      const double* br = b.row_ptr(p);
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

// a^T * b without materializing the transpose.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw DimensionError("matmul_tn row counts differ");
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t p = 0; p < k; ++p) {
    const double* ar = a.row_ptr(p);
    const double* br = b.row_ptr(p);
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* o = out.row_ptr(i);
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

// a * b^T without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw DimensionError("matmul_nt column counts differ");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a.row_ptr(i);
    double* o = out.row_ptr(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = b.row_ptr(j);
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      o[j] = s;
    }
  }
  return out;
}

inline std::size_t argmax_row(const Tensor& t, std::size_t r) {
  const double* p = t.row_ptr(r);
  return static_cast<std::size_t>(std::max_element(p, p + t.cols()) - p);
}

}  // namespace apda

#endif  // APDA_TENSOR_HPP
