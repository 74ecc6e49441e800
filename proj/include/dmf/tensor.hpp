#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dmf/error.hpp"

namespace dmf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles. A value type: operations return new tensors.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match " +
                       std::to_string(data_.size()) + " elements");
    }
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& row : rows) {
      if (row.size() != n) throw ShapeError("tensor: ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({m, n}, std::move(data));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

  static Tensor full(Shape shape, double value) { return Tensor(std::move(shape), value); }

  static Tensor identity(std::size_t n) {
    Tensor out({n, n});
    for (std::size_t i = 0; i < n; ++i) out.data_[i * n + i] = 1.0;
    return out;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rows() const { return shape_.empty() ? 1 : shape_.front(); }
  std::size_t cols() const { return shape_.empty() ? 1 : size() / std::max<std::size_t>(rows(), 1); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }

  std::span<const double> row(std::size_t i) const {
    const std::size_t n = cols();
    return std::span<const double>(data_).subspan(i * n, n);
  }
  std::span<double> row(std::size_t i) {
    const std::size_t n = cols();
    return std::span<double>(data_).subspan(i * n, n);
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class BinaryOp { Add, Sub, Mul };

namespace detail {

inline double apply(BinaryOp op, double a, double b) {
  switch (op) {
    case BinaryOp::Add:
      return a + b;
    case BinaryOp::Sub:
      return a - b;
    case BinaryOp::Mul:
      return a * b;
  }
  return 0.0;
}

inline const char* op_name(BinaryOp op) {
  switch (op) {
    case BinaryOp::Add:
      return "add";
    case BinaryOp::Sub:
      return "sub";
    case BinaryOp::Mul:
      return "mul";
  }
  return "?";
}

}  // namespace detail

/// Elementwise binary op. `b` may also be a single-element tensor or a vector
/// matching the trailing axis of `a` (broadcast over the leading axes).
inline Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = detail::apply(op, x[i], y[i]);
  } else if (b.size() == 1) {
    const double s = y[0];
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = detail::apply(op, x[i], s);
  } else if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.size()) {
    const std::size_t n = b.size();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = detail::apply(op, x[i], y[i % n]);
  } else {
    throw ShapeError(std::string(detail::op_name(op)) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Mul, a, b); }

inline Tensor neg(const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = -a[i];
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

template <class F>
Tensor map(const Tensor& a, F&& f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

/// Multiplies row b of `a` (B x ...) by s[b].
inline Tensor scale_rows(const Tensor& a, const Tensor& s) {
  if (s.size() != a.rows()) {
    throw ShapeError("scale_rows: " + std::to_string(s.size()) + " factors for " +
                     std::to_string(a.rows()) + " rows");
  }
  Tensor out(a.shape());
  const std::size_t n = a.cols();
  for (std::size_t b = 0; b < a.rows(); ++b) {
    for (std::size_t j = 0; j < n; ++j) out[b * n + j] = a[b * n + j] * s[b];
  }
  return out;
}

inline double sum(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.data()) acc += x;
  return acc;
}

inline double mean(const Tensor& a) { return a.size() ? sum(a) / static_cast<double>(a.size()) : 0.0; }

inline double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double x : a.data()) m = std::max(m, std::abs(x));
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) { return max_abs(sub(a, b)); }

inline double norm(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.data()) acc += x * x;
  return std::sqrt(acc);
}

inline void require_matrix(const Tensor& a, const char* who) {
  if (a.rank() != 2) throw ShapeError(std::string(who) + ": expected a matrix, got " + shape_str(a.shape()));
}

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

inline ConstMap as_matrix(const Tensor& a) {
  return ConstMap(a.data().data(), static_cast<Eigen::Index>(a.dim(0)), static_cast<Eigen::Index>(a.dim(1)));
}

inline MutMap as_matrix(Tensor& a) {
  return MutMap(a.data().data(), static_cast<Eigen::Index>(a.dim(0)), static_cast<Eigen::Index>(a.dim(1)));
}

}  // namespace detail

/// C = A B for A (m x k), B (k x n).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (b.dim(0) != a.dim(1)) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  detail::as_matrix(c).noalias() = detail::as_matrix(a) * detail::as_matrix(b);
  return c;
}

/// C = A^T B for A (k x m), B (k x n).
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  if (b.dim(0) != a.dim(0)) {
    throw ShapeError("matmul_tn: leading dimensions differ " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor c({a.dim(1), b.dim(1)});
  detail::as_matrix(c).noalias() = detail::as_matrix(a).transpose() * detail::as_matrix(b);
  return c;
}

/// C = A B^T for A (m x k), B (n x k).
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (b.dim(1) != a.dim(1)) {
    throw ShapeError("matmul_nt: trailing dimensions differ " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(0)});
  detail::as_matrix(c).noalias() = detail::as_matrix(a) * detail::as_matrix(b).transpose();
  return c;
}

/// Column-sum of a matrix: (m x n) -> [n].
inline Tensor sum_rows(const Tensor& a) {
  require_matrix(a, "sum_rows");
  const std::size_t n = a.dim(1);
  Tensor out({n});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j] += a[i * n + j];
  }
  return out;
}

/// Concatenates matrices with equal row counts along the column axis.
inline Tensor concat_cols(std::span<const Tensor* const> parts) {
  if (parts.empty()) return {};
  const std::size_t m = parts.front()->rows();
  std::size_t n = 0;
  for (const Tensor* p : parts) {
    if (p->rank() != 2 || p->rows() != m) throw ShapeError("concat_cols: row count mismatch");
    n += p->cols();
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t off = 0;
    for (const Tensor* p : parts) {
      auto src = p->row(i);
      std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * n + off));
      off += src.size();
    }
  }
  return out;
}

/// Copies columns [begin, begin + count) of a matrix.
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_cols");
  if (begin + count > a.dim(1)) throw ShapeError("slice_cols: range out of bounds");
  Tensor out({a.dim(0), count});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a[i * a.dim(1) + begin + j];
  }
  return out;
}

/// Gathers rows by index.
inline Tensor take_rows(const Tensor& a, std::span<const std::size_t> index) {
  Shape shape = a.shape();
  shape.front() = index.size();
  Tensor out(shape);
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto src = a.row(index[i]);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return out;
}

}  // namespace dmf
