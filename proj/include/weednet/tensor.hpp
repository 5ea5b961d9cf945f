#pragma once

// Dense row-major tensors (last axis fastest) plus the small set of shape
// and linear-algebra operations the network is built from. Image layout is
// channel-last: [batch, height, width, channels]. Matrix products accumulate
// in double precision regardless of the storage scalar type.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "weednet/error.hpp"

namespace weednet {

using Index = std::int64_t;

// Storage scalar selector. Training runs in single; the finite-difference
// oracle instantiates the same code in double.
enum class Precision { single_prec, double_prec };

class Shape {
 public:
  Shape() = default;

  Shape(std::initializer_list<Index> dims) : Shape(std::vector<Index>(dims)) {}

  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) {
    count_ = dims_.empty() ? 0 : 1;
    for (Index d : dims_) {
      if (d < 1) {
        throw ShapeError("shape extent must be >= 1, got " + std::to_string(d) +
                         " in " + str_of(dims_));
      }
      if (count_ > std::numeric_limits<Index>::max() / d) {
        throw ShapeError("shape element count overflows: " + str_of(dims_));
      }
      count_ *= d;
    }
  }

  Index rank() const { return static_cast<Index>(dims_.size()); }

  Index extent(Index axis) const {
    if (axis < 0 || axis >= rank()) {
      throw ShapeError("axis " + std::to_string(axis) + " out of range for " + str());
    }
    return dims_[static_cast<std::size_t>(axis)];
  }

  // Product of extents; 0 for the empty shape.
  Index element_count() const { return count_; }

  const std::vector<Index>& dims() const { return dims_; }

  bool operator==(const Shape& other) const { return dims_ == other.dims_; }
  bool operator!=(const Shape& other) const { return !(*this == other); }

  std::string str() const { return str_of(dims_); }

 private:
  static std::string str_of(const std::vector<Index>& dims) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (i) os << ", ";
      os << dims[i];
    }
    os << "]";
    return os.str();
  }

  std::vector<Index> dims_;
  Index count_ = 0;
};

template <class T>
class TensorT {
 public:
  // Default construction yields the empty tensor (no shape, no data).
  TensorT() = default;

  explicit TensorT(Shape shape)
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_.element_count()), T(0)) {}

  static TensorT from_data(Shape shape, std::vector<T> values) {
    if (static_cast<Index>(values.size()) != shape.element_count()) {
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape.str() + " (" +
                       std::to_string(shape.element_count()) + " elements)");
    }
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

  static TensorT full(Shape shape, T value) {
    TensorT t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  bool empty() const { return data_.empty(); }
  const Shape& shape() const { return shape_; }
  Index rank() const { return shape_.rank(); }
  Index extent(Index axis) const { return shape_.extent(axis); }
  Index size() const { return static_cast<Index>(data_.size()); }

  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  T& operator[](Index flat) { return data_[static_cast<std::size_t>(flat)]; }
  const T& operator[](Index flat) const { return data_[static_cast<std::size_t>(flat)]; }

  // Row-major multi-index access, bounds-checked.
  template <class... Ix>
  T& at(Ix... ix) {
    return data_[static_cast<std::size_t>(offset_of({static_cast<Index>(ix)...}))];
  }
  template <class... Ix>
  const T& at(Ix... ix) const {
    return data_[static_cast<std::size_t>(offset_of({static_cast<Index>(ix)...}))];
  }

  // Same data, new shape. The rvalue overload moves the storage.
  TensorT reshaped(Shape new_shape) const& {
    check_reshape(new_shape);
    return from_data(std::move(new_shape), data_);
  }
  TensorT reshaped(Shape new_shape) && {
    check_reshape(new_shape);
    return from_data(std::move(new_shape), std::move(data_));
  }

 private:
  void check_reshape(const Shape& new_shape) const {
    if (new_shape.element_count() != shape_.element_count()) {
      throw ShapeError("cannot reshape " + shape_.str() + " (" +
                       std::to_string(shape_.element_count()) + " elements) to " +
                       new_shape.str() + " (" +
                       std::to_string(new_shape.element_count()) + " elements)");
    }
  }

  Index offset_of(std::initializer_list<Index> ix) const {
    if (static_cast<Index>(ix.size()) != shape_.rank()) {
      throw ShapeError("index rank " + std::to_string(ix.size()) +
                       " does not match tensor shape " + shape_.str());
    }
    Index offset = 0;
    Index axis = 0;
    for (Index i : ix) {
      Index extent = shape_.extent(axis);
      if (i < 0 || i >= extent) {
        throw ShapeError("index " + std::to_string(i) + " out of range for axis " +
                         std::to_string(axis) + " of " + shape_.str());
      }
      offset = offset * extent + i;
      ++axis;
    }
    return offset;
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <class T>
TensorT<T> tensor_from_data(Shape shape, std::vector<T> values) {
  return TensorT<T>::from_data(std::move(shape), std::move(values));
}

template <class T>
TensorT<T> reshape(const TensorT<T>& t, Shape new_shape) {
  return t.reshaped(std::move(new_shape));
}

template <class T>
TensorT<T> reshape(TensorT<T>&& t, Shape new_shape) {
  return std::move(t).reshaped(std::move(new_shape));
}

namespace detail {
template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatD = RowMat<double>;
}  // namespace detail

// Standard matrix product [M,K] x [K,N] -> [M,N], accumulated in double.
template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul expects rank-2 tensors, got " + a.shape().str() +
                     " and " + b.shape().str());
  }
  const Index m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
  if (k != k2) {
    throw ShapeError("matmul inner extents disagree: " + a.shape().str() + " vs " +
                     b.shape().str());
  }
  Eigen::Map<const detail::RowMat<T>> ma(a.ptr(), m, k);
  Eigen::Map<const detail::RowMat<T>> mb(b.ptr(), k, n);
  detail::RowMatD prod =
      ma.template cast<double>() * mb.template cast<double>();
  TensorT<T> out(Shape{m, n});
  Eigen::Map<detail::RowMat<T>>(out.ptr(), m, n) = prod.template cast<T>();
  return out;
}

// Concatenate along the last axis. All leading extents must agree.
template <class T>
TensorT<T> concat_last_axis(const std::vector<TensorT<T>>& parts) {
  if (parts.empty()) throw InputError("concat_last_axis of an empty sequence");
  const Shape& first = parts.front().shape();
  const Index rank = first.rank();
  if (rank < 1) throw ShapeError("concat_last_axis needs rank >= 1 tensors");
  Index rows = 1;
  for (Index axis = 0; axis + 1 < rank; ++axis) rows *= first.extent(axis);
  Index total_last = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) {
      throw ShapeError("concat_last_axis rank mismatch: " + first.str() + " vs " +
                       p.shape().str());
    }
    for (Index axis = 0; axis + 1 < rank; ++axis) {
      if (p.extent(axis) != first.extent(axis)) {
        throw ShapeError("concat_last_axis leading extents disagree: " + first.str() +
                         " vs " + p.shape().str());
      }
    }
    total_last += p.extent(rank - 1);
  }
  std::vector<Index> out_dims = first.dims();
  out_dims.back() = total_last;
  TensorT<T> out(Shape{out_dims});
  T* dst = out.ptr();
  for (Index row = 0; row < rows; ++row) {
    for (const auto& p : parts) {
      const Index last = p.extent(rank - 1);
      const T* src = p.ptr() + row * last;
      std::copy(src, src + last, dst);
      dst += last;
    }
  }
  return out;
}

// Slice [start, start+length) of the last axis; inverse of concat_last_axis.
template <class T>
TensorT<T> slice_last_axis(const TensorT<T>& t, Index start, Index length) {
  const Index rank = t.rank();
  if (rank < 1) throw ShapeError("slice_last_axis needs rank >= 1");
  const Index last = t.extent(rank - 1);
  if (start < 0 || length < 1 || start + length > last) {
    throw ShapeError("slice [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of range for " +
                     t.shape().str());
  }
  Index rows = 1;
  for (Index axis = 0; axis + 1 < rank; ++axis) rows *= t.extent(axis);
  std::vector<Index> out_dims = t.shape().dims();
  out_dims.back() = length;
  TensorT<T> out(Shape{out_dims});
  for (Index row = 0; row < rows; ++row) {
    const T* src = t.ptr() + row * last + start;
    std::copy(src, src + length, out.ptr() + row * length);
  }
  return out;
}

// Elementwise helpers used by layer adjoints and the test oracles.
template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  }
  TensorT<T> out(a.shape());
  for (Index i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <class T>
TensorT<T> subtract(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("subtract shape mismatch: " + a.shape().str() + " vs " +
                     b.shape().str());
  }
  TensorT<T> out(a.shape());
  for (Index i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T factor) {
  TensorT<T> out(a.shape());
  for (Index i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
  return out;
}

template <class T>
bool has_nonfinite(const TensorT<T>& t) {
  for (Index i = 0; i < t.size(); ++i) {
    if (!std::isfinite(static_cast<double>(t[i]))) return true;
  }
  return false;
}

template <class T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff shape mismatch: " + a.shape().str() + " vs " +
                     b.shape().str());
  }
  double worst = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

}  // namespace weednet
