#pragma once

#include <Eigen/Core>
#include <cstring>
#include <initializer_list>
#include <utility>

#include "icare/common.hpp"

namespace icare {

/// Dense row-major n-d array templated on scalar. double is the working
/// precision throughout the project; float instantiations are available
/// for storage-sensitive uses.
template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using Storage = Eigen::Array<S, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap =
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_ = Storage::Zero(shape_size(shape_));
  }

  Tensor(Shape shape, std::vector<S> values) : shape_(std::move(shape)) {
    check_shape(shape_);
    if (shape_size(shape_) != static_cast<Index>(values.size()))
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape_));
    data_.resize(static_cast<Index>(values.size()));
    std::copy(values.begin(), values.end(), data_.data());
  }

  Tensor(Shape shape, std::initializer_list<S> values)
      : Tensor(std::move(shape), std::vector<S>(values)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, S value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  static Tensor ones(Shape shape) { return constant(std::move(shape), S(1)); }

  static Tensor scalar(S value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }
  Index extent(Index axis) const { return shape_[static_cast<std::size_t>(axis)]; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  S& operator[](Index i) { return data_[i]; }
  S operator[](Index i) const { return data_[i]; }

  S& at(std::initializer_list<Index> idx) { return data_[flat_index(idx)]; }
  S at(std::initializer_list<Index> idx) const { return data_[flat_index(idx)]; }

  /// View the flat buffer as a rows x cols row-major matrix.
  MatrixMap as_matrix(Index rows, Index cols) {
    if (rows * cols != size())
      throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " does not cover tensor " + shape_str(shape_));
    return MatrixMap(data_.data(), rows, cols);
  }

  ConstMatrixMap as_matrix(Index rows, Index cols) const {
    if (rows * cols != size())
      throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " does not cover tensor " + shape_str(shape_));
    return ConstMatrixMap(data_.data(), rows, cols);
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const { return data_.isFinite().all(); }

  void fill(S value) { data_.setConstant(value); }
  void set_zero() { data_.setZero(); }

 private:
  static void check_shape(const Shape& shape) {
    for (Index e : shape)
      if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
  }

  Index flat_index(std::initializer_list<Index> idx) const {
    Index flat = 0;
    std::size_t axis = 0;
    for (Index i : idx) {
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return flat;
  }

  Shape shape_;
  Storage data_;
};

template <typename S>
bool bitwise_equal(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(S) * static_cast<std::size_t>(a.size())) == 0;
}

/// Throws NumericsError when a layer produces NaN/Inf.
template <typename S>
void ensure_finite(const Tensor<S>& t, const char* where) {
  if (!t.all_finite()) throw NumericsError(std::string("non-finite values in ") + where);
}

}  // namespace icare
