#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>

#include "robodet/error.hpp"

namespace robodet {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dimensions of a rank-4 NCHW tensor.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] int plane() const { return h * w; }
  [[nodiscard]] bool positive() const { return n > 0 && c > 0 && h > 0 && w > 0; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& shape);

/// Dense NCHW tensor, row-major with width fastest.
///
/// Each sample is exposed as a (channels × height·width) row-major matrix, which
/// is the layout the im2col convolution consumes and produces.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using SampleMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstSampleMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;
  explicit Tensor(const Shape& shape) : shape_(shape), values_(Vector<Scalar>::Zero(shape.size())) {}
  Tensor(const Shape& shape, Scalar fill)
      : shape_(shape), values_(Vector<Scalar>::Constant(shape.size(), fill)) {}
  Tensor(const Shape& shape, Vector<Scalar> values) : shape_(shape), values_(std::move(values)) {
    if (static_cast<std::size_t>(values_.size()) != shape_.size()) {
      throw ShapeError("tensor data length " + std::to_string(values_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] Eigen::Index size() const { return values_.size(); }
  [[nodiscard]] bool empty() const { return values_.size() == 0; }

  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  Vector<Scalar>& values() { return values_; }
  const Vector<Scalar>& values() const { return values_; }

  Scalar& operator()(int n, int c, int y, int x) { return values_[index(n, c, y, x)]; }
  Scalar operator()(int n, int c, int y, int x) const { return values_[index(n, c, y, x)]; }

  [[nodiscard]] Eigen::Index index(int n, int c, int y, int x) const {
    return ((static_cast<Eigen::Index>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  SampleMap sample(int n) {
    return SampleMap(values_.data() + sample_offset(n), shape_.c, shape_.plane());
  }
  ConstSampleMap sample(int n) const {
    return ConstSampleMap(values_.data() + sample_offset(n), shape_.c, shape_.plane());
  }

  void set_zero() { values_.setZero(); }

  template <typename Other>
  [[nodiscard]] Tensor<Other> cast() const {
    return Tensor<Other>(shape_, values_.template cast<Other>().eval());
  }

 private:
  [[nodiscard]] Eigen::Index sample_offset(int n) const {
    return static_cast<Eigen::Index>(n) * shape_.c * shape_.plane();
  }

  Shape shape_;
  Vector<Scalar> values_;
};

}  // namespace robodet
