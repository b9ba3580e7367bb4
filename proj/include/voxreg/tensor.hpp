#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace voxreg {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <class Scalar>
using FlatArray = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

using ArrayXd = FlatArray<double>;

[[noreturn]] void shape_error(const std::string& what);

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

// Row-major strides, last axis fastest.
inline Shape row_major_strides(const Shape& shape) {
  Shape s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    s[i] = s[i + 1] * shape[i + 1];
  }
  return s;
}

std::string shape_to_string(const Shape& shape);

/// Dense n-d array over a contiguous row-major buffer (last axis fastest).
/// Copies are cheap: they share the underlying buffer. Buffers are treated
/// as immutable once a tensor is visible outside its builder; the only
/// sanctioned in-place mutation is the optimizer update, which goes through
/// array_mut() and detaches shared storage first.
template <class Scalar>
class TensorT {
 public:
  TensorT() : store_(std::make_shared<FlatArray<Scalar>>()) {}

  explicit TensorT(Shape shape)
      : shape_(std::move(shape)),
        store_(std::make_shared<FlatArray<Scalar>>(
            FlatArray<Scalar>::Zero(numel(shape_)))) {}

  TensorT(Shape shape, FlatArray<Scalar> values)
      : shape_(std::move(shape)),
        store_(std::make_shared<FlatArray<Scalar>>(std::move(values))) {
    if (store_->size() != numel(shape_)) {
      shape_error("tensor data length " + std::to_string(store_->size()) +
                  " does not match shape " + shape_to_string(shape_));
    }
  }

  TensorT(Shape shape, const std::vector<Scalar>& values)
      : TensorT(std::move(shape),
                Eigen::Map<const FlatArray<Scalar>>(
                    values.data(), static_cast<Index>(values.size()))
                    .eval()) {}

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

  static TensorT constant(Shape shape, Scalar value) {
    Index n = numel(shape);
    return TensorT(std::move(shape), FlatArray<Scalar>::Constant(n, value));
  }

  static TensorT scalar(Scalar value) {
    return TensorT(Shape{}, FlatArray<Scalar>::Constant(1, value));
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_[static_cast<size_t>(axis)]; }
  Index size() const { return store_->size(); }

  const FlatArray<Scalar>& array() const { return *store_; }

  /// Mutable access; detaches from shared storage so aliases keep old values.
  FlatArray<Scalar>& array_mut() {
    if (store_.use_count() != 1) {
      store_ = std::make_shared<FlatArray<Scalar>>(*store_);
    }
    return *store_;
  }

  Scalar operator[](Index flat) const { return (*store_)(flat); }

  Scalar at(std::initializer_list<Index> idx) const {
    return (*store_)(flat_index(idx));
  }

  void set(std::initializer_list<Index> idx, Scalar v) {
    array_mut()(flat_index(idx)) = v;
  }

  /// Value of a one-element tensor.
  Scalar value() const {
    if (size() != 1) shape_error("value() requires a one-element tensor");
    return (*store_)(0);
  }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  /// View with a different shape sharing the same buffer (no tape linkage).
  TensorT with_shape(Shape shape) const {
    if (numel(shape) != size()) {
      shape_error("with_shape: element count mismatch");
    }
    TensorT out;
    out.shape_ = std::move(shape);
    out.store_ = store_;
    return out;
  }

  bool requires_grad = false;
  // Tape node handle for the active tape; -1 when untracked.
  int node = -1;

 private:
  Index flat_index(std::initializer_list<Index> idx) const {
    if (static_cast<Index>(idx.size()) != rank()) {
      shape_error("index rank mismatch");
    }
    Shape strides = row_major_strides(shape_);
    Index flat = 0;
    Index k = 0;
    for (Index i : idx) {
      if (i < 0 || i >= shape_[static_cast<size_t>(k)]) {
        shape_error("index out of bounds");
      }
      flat += i * strides[static_cast<size_t>(k)];
      ++k;
    }
    return flat;
  }

  Shape shape_;
  std::shared_ptr<FlatArray<Scalar>> store_;
};

using Tensor = TensorT<double>;

/// 3D intensity volume: rank-3 Tensor [D,H,W], float64 in memory.
using Volume = Tensor;

/// Dense displacement field u: rank-4 Tensor [3,D,H,W], voxel units.
/// The transform is phi(p) = p + u(p).
using DeformationField = Tensor;

/// Integer segmentation grid with the same [D,H,W] layout as Volume.
using LabelMap = TensorT<std::uint16_t>;

}  // namespace voxreg
