#include "saip/tensor.hpp"

#include <cmath>
#include <sstream>

namespace saip {

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<Index>(data_.size())) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
}

template <typename T>
Index BasicTensor<T>::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

template <typename T>
Index BasicTensor<T>::offset_of(std::initializer_list<Index> idx) const {
  if (static_cast<int>(idx.size()) != rank()) {
    throw ShapeError("index rank " + std::to_string(idx.size()) + " does not match tensor rank " +
                     std::to_string(rank()));
  }
  Index off = 0;
  int a = 0;
  for (Index i : idx) {
    const Index extent = shape_[static_cast<std::size_t>(a)];
    if (i < 0 || i >= extent) {
      throw std::out_of_range("index " + std::to_string(i) + " out of range on axis " + std::to_string(a));
    }
    off = off * extent + i;
    ++a;
  }
  return off;
}

template <typename T>
T& BasicTensor<T>::at(std::initializer_list<Index> idx) {
  return data_[static_cast<std::size_t>(offset_of(idx))];
}

template <typename T>
const T& BasicTensor<T>::at(std::initializer_list<Index> idx) const {
  return data_[static_cast<std::size_t>(offset_of(idx))];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_to_string(shape_));
  return data_[0];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const& {
  BasicTensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) && {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace saip
