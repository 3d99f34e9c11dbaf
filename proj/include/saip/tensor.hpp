#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace saip {

using Index = std::int64_t;
using Shape = std::vector<Index>;

/// Raised when operand shapes violate an operation's contract. The message
/// names the offending dimension.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Index shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major N-dimensional array. `Tensor` (32-bit) is the working type
/// everywhere; `Tensor64` exists for gradient audits.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor scalar(T v) { return BasicTensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const;
  Index numel() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<const T> data() const& { return data_; }
  std::span<T> data() & { return data_; }
  std::span<const T> data() && = delete;
  const std::vector<T>& vec() const& { return data_; }
  std::vector<T> vec() && { return std::move(data_); }

  T& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Multi-index access; bounds are checked.
  T& at(std::initializer_list<Index> idx);
  const T& at(std::initializer_list<Index> idx) const;

  T item() const;

  BasicTensor reshaped(Shape shape) const&;
  BasicTensor reshaped(Shape shape) &&;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool all_finite() const;
  bool operator==(const BasicTensor& other) const = default;

 private:
  Index offset_of(std::initializer_list<Index> idx) const;

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace saip
