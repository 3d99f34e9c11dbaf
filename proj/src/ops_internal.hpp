#pragma once

#include <string>

#include "saip/ops.hpp"

namespace saip::ops::detail {

inline int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  return a;
}

/// Splits a shape around `axis` into (outer, extent, inner) products.
struct AxisView {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};

inline AxisView axis_view(const Shape& shape, int axis) {
  AxisView v;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    if (i < axis) v.outer *= shape[static_cast<std::size_t>(i)];
    else if (i == axis) v.extent = shape[static_cast<std::size_t>(i)];
    else v.inner *= shape[static_cast<std::size_t>(i)];
  }
  return v;
}

inline void require_rank(const Shape& s, int rank, const char* what) {
  if (static_cast<int>(s.size()) != rank) {
    throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " + shape_to_string(s));
  }
}

inline Index clamp_index(Index i, Index n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

template <typename T>
void accumulate(BasicTensor<T>* dst, const BasicTensor<T>& src) {
  if (!dst) return;
  auto d = dst->data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace saip::ops::detail

#define SAIP_INSTANTIATE_UNARY(fn)              \
  template Var<float> fn<float>(Var<float>);    \
  template Var<double> fn<double>(Var<double>);

#define SAIP_INSTANTIATE_BINARY(fn)                         \
  template Var<float> fn<float>(Var<float>, Var<float>);    \
  template Var<double> fn<double>(Var<double>, Var<double>);
