#include <Eigen/Core>
#include <algorithm>

#include "ops_internal.hpp"

namespace saip::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;

struct PermutePlan {
  Shape out_shape;
  std::vector<Index> src_stride;  // source stride for each output axis
};

PermutePlan plan_permute(const Shape& in, const std::vector<int>& order) {
  const int rank = static_cast<int>(in.size());
  if (static_cast<int>(order.size()) != rank) throw ShapeError("permute order length must equal rank");
  std::vector<Index> stride(static_cast<std::size_t>(rank), 1);
  for (int i = rank - 2; i >= 0; --i) stride[static_cast<std::size_t>(i)] = stride[static_cast<std::size_t>(i + 1)] * in[static_cast<std::size_t>(i + 1)];
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  PermutePlan p;
  for (int ax : order) {
    if (ax < 0 || ax >= rank || seen[static_cast<std::size_t>(ax)]) throw ShapeError("permute order is not a permutation");
    seen[static_cast<std::size_t>(ax)] = true;
    p.out_shape.push_back(in[static_cast<std::size_t>(ax)]);
    p.src_stride.push_back(stride[static_cast<std::size_t>(ax)]);
  }
  return p;
}

/// Visits (dst, src) flat index pairs for a permuted copy.
template <typename F>
void for_each_permuted(const PermutePlan& p, F&& f) {
  const std::size_t rank = p.out_shape.size();
  const Index n = shape_numel(p.out_shape);
  std::vector<Index> idx(rank, 0);
  Index src = 0;
  for (Index dst = 0; dst < n; ++dst) {
    f(dst, src);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src += p.src_stride[d];
      if (idx[d] < p.out_shape[d]) break;
      src -= p.src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  auto out = x.value().reshaped(std::move(shape));
  return x.tape->record(std::move(out), {x}, [](const BasicTensor<T>& g, std::span<BasicTensor<T>*> pg) {
    auto d = pg[0]->data();
    const auto gd = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += gd[i];
  });
}

template <typename T>
Var<T> permute(Var<T> x, const std::vector<int>& order) {
  const auto& xv = x.value();
  auto plan = plan_permute(xv.shape(), order);
  BasicTensor<T> out(plan.out_shape);
  const auto in = xv.data();
  auto o = out.data();
  for_each_permuted(plan, [&](Index dst, Index src) { o[static_cast<std::size_t>(dst)] = in[static_cast<std::size_t>(src)]; });
  return x.tape->record(std::move(out), {x}, [plan](const BasicTensor<T>& g, std::span<BasicTensor<T>*> pg) {
    auto d = pg[0]->data();
    const auto gd = g.data();
    for_each_permuted(plan, [&](Index dst, Index src) { d[static_cast<std::size_t>(src)] += gd[static_cast<std::size_t>(dst)]; });
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat needs at least one operand");
  const Shape& first = parts[0].value().shape();
  axis = detail::normalize_axis(axis, static_cast<int>(first.size()));
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  std::vector<Index> extents;
  for (const auto& p : parts) {
    const Shape& s = p.value().shape();
    if (s.size() != first.size()) throw ShapeError("concat operands differ in rank");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != first[i]) {
        throw ShapeError("concat operands differ at dimension " + std::to_string(i) + ": " + shape_to_string(s) +
                         " vs " + shape_to_string(first));
      }
    }
    extents.push_back(s[static_cast<std::size_t>(axis)]);
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }
  const auto v = detail::axis_view(out_shape, axis);
  BasicTensor<T> out(out_shape);
  auto o = out.data();
  Index start = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto in = parts[k].value().data();
    const Index e = extents[k];
    for (Index a = 0; a < v.outer; ++a) {
      std::copy_n(in.begin() + a * e * v.inner, e * v.inner, o.begin() + (a * v.extent + start) * v.inner);
    }
    start += e;
  }
  return parts[0].tape->record(std::move(out), parts,
                               [v, extents](const BasicTensor<T>& g, std::span<BasicTensor<T>*> pg) {
                                 const auto gd = g.data();
                                 Index start = 0;
                                 for (std::size_t k = 0; k < extents.size(); ++k) {
                                   const Index e = extents[k];
                                   if (pg[k]) {
                                     auto d = pg[k]->data();
                                     for (Index a = 0; a < v.outer; ++a)
                                       for (Index i = 0; i < e * v.inner; ++i)
                                         d[static_cast<std::size_t>(a * e * v.inner + i)] += gd[static_cast<std::size_t>((a * v.extent + start) * v.inner + i)];
                                   }
                                   start += e;
                                 }
                               });
}

template <typename T>
Var<T> slice(Var<T> x, int axis, Index start, Index length) {
  const auto& xv = x.value();
  axis = detail::normalize_axis(axis, xv.rank());
  const auto v = detail::axis_view(xv.shape(), axis);
  if (start < 0 || length <= 0 || start + length > v.extent) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") out of range on axis " +
                     std::to_string(axis) + " of " + shape_to_string(xv.shape()));
  }
  Shape out_shape = xv.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  BasicTensor<T> out(out_shape);
  const auto in = xv.data();
  auto o = out.data();
  for (Index a = 0; a < v.outer; ++a) {
    std::copy_n(in.begin() + (a * v.extent + start) * v.inner, length * v.inner, o.begin() + a * length * v.inner);
  }
  return x.tape->record(std::move(out), {x}, [v, start, length](const BasicTensor<T>& g, std::span<BasicTensor<T>*> pg) {
    auto d = pg[0]->data();
    const auto gd = g.data();
    for (Index a = 0; a < v.outer; ++a)
      for (Index i = 0; i < length * v.inner; ++i)
        d[static_cast<std::size_t>((a * v.extent + start) * v.inner + i)] += gd[static_cast<std::size_t>(a * length * v.inner + i)];
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_a, bool transpose_b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_rank(av.shape(), 3, "matmul lhs");
  detail::require_rank(bv.shape(), 3, "matmul rhs");
  const Index batch = av.dim(0);
  if (bv.dim(0) != batch) throw ShapeError("matmul batch mismatch: " + shape_to_string(av.shape()) + " vs " + shape_to_string(bv.shape()));
  const Index ar = av.dim(1), ac = av.dim(2), br = bv.dim(1), bc = bv.dim(2);
  const Index m = transpose_a ? ac : ar;
  const Index k = transpose_a ? ar : ac;
  const Index kb = transpose_b ? bc : br;
  const Index n = transpose_b ? br : bc;
  if (k != kb) {
    throw ShapeError("matmul inner dimension mismatch: " + std::to_string(k) + " vs " + std::to_string(kb));
  }
  BasicTensor<T> out(Shape{batch, m, n});
  for (Index i = 0; i < batch; ++i) {
    MapC<T> A(av.data().data() + i * ar * ac, ar, ac);
    MapC<T> B(bv.data().data() + i * br * bc, br, bc);
    Map<T> C(out.data().data() + i * m * n, m, n);
    if (!transpose_a && !transpose_b) C.noalias() = A * B;
    else if (transpose_a && !transpose_b) C.noalias() = A.transpose() * B;
    else if (!transpose_a && transpose_b) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  return a.tape->record(std::move(out), {a, b},
                        [a, b, transpose_a, transpose_b, batch, ar, ac, br, bc, m, n](const BasicTensor<T>& g,
                                                                                     std::span<BasicTensor<T>*> pg) {
                          for (Index i = 0; i < batch; ++i) {
                            MapC<T> A(a.value().data().data() + i * ar * ac, ar, ac);
                            MapC<T> B(b.value().data().data() + i * br * bc, br, bc);
                            MapC<T> G(g.data().data() + i * m * n, m, n);
                            // C = op(A) op(B); dop(A) = G op(B)^T, dop(B) = op(A)^T G.
                            if (pg[0]) {
                              Map<T> dA(pg[0]->data().data() + i * ar * ac, ar, ac);
                              if (!transpose_a && !transpose_b) dA.noalias() += G * B.transpose();
                              else if (!transpose_a && transpose_b) dA.noalias() += G * B;
                              else if (transpose_a && !transpose_b) dA.noalias() += B * G.transpose();
                              else dA.noalias() += B.transpose() * G.transpose();
                            }
                            if (pg[1]) {
                              Map<T> dB(pg[1]->data().data() + i * br * bc, br, bc);
                              if (!transpose_a && !transpose_b) dB.noalias() += A.transpose() * G;
                              else if (!transpose_a && transpose_b) dB.noalias() += G.transpose() * A;
                              else if (transpose_a && !transpose_b) dB.noalias() += A * G;
                              else dB.noalias() += G.transpose() * A.transpose();
                            }
                          }
                        });
}

template <typename T>
Var<T> pixel_shuffle(Var<T> x, int r) {
  const auto& xv = x.value();
  detail::require_rank(xv.shape(), 4, "pixel_shuffle input");
  if (r <= 0) throw ShapeError("pixel_shuffle factor must be positive");
  const Index n = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (cin % (r * r) != 0) {
    throw ShapeError("pixel_shuffle channel dimension " + std::to_string(cin) + " not divisible by r^2 = " + std::to_string(r * r));
  }
  const Index c = cin / (r * r);
  // out (n, c, h, i, w, j) <- in (n, c, i, j, h, w)
  Var<T> v = reshape(x, Shape{n, c, r, r, h, w});
  v = permute(v, {0, 1, 4, 2, 5, 3});
  return reshape(v, Shape{n, c, h * r, w * r});
}

template <typename T>
Var<T> pixel_unshuffle(Var<T> x, int r) {
  const auto& xv = x.value();
  detail::require_rank(xv.shape(), 4, "pixel_unshuffle input");
  if (r <= 0) throw ShapeError("pixel_unshuffle factor must be positive");
  const Index n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h % r != 0 || w % r != 0) {
    throw ShapeError("pixel_unshuffle spatial size " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by " +
                     std::to_string(r));
  }
  Var<T> v = reshape(x, Shape{n, c, h / r, r, w / r, r});
  v = permute(v, {0, 1, 3, 5, 2, 4});
  return reshape(v, Shape{n, c * r * r, h / r, w / r});
}

template Var<float> reshape<float>(Var<float>, Shape);
template Var<double> reshape<double>(Var<double>, Shape);
template Var<float> permute<float>(Var<float>, const std::vector<int>&);
template Var<double> permute<double>(Var<double>, const std::vector<int>&);
template Var<float> concat<float>(const std::vector<Var<float>>&, int);
template Var<double> concat<double>(const std::vector<Var<double>>&, int);
template Var<float> slice<float>(Var<float>, int, Index, Index);
template Var<double> slice<double>(Var<double>, int, Index, Index);
template Var<float> matmul<float>(Var<float>, Var<float>, bool, bool);
template Var<double> matmul<double>(Var<double>, Var<double>, bool, bool);
template Var<float> pixel_shuffle<float>(Var<float>, int);
template Var<double> pixel_shuffle<double>(Var<double>, int);
template Var<float> pixel_unshuffle<float>(Var<float>, int);
template Var<double> pixel_unshuffle<double>(Var<double>, int);

}  // namespace saip::ops
