#include <algorithm>

#include "ops_internal.hpp"

namespace saip::ops {
namespace {

/// Displacement-to-table-row map along one axis. Query and key coordinates are
/// rescaled to the finer grid so that strided grids share one table.
struct AxisDistance {
  Index q_ratio = 1;
  Index k_ratio = 1;
  Index k_extent = 1;

  Index operator()(Index iq, Index ik) const { return iq * q_ratio - ik * k_ratio + (k_extent - 1) * k_ratio; }
};

AxisDistance axis_distance(Index q, Index k, const char* axis) {
  if (std::max(q, k) % std::min(q, k) != 0) {
    throw ShapeError(std::string("relpos_bias ") + axis + " extents " + std::to_string(q) + " and " + std::to_string(k) +
                     " are not integer multiples");
  }
  AxisDistance d;
  d.q_ratio = std::max<Index>(k / q, 1);
  d.k_ratio = std::max<Index>(q / k, 1);
  d.k_extent = k;
  return d;
}

}  // namespace

Index relpos_table_size(Index q, Index k) { return 2 * std::max(q, k) - 1; }

template <typename T>
Var<T> relpos_bias(Var<T> q, Var<T> rh, Var<T> rw, TokenGrid q_grid, TokenGrid k_grid) {
  const auto& qv = q.value();
  const auto& hv = rh.value();
  const auto& wv = rw.value();
  detail::require_rank(qv.shape(), 3, "relpos_bias queries");
  detail::require_rank(hv.shape(), 2, "relpos_bias height table");
  detail::require_rank(wv.shape(), 2, "relpos_bias width table");
  const Index batch = qv.dim(0), lq = qv.dim(1), d = qv.dim(2);
  if (lq != q_grid.size()) {
    throw ShapeError("relpos_bias query length " + std::to_string(lq) + " does not match grid " +
                     std::to_string(q_grid.height) + "x" + std::to_string(q_grid.width));
  }
  if (hv.dim(1) != d || wv.dim(1) != d) throw ShapeError("relpos_bias table width (dimension 1) must equal head dim");
  const auto dh = axis_distance(q_grid.height, k_grid.height, "height");
  const auto dw = axis_distance(q_grid.width, k_grid.width, "width");
  const Index max_h = dh(q_grid.height - 1, 0);
  const Index max_w = dw(q_grid.width - 1, 0);
  if (max_h >= hv.dim(0)) {
    throw ShapeError("relpos_bias height displacement " + std::to_string(max_h) + " outside table of " +
                     std::to_string(hv.dim(0)) + " rows");
  }
  if (max_w >= wv.dim(0)) {
    throw ShapeError("relpos_bias width displacement " + std::to_string(max_w) + " outside table of " +
                     std::to_string(wv.dim(0)) + " rows");
  }
  const Index kh = k_grid.height, kw = k_grid.width, lk = k_grid.size();

  // rel_h[b,i,y] = q_i . Rh[dh(row(i), y)], rel_w[b,i,x] = q_i . Rw[dw(col(i), x)]
  std::vector<T> rel_h(static_cast<std::size_t>(batch * lq * kh)), rel_w(static_cast<std::size_t>(batch * lq * kw));
  const T* qd = qv.data().data();
  const T* hd = hv.data().data();
  const T* wd = wv.data().data();
  for (Index b = 0; b < batch; ++b)
    for (Index i = 0; i < lq; ++i) {
      const T* qi = qd + (b * lq + i) * d;
      const Index qy = i / q_grid.width, qx = i % q_grid.width;
      for (Index y = 0; y < kh; ++y) {
        const T* row = hd + dh(qy, y) * d;
        T s = 0;
        for (Index e = 0; e < d; ++e) s += qi[e] * row[e];
        rel_h[static_cast<std::size_t>((b * lq + i) * kh + y)] = s;
      }
      for (Index x = 0; x < kw; ++x) {
        const T* row = wd + dw(qx, x) * d;
        T s = 0;
        for (Index e = 0; e < d; ++e) s += qi[e] * row[e];
        rel_w[static_cast<std::size_t>((b * lq + i) * kw + x)] = s;
      }
    }
  BasicTensor<T> out(Shape{batch, lq, lk});
  T* od = out.data().data();
  for (Index b = 0; b < batch; ++b)
    for (Index i = 0; i < lq; ++i)
      for (Index j = 0; j < lk; ++j)
        od[(b * lq + i) * lk + j] = rel_h[static_cast<std::size_t>((b * lq + i) * kh + j / kw)] +
                                    rel_w[static_cast<std::size_t>((b * lq + i) * kw + j % kw)];

  return q.tape->record(
      std::move(out), {q, rh, rw},
      [q, rh, rw, q_grid, batch, lq, lk, d, kh, kw, dh, dw](const BasicTensor<T>& g, std::span<BasicTensor<T>*> pg) {
        const T* qd = q.value().data().data();
        const T* hd = rh.value().data().data();
        const T* wd = rw.value().data().data();
        const T* gd = g.data().data();
        std::vector<T> gh(static_cast<std::size_t>(kh)), gw(static_cast<std::size_t>(kw));
        for (Index b = 0; b < batch; ++b)
          for (Index i = 0; i < lq; ++i) {
            std::fill(gh.begin(), gh.end(), T(0));
            std::fill(gw.begin(), gw.end(), T(0));
            for (Index j = 0; j < lk; ++j) {
              const T gv = gd[(b * lq + i) * lk + j];
              gh[static_cast<std::size_t>(j / kw)] += gv;
              gw[static_cast<std::size_t>(j % kw)] += gv;
            }
            const Index qy = i / q_grid.width, qx = i % q_grid.width;
            const T* qi = qd + (b * lq + i) * d;
            for (Index y = 0; y < kh; ++y) {
              const T gv = gh[static_cast<std::size_t>(y)];
              const Index r = dh(qy, y);
              if (pg[0]) {
                T* dq = pg[0]->data().data() + (b * lq + i) * d;
                for (Index e = 0; e < d; ++e) dq[e] += gv * hd[r * d + e];
              }
              if (pg[1]) {
                T* dr = pg[1]->data().data() + r * d;
                for (Index e = 0; e < d; ++e) dr[e] += gv * qi[e];
              }
            }
            for (Index x = 0; x < kw; ++x) {
              const T gv = gw[static_cast<std::size_t>(x)];
              const Index r = dw(qx, x);
              if (pg[0]) {
                T* dq = pg[0]->data().data() + (b * lq + i) * d;
                for (Index e = 0; e < d; ++e) dq[e] += gv * wd[r * d + e];
              }
              if (pg[2]) {
                T* dr = pg[2]->data().data() + r * d;
                for (Index e = 0; e < d; ++e) dr[e] += gv * qi[e];
              }
            }
          }
      });
}

template Var<float> relpos_bias<float>(Var<float>, Var<float>, Var<float>, TokenGrid, TokenGrid);
template Var<double> relpos_bias<double>(Var<double>, Var<double>, Var<double>, TokenGrid, TokenGrid);

}  // namespace saip::ops
