#include "saip/saff.hpp"

#include "saip/layers.hpp"

namespace saip::saff {
namespace {

constexpr double kHeadInitStd = 0.01;
constexpr double kOffsetInitStd = 1e-3;

template <typename T>
Var<T> guide_conv(Context<T>& ctx, const std::string& name, Var<T> guide, Index out, int stride, double init_std) {
  layers::ConvLayer layer;
  layer.in_channels = guide.dim(1);
  layer.out_channels = out;
  layer.spec.stride = stride;
  layer.weight_init = Init::normal(init_std);
  return layers::conv(ctx, name, guide, layer);
}

template <typename T>
BasicTensor<T> identity_taps(int k) {
  BasicTensor<T> e(Shape{1, 1, Index(k) * k, 1, 1});
  e[k * k / 2] = T(1);
  return e;
}

template <typename T>
BasicTensor<T> pixel_grid(Index h, Index w) {
  BasicTensor<T> g(Shape{1, 2, h, w});
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j) {
      g[i * w + j] = static_cast<T>(i);
      g[h * w + i * w + j] = static_cast<T>(j);
    }
  return g;
}

}  // namespace

template <typename T>
Var<T> lowpass_from_logits(Var<T> logits, int groups, int k) {
  const auto& s = logits.shape();
  if (s.size() != 4 || s[1] != Index(groups) * k * k) {
    throw ShapeError("low-pass logits must be (N, " + std::to_string(groups * k * k) + ", H, W), got " +
                     shape_to_string(s));
  }
  return ops::softmax(ops::reshape(logits, Shape{s[0], groups, Index(k) * k, s[2], s[3]}), 2);
}

template <typename T>
Var<T> highpass_from_logits(Var<T> logits, int k) {
  auto lp = lowpass_from_logits(logits, 1, k);
  return ops::sub(logits.tape->constant(identity_taps<T>(k)), lp);
}

template <typename T>
Var<T> predict_lowpass_kernels(Context<T>& ctx, const std::string& name, Var<T> guide, int groups, int k, int stride) {
  auto logits = guide_conv(ctx, name, guide, Index(groups) * k * k, stride, kHeadInitStd);
  return lowpass_from_logits(logits, groups, k);
}

template <typename T>
Var<T> predict_highpass_kernels(Context<T>& ctx, const std::string& name, Var<T> guide, int k) {
  return highpass_from_logits(guide_conv(ctx, name, guide, Index(k) * k, 1, kHeadInitStd), k);
}

template <typename T>
Var<T> lp_filter_upsample(Context<T>& ctx, const std::string& name, Var<T> guide, Var<T> y, const SaffConfig& config) {
  const Index gh = guide.dim(2), gw = guide.dim(3), yh = y.dim(2), yw = y.dim(3);
  if (gh == yh && gw == yw) {
    auto field = predict_lowpass_kernels(ctx, name, guide, 1, config.kernel, 1);
    ctx.record(join_name(name, "kernels"), field);
    return ops::spatially_variant_conv(y, field);
  }
  if (gh != 2 * yh || gw != 2 * yw) {
    throw ShapeError("SAFF low-pass path needs a 2:1 or 1:1 resolution ratio, got guide " +
                     shape_to_string(guide.shape()) + " and input " + shape_to_string(y.shape()));
  }
  if (config.groups != 4) throw std::invalid_argument("2x sub-pixel upsampling needs 4 groups");
  auto field = predict_lowpass_kernels(ctx, name, guide, config.groups, config.kernel, 2);
  ctx.record(join_name(name, "kernels"), field);
  return ops::pixel_shuffle(ops::spatially_variant_conv(y, field), 2);
}

template <typename T>
Var<T> hp_filter(Context<T>& ctx, const std::string& name, Var<T> guide, Var<T> x, const SaffConfig& config) {
  auto field = predict_highpass_kernels(ctx, name, guide, config.kernel);
  ctx.record(join_name(name, "kernels"), field);
  return ops::spatially_variant_conv_centered(x, field);
}

template <typename T>
Var<T> offset_generator(Context<T>& ctx, const std::string& name, Var<T> z) {
  auto features = ops::concat<T>({z, ops::local_similarity(z)}, 1);
  auto d = guide_conv(ctx, join_name(name, "direction"), features, 2, 1, kOffsetInitStd);
  auto a = ops::sigmoid(guide_conv(ctx, join_name(name, "magnitude"), features, 1, 1, kHeadInitStd));
  return ops::mul(d, a);
}

template <typename T>
Var<T> resample(Var<T> y, Var<T> offsets) {
  auto grid = y.tape->constant(pixel_grid<T>(y.dim(2), y.dim(3)));
  return ops::bilinear_sample(y, ops::add(grid, offsets));
}

template <typename T>
Var<T> saff_fuse(Context<T>& ctx, const std::string& name, Var<T> x, Var<T> y, const SaffConfig& config) {
  if (x.shape().size() != 4 || y.shape().size() != 4 || x.dim(0) != y.dim(0)) {
    throw ShapeError("SAFF inputs must be NCHW with equal batch, got " + shape_to_string(x.shape()) + " and " +
                     shape_to_string(y.shape()));
  }
  auto yc = layers::pointwise(ctx, join_name(name, "proj"), y, x.dim(1));

  auto y_tilde = lp_filter_upsample(ctx, join_name(name, "lp1"), x, yc, config);
  auto x_tilde = ops::add(hp_filter(ctx, join_name(name, "hp1"), x, x, config), x);
  auto z = ops::add(y_tilde, x_tilde);

  auto x_hat = ops::add(hp_filter(ctx, join_name(name, "hp2"), z, x, config), x);
  auto y_hat = lp_filter_upsample(ctx, join_name(name, "lp2"), z, yc, config);
  auto offsets = offset_generator(ctx, join_name(name, "offset"), z);
  ctx.record(join_name(name, "offsets"), offsets);
  return ops::add(resample(y_hat, offsets), x_hat);
}

#define SAIP_INSTANTIATE_SAFF(T)                                                                               \
  template Var<T> lowpass_from_logits<T>(Var<T>, int, int);                                                   \
  template Var<T> highpass_from_logits<T>(Var<T>, int);                                                       \
  template Var<T> predict_lowpass_kernels<T>(Context<T>&, const std::string&, Var<T>, int, int, int);         \
  template Var<T> predict_highpass_kernels<T>(Context<T>&, const std::string&, Var<T>, int);                  \
  template Var<T> lp_filter_upsample<T>(Context<T>&, const std::string&, Var<T>, Var<T>, const SaffConfig&);  \
  template Var<T> hp_filter<T>(Context<T>&, const std::string&, Var<T>, Var<T>, const SaffConfig&);           \
  template Var<T> offset_generator<T>(Context<T>&, const std::string&, Var<T>);                               \
  template Var<T> resample<T>(Var<T>, Var<T>);                                                                \
  template Var<T> saff_fuse<T>(Context<T>&, const std::string&, Var<T>, Var<T>, const SaffConfig&);

SAIP_INSTANTIATE_SAFF(float)
SAIP_INSTANTIATE_SAFF(double)

}  // namespace saip::saff
