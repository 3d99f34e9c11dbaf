#include "saip/encoder.hpp"

#include <cmath>

#include "saip/layers.hpp"

namespace saip::encoder {

ops::TokenGrid EncoderConfig::stage_grid(int stage) const {
  const Index f = Index(4) << stage;
  return {image_height / f, image_width / f};
}

void EncoderConfig::validate() const {
  if (image_height <= 0 || image_width <= 0 || image_height % 32 != 0 || image_width % 32 != 0) {
    throw ShapeError("image size " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                     " must be divisible by 32");
  }
  if (patch_size != 4) throw std::invalid_argument("patch size must be 4 for the H/4 pyramid");
  if (channels <= 0) throw std::invalid_argument("encoder channels must be positive");
  for (int s = 0; s < 4; ++s) {
    if (blocks[static_cast<std::size_t>(s)] < 1) throw std::invalid_argument("every stage needs at least one block");
    const int h = heads[static_cast<std::size_t>(s)];
    if (h < 1 || stage_channels(s) % h != 0) {
      throw std::invalid_argument("stage " + std::to_string(s + 1) + " width " + std::to_string(stage_channels(s)) +
                                  " not divisible by " + std::to_string(h) + " heads");
    }
    const int kv = kv_strides[static_cast<std::size_t>(s)];
    const auto g = stage_grid(s);
    if (kv < 1 || g.height % kv != 0 || g.width % kv != 0) {
      throw std::invalid_argument("stage " + std::to_string(s + 1) + " key/value stride " + std::to_string(kv) +
                                  " does not divide its token grid");
    }
  }
}

template <typename T>
Var<T> patch_embed(Context<T>& ctx, const std::string& name, Var<T> image, int patch_size, Index channels) {
  if (image.shape().size() != 4 || image.dim(2) % patch_size != 0 || image.dim(3) % patch_size != 0) {
    throw ShapeError("image " + shape_to_string(image.shape()) + " not divisible into " + std::to_string(patch_size) +
                     "x" + std::to_string(patch_size) + " patches");
  }
  return layers::pointwise(ctx, name, ops::pixel_unshuffle(image, patch_size), channels);
}

namespace {

/// (N, D, H, W) -> (N * heads, H * W, D / heads)
template <typename T>
Var<T> split_heads(Var<T> x, int heads) {
  const Index n = x.dim(0), d = x.dim(1), l = x.dim(2) * x.dim(3);
  auto r = ops::reshape(x, Shape{n, heads, d / heads, l});
  return ops::reshape(ops::permute(r, {0, 1, 3, 2}), Shape{n * heads, l, d / heads});
}

template <typename T>
Var<T> merge_heads(Var<T> x, Index n, ops::TokenGrid grid) {
  const int heads = static_cast<int>(x.dim(0) / n);
  const Index hd = x.dim(2);
  auto r = ops::reshape(x, Shape{n, heads, grid.size(), hd});
  return ops::reshape(ops::permute(r, {0, 1, 3, 2}), Shape{n, heads * hd, grid.height, grid.width});
}

template <typename T>
Var<T> pool(Context<T>& ctx, const std::string& name, Var<T> x, int stride) {
  layers::ConvLayer layer;
  layer.in_channels = x.dim(1);
  layer.out_channels = x.dim(1);
  layer.spec.stride = stride;
  layer.spec.groups = static_cast<int>(x.dim(1));
  layer.bias = false;
  layer.weight_init = Init::center_tap(0.02);
  return layers::conv(ctx, name, x, layer);
}

}  // namespace

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::optional<std::pair<Var<T>, Var<T>>> tables, int heads) {
  if (q.dim(1) % heads != 0) {
    throw std::invalid_argument("head count " + std::to_string(heads) + " does not divide width " +
                                std::to_string(q.dim(1)));
  }
  if (k.shape() != v.shape() || k.dim(1) != q.dim(1)) {
    throw ShapeError("attention key/value shapes " + shape_to_string(k.shape()) + " and " + shape_to_string(v.shape()) +
                     " do not match queries " + shape_to_string(q.shape()));
  }
  const Index n = q.dim(0);
  const ops::TokenGrid qg{q.dim(2), q.dim(3)}, kg{k.dim(2), k.dim(3)};
  auto qh = split_heads(q, heads);
  auto kh = split_heads(k, heads);
  auto vh = split_heads(v, heads);
  auto logits = ops::matmul(qh, kh, false, true);
  if (tables) logits = ops::add(logits, ops::relpos_bias(qh, tables->first, tables->second, qg, kg));
  const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(qh.dim(2))));
  auto weights = ops::softmax(ops::scale(logits, scale), 2);
  auto out = ops::add(ops::matmul(weights, vh), qh);
  return merge_heads(out, n, qg);
}

template <typename T>
Var<T> pooled_attention_block(Context<T>& ctx, const std::string& name, Var<T> x, const BlockGeometry& g) {
  if (x.dim(1) != g.in_channels || x.dim(2) != g.in_grid.height || x.dim(3) != g.in_grid.width) {
    throw ShapeError("block '" + name + "' expects " + std::to_string(g.in_channels) + " channels on a " +
                     std::to_string(g.in_grid.height) + "x" + std::to_string(g.in_grid.width) + " grid, got " +
                     shape_to_string(x.shape()));
  }
  if (g.out_channels % g.heads != 0) {
    throw std::invalid_argument("block '" + name + "': head count " + std::to_string(g.heads) +
                                " does not divide width " + std::to_string(g.out_channels));
  }
  const Index d = g.out_channels;
  auto h = layers::channel_norm(ctx, join_name(name, "norm1"), x);
  auto q = pool(ctx, join_name(name, "pool_q"), layers::pointwise(ctx, join_name(name, "q"), h, d), g.q_stride);
  auto k = pool(ctx, join_name(name, "pool_k"), layers::pointwise(ctx, join_name(name, "k"), h, d), g.kv_stride);
  auto v = pool(ctx, join_name(name, "pool_v"), layers::pointwise(ctx, join_name(name, "v"), h, d), g.kv_stride);

  const auto qg = g.q_grid(), kg = g.kv_grid();
  const Index hd = g.head_dim();
  auto rh = ctx.param(join_name(name, "rel_h"), Shape{ops::relpos_table_size(qg.height, kg.height), hd},
                      Init::normal(0.02));
  auto rw = ctx.param(join_name(name, "rel_w"), Shape{ops::relpos_table_size(qg.width, kg.width), hd},
                      Init::normal(0.02));
  auto attn = attention<T>(q, k, v, std::make_pair(rh, rw), g.heads);
  auto x1 = layers::pointwise(ctx, join_name(name, "proj"), attn, d);
  if (!g.transition()) x1 = ops::add(x1, x);

  auto m = layers::pointwise(ctx, join_name(name, "fc1"), layers::channel_norm(ctx, join_name(name, "norm2"), x1),
                             d * g.mlp_ratio);
  m = layers::pointwise(ctx, join_name(name, "fc2"), ops::gelu(m), d);
  return ops::add(x1, m);
}

std::vector<std::vector<BlockGeometry>> block_layout(const EncoderConfig& config) {
  config.validate();
  std::vector<std::vector<BlockGeometry>> layout(4);
  Index in_channels = config.channels;
  ops::TokenGrid grid = config.stage_grid(0);
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < config.blocks[static_cast<std::size_t>(s)]; ++b) {
      BlockGeometry g;
      g.in_channels = in_channels;
      g.out_channels = config.stage_channels(s);
      g.heads = config.heads[static_cast<std::size_t>(s)];
      g.q_stride = (s > 0 && b == 0) ? 2 : 1;
      g.kv_stride = g.q_stride * config.kv_strides[static_cast<std::size_t>(s)];
      g.in_grid = grid;
      g.mlp_ratio = config.mlp_ratio;
      layout[static_cast<std::size_t>(s)].push_back(g);
      in_channels = g.out_channels;
      grid = g.q_grid();
    }
  }
  return layout;
}

namespace {

template <typename T>
void check_image(Var<T> image, const EncoderConfig& config) {
  if (image.shape().size() != 4 || image.dim(1) != 3 || image.dim(2) != config.image_height ||
      image.dim(3) != config.image_width) {
    throw ShapeError("encoder configured for (N, 3, " + std::to_string(config.image_height) + ", " +
                     std::to_string(config.image_width) + ") images, got " + shape_to_string(image.shape()));
  }
}

}  // namespace

template <typename T>
std::vector<Var<T>> encoder_forward(Context<T>& ctx, const std::string& name, Var<T> image,
                                    const EncoderConfig& config) {
  const auto layout = block_layout(config);
  check_image(image, config);
  auto x = patch_embed(ctx, join_name(name, "patch"), image, config.patch_size, config.channels);
  std::vector<Var<T>> pyramid;
  for (int s = 0; s < 4; ++s) {
    const auto& stage = layout[static_cast<std::size_t>(s)];
    for (std::size_t b = 0; b < stage.size(); ++b) {
      x = pooled_attention_block(ctx, join_name(name, "stage" + std::to_string(s + 1) + ".block" + std::to_string(b)),
                                 x, stage[b]);
    }
    pyramid.push_back(x);
  }
  return pyramid;
}

template <typename T>
std::vector<Var<T>> conv_encoder_forward(Context<T>& ctx, const std::string& name, Var<T> image,
                                         const EncoderConfig& config) {
  config.validate();
  check_image(image, config);
  auto x = patch_embed(ctx, join_name(name, "patch"), image, config.patch_size, config.channels);
  std::vector<Var<T>> pyramid;
  for (int s = 0; s < 4; ++s) {
    const std::string stage = join_name(name, "stage" + std::to_string(s + 1));
    for (int c = 0; c < 2; ++c) {
      layers::ConvLayer layer;
      layer.in_channels = x.dim(1);
      layer.out_channels = config.stage_channels(s);
      layer.spec.stride = (s > 0 && c == 0) ? 2 : 1;
      const std::string id = std::to_string(c + 1);
      x = layers::conv(ctx, join_name(stage, "conv" + id), x, layer);
      x = ops::relu(layers::batch_norm(ctx, join_name(stage, "bn" + id), x));
    }
    pyramid.push_back(x);
  }
  return pyramid;
}

#define SAIP_INSTANTIATE_ENCODER(T)                                                                               \
  template Var<T> patch_embed<T>(Context<T>&, const std::string&, Var<T>, int, Index);                          \
  template Var<T> attention<T>(Var<T>, Var<T>, Var<T>, std::optional<std::pair<Var<T>, Var<T>>>, int);          \
  template Var<T> pooled_attention_block<T>(Context<T>&, const std::string&, Var<T>, const BlockGeometry&);      \
  template std::vector<Var<T>> encoder_forward<T>(Context<T>&, const std::string&, Var<T>, const EncoderConfig&); \
  template std::vector<Var<T>> conv_encoder_forward<T>(Context<T>&, const std::string&, Var<T>,                 \
                                                       const EncoderConfig&);

SAIP_INSTANTIATE_ENCODER(float)
SAIP_INSTANTIATE_ENCODER(double)

}  // namespace saip::encoder
