#include "reid/res2net.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace reid {

namespace {

template <typename T>
ConvParams<T> make_conv(int out_c, int in_c, int k, int stride, int padding) {
  ConvParams<T> p;
  p.weight = Tensor<T>({static_cast<std::size_t>(out_c),
                        static_cast<std::size_t>(in_c),
                        static_cast<std::size_t>(k),
                        static_cast<std::size_t>(k)});
  p.bias = Tensor<T>({static_cast<std::size_t>(out_c)});
  p.stride = stride;
  p.padding = padding;
  return p;
}

template <typename T>
ConvBn<T> make_conv_bn(int out_c, int in_c, int k, int stride, int padding) {
  ConvBn<T> cb;
  cb.conv = make_conv<T>(out_c, in_c, k, stride, padding);
  cb.bn = make_batchnorm<T>(static_cast<std::size_t>(out_c));
  return cb;
}

}  // namespace

template <typename T>
Tensor<T> conv_bn(const Tensor<T>& x, ConvBn<T>& cb, Mode mode,
                  ConvBnCtx<T>* ctx) {
  if (ctx) ctx->x = x;
  Tensor<T> c = conv2d(x, cb.conv);
  return batchnorm(c, cb.bn, mode, ctx ? &ctx->bn : nullptr);
}

template <typename T>
Tensor<T> conv_bn_backward(const ConvBn<T>& cb, const ConvBnCtx<T>& ctx,
                           const Tensor<T>& grad_out, GradBundle<T>& grads,
                           const std::string& prefix) {
  BatchNormGrads<T> bg = batchnorm_backward(grad_out, cb.bn, ctx.bn);
  accumulate_grad(grads, prefix + ".bn.gamma", bg.gamma);
  accumulate_grad(grads, prefix + ".bn.beta", bg.beta);
  ConvGrads<T> cg = conv2d_backward(ctx.x, cb.conv, bg.input);
  accumulate_grad(grads, prefix + ".conv.weight", cg.weight);
  accumulate_grad(grads, prefix + ".conv.bias", cg.bias);
  return std::move(cg.input);
}

template <typename T>
Res2NetBlockParams<T> make_block(int in_channels, int out_channels, int scale,
                                 int stride, bool first_split_conv,
                                 int mid_channels) {
  if (mid_channels == 0) mid_channels = out_channels;
  if (in_channels < 1 || out_channels < 1 || mid_channels < 1 || stride < 1) {
    throw ConfigError("block channel/stride counts must be positive");
  }
  if (scale < 1) {
    throw ConfigError("scale must be >= 1, got " + std::to_string(scale));
  }
  if (mid_channels % scale != 0) {
    throw ConfigError("scale " + std::to_string(scale) +
                      " does not divide the block's " +
                      std::to_string(mid_channels) +
                      " internal channels (n = s * w)");
  }
  Res2NetBlockParams<T> p;
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  p.mid_channels = mid_channels;
  p.scale = scale;
  p.width = mid_channels / scale;
  p.stride = stride;
  p.first_split_conv = first_split_conv;

  p.reduce = make_conv_bn<T>(mid_channels, in_channels, 1, 1, 0);
  // scale == 1 always routes its single split through a 3x3 conv so the
  // block degenerates to a plain bottleneck rather than a pair of 1x1s.
  if (scale == 1 || first_split_conv) {
    p.first = make_conv_bn<T>(p.width, p.width, 3, stride, 1);
  }
  for (int i = 1; i < scale; ++i) {
    p.group.push_back(make_conv_bn<T>(p.width, p.width, 3, stride, 1));
  }
  p.expand = make_conv_bn<T>(out_channels, mid_channels, 1, 1, 0);
  if (stride != 1 || in_channels != out_channels) {
    p.proj = make_conv_bn<T>(out_channels, in_channels, 1, stride, 0);
  }
  return p;
}

template <typename T>
Tensor<T> res2net_block(const Tensor<T>& x, Res2NetBlockParams<T>& p,
                        Mode mode, BlockCtx<T>* c) {
  if (x.rank() != 4 ||
      x.dim(1) != static_cast<std::size_t>(p.in_channels)) {
    throw ShapeError("res2net_block expects [N," +
                     std::to_string(p.in_channels) + ",H,W], got " +
                     dims_to_string(x.dims()));
  }
  Tensor<T> zb = conv_bn(x, p.reduce, mode, c ? &c->reduce : nullptr);
  if (c) c->reduce_bn_out = zb;
  Tensor<T> z = relu(zb);
  std::vector<Tensor<T>> splits = channel_split(z, p.scale);
  if (c) c->split_dims = splits[0].dims();

  // Stride-1 blocks chain the splits (x_i + y_{i-1}); a strided block
  // convolves each split independently since y_{i-1} no longer matches
  // x_i spatially.
  const bool chain = (p.stride == 1);
  std::vector<Tensor<T>> ys;
  ys.reserve(splits.size());
  if (p.first.has_value()) {
    if (c) c->first.emplace();
    Tensor<T> fb =
        conv_bn(splits[0], *p.first, mode, c ? &*c->first : nullptr);
    if (c) c->first_bn_out = fb;
    ys.push_back(relu(fb));
  } else if (chain) {
    ys.push_back(splits[0]);
  } else {
    ys.push_back(avg_pool2d(splits[0], 3, p.stride, 1));
  }
  if (c) {
    c->group.resize(p.group.size());
    c->group_bn_out.resize(p.group.size());
  }
  for (std::size_t i = 1; i < splits.size(); ++i) {
    Tensor<T> in = splits[i];
    if (chain) in += ys[i - 1];
    Tensor<T> gb =
        conv_bn(in, p.group[i - 1], mode, c ? &c->group[i - 1] : nullptr);
    if (c) c->group_bn_out[i - 1] = gb;
    ys.push_back(relu(gb));
  }
  Tensor<T> u = channel_concat(ys);
  Tensor<T> out = conv_bn(u, p.expand, mode, c ? &c->expand : nullptr);

  if (p.proj.has_value()) {
    if (c) c->proj.emplace();
    Tensor<T> sc = conv_bn(x, *p.proj, mode, c ? &*c->proj : nullptr);
    out += sc;
  } else {
    out += x;
  }
  if (c) c->pre_out = out;
  return relu(out);
}

template <typename T>
Tensor<T> res2net_block_backward(const Res2NetBlockParams<T>& p,
                                 const BlockCtx<T>& ctx,
                                 const Tensor<T>& grad_out,
                                 GradBundle<T>& grads,
                                 const std::string& prefix) {
  Tensor<T> g_pre = relu_backward(ctx.pre_out, grad_out);

  Tensor<T> g_x;
  if (p.proj.has_value()) {
    g_x = conv_bn_backward(*p.proj, *ctx.proj, g_pre, grads, prefix + "proj");
  } else {
    g_x = g_pre;
  }

  Tensor<T> g_u =
      conv_bn_backward(p.expand, ctx.expand, g_pre, grads, prefix + "expand");
  std::vector<Tensor<T>> g_y = channel_split(g_u, p.scale);
  const bool chain = (p.stride == 1);
  std::vector<Tensor<T>> g_splits(static_cast<std::size_t>(p.scale));
  for (int i = p.scale - 1; i >= 1; --i) {
    Tensor<T> g_bn = relu_backward(ctx.group_bn_out[i - 1], g_y[i]);
    Tensor<T> g_in =
        conv_bn_backward(p.group[i - 1], ctx.group[i - 1], g_bn, grads,
                         prefix + "group" + std::to_string(i + 1));
    if (chain) g_y[i - 1] += g_in;
    g_splits[i] = std::move(g_in);
  }
  if (p.first.has_value()) {
    Tensor<T> g_bn = relu_backward(ctx.first_bn_out, g_y[0]);
    g_splits[0] =
        conv_bn_backward(*p.first, *ctx.first, g_bn, grads, prefix + "first");
  } else if (chain) {
    g_splits[0] = g_y[0];
  } else {
    g_splits[0] = avg_pool2d_backward(ctx.split_dims, 3, p.stride, 1, g_y[0]);
  }
  Tensor<T> g_z = channel_concat(g_splits);
  Tensor<T> g_zbn = relu_backward(ctx.reduce_bn_out, g_z);
  g_x += conv_bn_backward(p.reduce, ctx.reduce, g_zbn, grads,
                          prefix + "reduce");
  return g_x;
}

template <typename T>
Tensor<T> bottleneck_forward(const Tensor<T>& x, Res2NetBlockParams<T>& p,
                             Mode mode) {
  if (p.scale != 1 || !p.first.has_value()) {
    throw ConfigError("bottleneck_forward requires a scale-1 block");
  }
  Tensor<T> z = relu(conv_bn(x, p.reduce, mode));
  Tensor<T> y = relu(conv_bn(z, *p.first, mode));
  Tensor<T> out = conv_bn(y, p.expand, mode);
  if (p.proj.has_value()) {
    out += conv_bn(x, *p.proj, mode);
  } else {
    out += x;
  }
  return relu(out);
}

void validate_config(const BackboneConfig& cfg) {
  if (cfg.in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (cfg.stem_channels < 1) throw ConfigError("stem_channels must be >= 1");
  if (cfg.stem_kernel < 1 || cfg.stem_kernel % 2 == 0) {
    throw ConfigError("stem_kernel must be a positive odd number, got " +
                      std::to_string(cfg.stem_kernel));
  }
  if (cfg.stem_stride < 1) throw ConfigError("stem_stride must be >= 1");
  if (cfg.stages.empty()) throw ConfigError("at least one stage required");
  if (cfg.scale < 1) throw ConfigError("scale must be >= 1");
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const StageSpec& st = cfg.stages[i];
    const std::string where = "stage " + std::to_string(i + 1);
    if (st.blocks < 1) throw ConfigError(where + ": blocks must be >= 1");
    if (st.out_channels < 1) {
      throw ConfigError(where + ": out_channels must be >= 1");
    }
    if (st.stride < 1) throw ConfigError(where + ": stride must be >= 1");
    if (st.out_channels % cfg.scale != 0) {
      throw ConfigError(where + ": scale " + std::to_string(cfg.scale) +
                        " does not divide out_channels " +
                        std::to_string(st.out_channels));
    }
  }
  if (cfg.descriptor_dim != cfg.stages.back().out_channels) {
    throw ConfigError(
        "descriptor_dim " + std::to_string(cfg.descriptor_dim) +
        " must equal the last stage's out_channels " +
        std::to_string(cfg.stages.back().out_channels));
  }
  if (cfg.num_identities < 2) {
    throw ConfigError("num_identities must be >= 2");
  }
}

std::string block_prefix(const BackboneConfig& cfg, std::size_t flat_index) {
  std::size_t seen = 0;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const std::size_t count = static_cast<std::size_t>(cfg.stages[s].blocks);
    if (flat_index < seen + count) {
      return "stage" + std::to_string(s + 1) + ".block" +
             std::to_string(flat_index - seen + 1) + ".";
    }
    seen += count;
  }
  throw ConfigError("block index " + std::to_string(flat_index) +
                    " out of range");
}

namespace {

template <typename T, typename Fn>
void visit_conv_bn(ConvBn<T>& cb, const std::string& prefix, bool with_state,
                   const Fn& fn) {
  fn(prefix + ".conv.weight", cb.conv.weight);
  fn(prefix + ".conv.bias", cb.conv.bias);
  fn(prefix + ".bn.gamma", cb.bn.gamma);
  fn(prefix + ".bn.beta", cb.bn.beta);
  if (with_state) {
    fn(prefix + ".bn.running_mean", cb.bn.running_mean);
    fn(prefix + ".bn.running_var", cb.bn.running_var);
  }
}

template <typename T, typename Fn>
void visit_block(Res2NetBlockParams<T>& b, const std::string& prefix,
                 bool with_state, const Fn& fn) {
  visit_conv_bn(b.reduce, prefix + "reduce", with_state, fn);
  if (b.first.has_value()) {
    visit_conv_bn(*b.first, prefix + "first", with_state, fn);
  }
  for (std::size_t i = 0; i < b.group.size(); ++i) {
    visit_conv_bn(b.group[i], prefix + "group" + std::to_string(i + 2),
                  with_state, fn);
  }
  visit_conv_bn(b.expand, prefix + "expand", with_state, fn);
  if (b.proj.has_value()) {
    visit_conv_bn(*b.proj, prefix + "proj", with_state, fn);
  }
}

template <typename T, typename Fn>
void visit_impl(Model<T>& m, bool with_state, const Fn& fn) {
  visit_conv_bn(m.stem, "stem", with_state, fn);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    visit_block(m.blocks[i], block_prefix(m.config, i), with_state, fn);
  }
  fn("head_id.weight", m.head_id.weight);
  fn("head_id.bias", m.head_id.bias);
  fn("head_ver.weight", m.head_ver.weight);
  fn("head_ver.bias", m.head_ver.bias);
}

}  // namespace

template <typename T>
void visit_params(Model<T>& m, const ParamVisitor<T>& fn) {
  visit_impl(m, false, fn);
}

template <typename T>
void visit_params(const Model<T>& m, const ConstParamVisitor<T>& fn) {
  visit_impl(const_cast<Model<T>&>(m), false,
             [&fn](const std::string& n, Tensor<T>& t) { fn(n, t); });
}

template <typename T>
void visit_state(Model<T>& m, const ParamVisitor<T>& fn) {
  visit_impl(m, true, fn);
}

template <typename T>
void visit_state(const Model<T>& m, const ConstParamVisitor<T>& fn) {
  visit_impl(const_cast<Model<T>&>(m), true,
             [&fn](const std::string& n, Tensor<T>& t) { fn(n, t); });
}

namespace {

template <typename T>
void init_conv(ConvParams<T>& c, Rng& rng) {
  const double fan_in = static_cast<double>(c.weight.dim(1)) *
                        static_cast<double>(c.weight.dim(2)) *
                        static_cast<double>(c.weight.dim(3));
  const double stddev = std::sqrt(2.0 / fan_in);
  for (T& v : c.weight.values()) {
    v = static_cast<T>(rng.gaussian(0.0, stddev));
  }
}

template <typename T>
void init_block(Res2NetBlockParams<T>& b, Rng& rng) {
  init_conv(b.reduce.conv, rng);
  if (b.first.has_value()) init_conv(b.first->conv, rng);
  for (ConvBn<T>& g : b.group) init_conv(g.conv, rng);
  init_conv(b.expand.conv, rng);
  if (b.proj.has_value()) init_conv(b.proj->conv, rng);
}

}  // namespace

template <typename T>
Model<T> build_backbone(const BackboneConfig& cfg, Rng& rng) {
  validate_config(cfg);
  Model<T> m;
  m.config = cfg;
  m.stem = make_conv_bn<T>(cfg.stem_channels, cfg.in_channels,
                           cfg.stem_kernel, cfg.stem_stride,
                           cfg.stem_kernel / 2);
  int in_c = cfg.stem_channels;
  for (const StageSpec& st : cfg.stages) {
    for (int b = 0; b < st.blocks; ++b) {
      const int stride = (b == 0) ? st.stride : 1;
      m.blocks.push_back(make_block<T>(in_c, st.out_channels, cfg.scale,
                                       stride, cfg.first_split_conv));
      in_c = st.out_channels;
    }
  }
  const std::size_t d = static_cast<std::size_t>(cfg.descriptor_dim);
  const std::size_t k = static_cast<std::size_t>(cfg.num_identities);
  m.head_id.weight = Tensor<T>({k, d});
  m.head_id.bias = Tensor<T>({k});
  m.head_ver.weight = Tensor<T>({2, d});
  m.head_ver.bias = Tensor<T>({2});

  init_conv(m.stem.conv, rng);
  for (Res2NetBlockParams<T>& b : m.blocks) init_block(b, rng);
  // Near-zero heads keep the initial softmax close to uniform (the ln K
  // and ln 2 first-loss checks rely on this).
  for (T& v : m.head_id.weight.values()) {
    v = static_cast<T>(rng.gaussian(0.0, 0.001));
  }
  for (T& v : m.head_ver.weight.values()) {
    v = static_cast<T>(rng.gaussian(0.0, 0.001));
  }
  return m;
}

template <typename T>
Tensor<T> backbone_forward(Model<T>& m, const Tensor<T>& images, Mode mode,
                           BackboneCtx<T>* ctx) {
  if (images.rank() != 4 ||
      images.dim(1) != static_cast<std::size_t>(m.config.in_channels)) {
    throw ShapeError("backbone expects [N," +
                     std::to_string(m.config.in_channels) + ",H,W], got " +
                     dims_to_string(images.dims()));
  }
  if (ctx) {
    *ctx = BackboneCtx<T>{};
    ctx->blocks.resize(m.blocks.size());
  }
  Tensor<T> h = conv_bn(images, m.stem, mode, ctx ? &ctx->stem : nullptr);
  if (ctx) ctx->stem_bn_out = h;
  h = relu(h);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    h = res2net_block(h, m.blocks[i], mode, ctx ? &ctx->blocks[i] : nullptr);
  }
  if (ctx) ctx->pool_in_dims = h.dims();
  return global_avg_pool(h);
}

template <typename T>
Tensor<T> backbone_backward(const Model<T>& m, const BackboneCtx<T>& ctx,
                            const Tensor<T>& grad_descriptors,
                            GradBundle<T>& grads) {
  Tensor<T> g = global_avg_pool_backward(ctx.pool_in_dims, grad_descriptors);
  for (std::size_t i = m.blocks.size(); i-- > 0;) {
    g = res2net_block_backward(m.blocks[i], ctx.blocks[i], g, grads,
                               block_prefix(m.config, i));
  }
  g = relu_backward(ctx.stem_bn_out, g);
  return conv_bn_backward(m.stem, ctx.stem, g, grads, "stem");
}

template <typename T>
Tensor<T> extract_descriptor(const Model<T>& m, const Tensor<T>& image) {
  if (image.rank() != 3) {
    throw ShapeError("extract_descriptor expects [C,H,W], got " +
                     dims_to_string(image.dims()));
  }
  Tensor<T> batch({1, image.dim(0), image.dim(1), image.dim(2)});
  std::copy(image.values().begin(), image.values().end(),
            batch.values().begin());
  // Infer mode performs no writes, so the cast cannot mutate `m`.
  Tensor<T> d = backbone_forward(const_cast<Model<T>&>(m), batch,
                                 Mode::kInfer);
  Tensor<T> f({d.dim(1)});
  std::copy(d.values().begin(), d.values().end(), f.values().begin());
  return f;
}

#define REID_INSTANTIATE_RES2NET(T)                                          \
  template Tensor<T> conv_bn<T>(const Tensor<T>&, ConvBn<T>&, Mode,          \
                                ConvBnCtx<T>*);                              \
  template Tensor<T> conv_bn_backward<T>(const ConvBn<T>&,                   \
                                         const ConvBnCtx<T>&,                \
                                         const Tensor<T>&, GradBundle<T>&,   \
                                         const std::string&);                \
  template Res2NetBlockParams<T> make_block<T>(int, int, int, int, bool,     \
                                               int);                         \
  template Tensor<T> res2net_block<T>(const Tensor<T>&,                      \
                                      Res2NetBlockParams<T>&, Mode,          \
                                      BlockCtx<T>*);                         \
  template Tensor<T> res2net_block_backward<T>(const Res2NetBlockParams<T>&, \
                                               const BlockCtx<T>&,           \
                                               const Tensor<T>&,             \
                                               GradBundle<T>&,               \
                                               const std::string&);          \
  template Tensor<T> bottleneck_forward<T>(const Tensor<T>&,                 \
                                           Res2NetBlockParams<T>&, Mode);    \
  template void visit_params<T>(                                             \
      Model<T>&,                                                             \
      const std::function<void(const std::string&, Tensor<T>&)>&);           \
  template void visit_params<T>(                                             \
      const Model<T>&,                                                       \
      const std::function<void(const std::string&, const Tensor<T>&)>&);     \
  template void visit_state<T>(                                              \
      Model<T>&,                                                             \
      const std::function<void(const std::string&, Tensor<T>&)>&);           \
  template void visit_state<T>(                                              \
      const Model<T>&,                                                       \
      const std::function<void(const std::string&, const Tensor<T>&)>&);     \
  template Model<T> build_backbone<T>(const BackboneConfig&, Rng&);          \
  template Tensor<T> backbone_forward<T>(Model<T>&, const Tensor<T>&, Mode,  \
                                         BackboneCtx<T>*);                   \
  template Tensor<T> backbone_backward<T>(const Model<T>&,                   \
                                          const BackboneCtx<T>&,             \
                                          const Tensor<T>&, GradBundle<T>&); \
  template Tensor<T> extract_descriptor<T>(const Model<T>&, const Tensor<T>&);

REID_INSTANTIATE_RES2NET(float)
REID_INSTANTIATE_RES2NET(double)

#undef REID_INSTANTIATE_RES2NET

}  // namespace reid
