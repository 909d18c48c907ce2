#include "reid/ops.hpp"

#include <algorithm>
#include <cmath>

namespace reid {

namespace {

template <typename T>
void check_conv_shapes(const Tensor<T>& input, const ConvParams<T>& p) {
  if (input.rank() != 4) {
    throw ShapeError("conv2d input must be [N,C,H,W], got " +
                     dims_to_string(input.dims()));
  }
  if (p.weight.rank() != 4) {
    throw ShapeError("conv2d weight must be [Cout,Cin,kh,kw], got " +
                     dims_to_string(p.weight.dims()));
  }
  if (input.dim(1) != p.weight.dim(1)) {
    throw ShapeError("conv2d channel mismatch: input " +
                     dims_to_string(input.dims()) + " vs weight " +
                     dims_to_string(p.weight.dims()));
  }
  if (p.bias.rank() != 1 || p.bias.dim(0) != p.weight.dim(0)) {
    throw ShapeError("conv2d bias dims " + dims_to_string(p.bias.dims()) +
                     " do not match weight " + dims_to_string(p.weight.dims()));
  }
  if (p.stride < 1 || p.padding < 0) {
    throw ShapeError("conv2d stride/padding out of range");
  }
}

inline std::size_t out_extent(std::size_t in, int kernel, int stride,
                              int padding, const char* what) {
  const long long span =
      static_cast<long long>(in) + 2ll * padding - kernel;
  if (span < 0) {
    throw ShapeError(std::string(what) + ": kernel " + std::to_string(kernel) +
                     " larger than padded input " + std::to_string(in));
  }
  return static_cast<std::size_t>(span / stride) + 1;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Tensor<T> conv2d_direct(const Tensor<T>& input, const ConvParams<T>& p) {
  check_conv_shapes(input, p);
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t cout = p.weight.dim(0), kh = p.weight.dim(2),
                    kw = p.weight.dim(3);
  const std::size_t oh = out_extent(h, static_cast<int>(kh), p.stride,
                                    p.padding, "conv2d");
  const std::size_t ow = out_extent(w, static_cast<int>(kw), p.stride,
                                    p.padding, "conv2d");

  Tensor<T> out({n, cout, oh, ow});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oc = 0; oc < cout; ++oc) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          T acc = p.bias[oc];
          for (std::size_t ic = 0; ic < cin; ++ic) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const long long iy =
                  static_cast<long long>(y) * p.stride + ky - p.padding;
              if (iy < 0 || iy >= static_cast<long long>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long long ix =
                    static_cast<long long>(x) * p.stride + kx - p.padding;
                if (ix < 0 || ix >= static_cast<long long>(w)) continue;
                acc += input.at(b, ic, iy, ix) * p.weight.at(oc, ic, ky, kx);
              }
            }
          }
          out.at(b, oc, y, x) = acc;
        }
      }
    }
  }
  return out;
}

// im2col + flat matmul. Matches conv2d_direct up to summation order.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& p) {
  check_conv_shapes(input, p);
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t cout = p.weight.dim(0), kh = p.weight.dim(2),
                    kw = p.weight.dim(3);
  const std::size_t oh = out_extent(h, static_cast<int>(kh), p.stride,
                                    p.padding, "conv2d");
  const std::size_t ow = out_extent(w, static_cast<int>(kw), p.stride,
                                    p.padding, "conv2d");

  const std::size_t patch = cin * kh * kw;
  const std::size_t cols = oh * ow;
  std::vector<T> col(patch * cols);
  Tensor<T> out({n, cout, oh, ow});

  for (std::size_t b = 0; b < n; ++b) {
    // im2col: col[r * cols + c] = input patch value r at output position c.
    std::size_t r = 0;
    for (std::size_t ic = 0; ic < cin; ++ic) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx, ++r) {
          T* dst = col.data() + r * cols;
          for (std::size_t y = 0; y < oh; ++y) {
            const long long iy =
                static_cast<long long>(y) * p.stride + ky - p.padding;
            if (iy < 0 || iy >= static_cast<long long>(h)) {
              std::fill(dst + y * ow, dst + (y + 1) * ow, T(0));
              continue;
            }
            const T* src = &input.at(b, ic, static_cast<std::size_t>(iy), 0);
            for (std::size_t x = 0; x < ow; ++x) {
              const long long ix =
                  static_cast<long long>(x) * p.stride + kx - p.padding;
              dst[y * ow + x] =
                  (ix < 0 || ix >= static_cast<long long>(w)) ? T(0) : src[ix];
            }
          }
        }
      }
    }
    // out[oc, :] = weight_row(oc) . col + bias
    for (std::size_t oc = 0; oc < cout; ++oc) {
      T* orow = &out.at(b, oc, 0, 0);
      std::fill(orow, orow + cols, p.bias[oc]);
      const T* wrow = &p.weight.at(oc, 0, 0, 0);
      for (std::size_t k = 0; k < patch; ++k) {
        const T wv = wrow[k];
        if (wv == T(0)) continue;
        const T* crow = col.data() + k * cols;
        for (std::size_t c = 0; c < cols; ++c) orow[c] += wv * crow[c];
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& p,
                             const Tensor<T>& grad_out) {
  check_conv_shapes(input, p);
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t cout = p.weight.dim(0), kh = p.weight.dim(2),
                    kw = p.weight.dim(3);
  const std::size_t oh = out_extent(h, static_cast<int>(kh), p.stride,
                                    p.padding, "conv2d_backward");
  const std::size_t ow = out_extent(w, static_cast<int>(kw), p.stride,
                                    p.padding, "conv2d_backward");
  const std::vector<std::size_t> expect{n, cout, oh, ow};
  if (grad_out.dims() != expect) {
    throw ShapeError("conv2d_backward grad_out dims " +
                     dims_to_string(grad_out.dims()) + " vs forward output " +
                     dims_to_string(expect));
  }

  ConvGrads<T> g{Tensor<T>(input.dims()), Tensor<T>(p.weight.dims()),
                 Tensor<T>(p.bias.dims())};
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oc = 0; oc < cout; ++oc) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          const T go = grad_out.at(b, oc, y, x);
          if (go == T(0)) continue;
          g.bias[oc] += go;
          for (std::size_t ic = 0; ic < cin; ++ic) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const long long iy =
                  static_cast<long long>(y) * p.stride + ky - p.padding;
              if (iy < 0 || iy >= static_cast<long long>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long long ix =
                    static_cast<long long>(x) * p.stride + kx - p.padding;
                if (ix < 0 || ix >= static_cast<long long>(w)) continue;
                g.weight.at(oc, ic, ky, kx) += go * input.at(b, ic, iy, ix);
                g.input.at(b, ic, iy, ix) += go * p.weight.at(oc, ic, ky, kx);
              }
            }
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// batchnorm

template <typename T>
BatchNormParams<T> make_batchnorm(std::size_t channels) {
  BatchNormParams<T> p;
  p.gamma = Tensor<T>::full({channels}, T(1));
  p.beta = Tensor<T>({channels});
  p.running_mean = Tensor<T>({channels});
  p.running_var = Tensor<T>::full({channels}, T(1));
  return p;
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormParams<T>& p, Mode mode,
                    BatchNormCtx<T>* ctx) {
  if (input.rank() != 4) {
    throw ShapeError("batchnorm input must be [N,C,H,W], got " +
                     dims_to_string(input.dims()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  if (p.gamma.dim(0) != c) {
    throw ShapeError("batchnorm channel mismatch: input " +
                     dims_to_string(input.dims()) + " vs gamma " +
                     dims_to_string(p.gamma.dims()));
  }
  const std::size_t m = n * h * w;
  Tensor<T> out(input.dims());

  if (mode == Mode::kInfer) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T inv = T(1) / std::sqrt(p.running_var[ch] + p.epsilon);
      const T scale = p.gamma[ch] * inv;
      const T shift = p.beta[ch] - scale * p.running_mean[ch];
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x)
            out.at(b, ch, y, x) = scale * input.at(b, ch, y, x) + shift;
    }
    return out;
  }

  if (ctx) {
    ctx->x_hat = Tensor<T>(input.dims());
    ctx->inv_std.assign(c, T(0));
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    T sum = 0, sq = 0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const T v = input.at(b, ch, y, x);
          sum += v;
          sq += v * v;
        }
    const T mean = sum / static_cast<T>(m);
    T var = sq / static_cast<T>(m) - mean * mean;
    if (var < T(0)) var = T(0);  // cancellation guard
    const T inv = T(1) / std::sqrt(var + p.epsilon);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const T xh = (input.at(b, ch, y, x) - mean) * inv;
          out.at(b, ch, y, x) = p.gamma[ch] * xh + p.beta[ch];
          if (ctx) ctx->x_hat.at(b, ch, y, x) = xh;
        }
    if (ctx) ctx->inv_std[ch] = inv;

    // Running stats use the unbiased variance, like the usual frameworks.
    const T unbiased =
        m > 1 ? var * static_cast<T>(m) / static_cast<T>(m - 1) : var;
    p.running_mean[ch] = (T(1) - p.momentum) * p.running_mean[ch] +
                         p.momentum * mean;
    p.running_var[ch] = (T(1) - p.momentum) * p.running_var[ch] +
                        p.momentum * unbiased;
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out,
                                     const BatchNormParams<T>& p,
                                     const BatchNormCtx<T>& ctx) {
  grad_out.require_same_dims(ctx.x_hat, "batchnorm_backward");
  const std::size_t n = grad_out.dim(0), c = grad_out.dim(1),
                    h = grad_out.dim(2), w = grad_out.dim(3);
  const std::size_t m = n * h * w;

  BatchNormGrads<T> g{Tensor<T>(grad_out.dims()), Tensor<T>({c}),
                      Tensor<T>({c})};
  for (std::size_t ch = 0; ch < c; ++ch) {
    T sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const T dy = grad_out.at(b, ch, y, x);
          sum_dy += dy;
          sum_dy_xhat += dy * ctx.x_hat.at(b, ch, y, x);
        }
    g.beta[ch] = sum_dy;
    g.gamma[ch] = sum_dy_xhat;

    const T k = p.gamma[ch] * ctx.inv_std[ch] / static_cast<T>(m);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const T dy = grad_out.at(b, ch, y, x);
          const T xh = ctx.x_hat.at(b, ch, y, x);
          g.input.at(b, ch, y, x) =
              k * (static_cast<T>(m) * dy - sum_dy - xh * sum_dy_xhat);
        }
  }
  return g;
}

// ---------------------------------------------------------------------------
// relu / pooling / split / softmax / linear

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.dims());
  for (std::size_t i = 0; i < input.size(); ++i)
    out[i] = input[i] > T(0) ? input[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  input.require_same_dims(grad_out, "relu_backward");
  Tensor<T> g(input.dims());
  for (std::size_t i = 0; i < input.size(); ++i)
    g[i] = input[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  if (input.rank() != 4) {
    throw ShapeError("global_avg_pool input must be [N,C,H,W], got " +
                     dims_to_string(input.dims()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  Tensor<T> out({n, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T sum = 0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) sum += input.at(b, ch, y, x);
      out.at(b, ch) = sum / static_cast<T>(h * w);
    }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const std::vector<std::size_t>& input_dims,
                                   const Tensor<T>& grad_out) {
  if (input_dims.size() != 4) {
    throw ShapeError("global_avg_pool_backward needs 4-D input dims, got " +
                     dims_to_string(input_dims));
  }
  const std::size_t n = input_dims[0], c = input_dims[1], h = input_dims[2],
                    w = input_dims[3];
  if (grad_out.rank() != 2 || grad_out.dim(0) != n || grad_out.dim(1) != c) {
    throw ShapeError("global_avg_pool_backward grad dims " +
                     dims_to_string(grad_out.dims()) + " vs input " +
                     dims_to_string(input_dims));
  }
  Tensor<T> g(input_dims);
  const T scale = T(1) / static_cast<T>(h * w);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T v = grad_out.at(b, ch) * scale;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) g.at(b, ch, y, x) = v;
    }
  return g;
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, int kernel, int stride,
                     int padding) {
  if (input.rank() != 4) {
    throw ShapeError("avg_pool2d input must be [N,C,H,W], got " +
                     dims_to_string(input.dims()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t oh = out_extent(h, kernel, stride, padding, "avg_pool2d");
  const std::size_t ow = out_extent(w, kernel, stride, padding, "avg_pool2d");
  const T scale = T(1) / static_cast<T>(kernel * kernel);

  Tensor<T> out({n, c, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          T sum = 0;
          for (int ky = 0; ky < kernel; ++ky) {
            const long long iy =
                static_cast<long long>(y) * stride + ky - padding;
            if (iy < 0 || iy >= static_cast<long long>(h)) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const long long ix =
                  static_cast<long long>(x) * stride + kx - padding;
              if (ix < 0 || ix >= static_cast<long long>(w)) continue;
              sum += input.at(b, ch, iy, ix);
            }
          }
          out.at(b, ch, y, x) = sum * scale;
        }
  return out;
}

template <typename T>
Tensor<T> avg_pool2d_backward(const std::vector<std::size_t>& input_dims,
                              int kernel, int stride, int padding,
                              const Tensor<T>& grad_out) {
  const std::size_t n = input_dims[0], c = input_dims[1], h = input_dims[2],
                    w = input_dims[3];
  const T scale = T(1) / static_cast<T>(kernel * kernel);
  Tensor<T> g(input_dims);
  const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const T v = grad_out.at(b, ch, y, x) * scale;
          for (int ky = 0; ky < kernel; ++ky) {
            const long long iy =
                static_cast<long long>(y) * stride + ky - padding;
            if (iy < 0 || iy >= static_cast<long long>(h)) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const long long ix =
                  static_cast<long long>(x) * stride + kx - padding;
              if (ix < 0 || ix >= static_cast<long long>(w)) continue;
              g.at(b, ch, iy, ix) += v;
            }
          }
        }
  return g;
}

template <typename T>
std::vector<Tensor<T>> channel_split(const Tensor<T>& input, int scale) {
  if (input.rank() != 4) {
    throw ShapeError("channel_split input must be [N,C,H,W], got " +
                     dims_to_string(input.dims()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  if (scale < 1 || c % static_cast<std::size_t>(scale) != 0) {
    throw ShapeError("channel_split: scale " + std::to_string(scale) +
                     " does not divide " + std::to_string(c) + " channels");
  }
  const std::size_t width = c / static_cast<std::size_t>(scale);
  std::vector<Tensor<T>> parts;
  parts.reserve(static_cast<std::size_t>(scale));
  for (int s = 0; s < scale; ++s) {
    Tensor<T> part({n, width, h, w});
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < width; ++ch) {
        const T* src = &input.at(b, s * width + ch, 0, 0);
        T* dst = &part.at(b, ch, 0, 0);
        std::copy(src, src + h * w, dst);
      }
    parts.push_back(std::move(part));
  }
  return parts;
}

template <typename T>
Tensor<T> channel_concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("channel_concat: no parts");
  const std::size_t n = parts[0].dim(0), h = parts[0].dim(2),
                    w = parts[0].dim(3);
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (p.rank() != 4 || p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
      throw ShapeError("channel_concat: part dims " + dims_to_string(p.dims()) +
                       " incompatible with " + dims_to_string(parts[0].dims()));
    }
    c += p.dim(1);
  }
  Tensor<T> out({n, c, h, w});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < p.dim(1); ++ch) {
        const T* src = &p.at(b, ch, 0, 0);
        T* dst = &out.at(b, offset + ch, 0, 0);
        std::copy(src, src + h * w, dst);
      }
    offset += p.dim(1);
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 1 || logits.size() == 0) {
    throw ShapeError("softmax expects a rank-1 tensor, got " +
                     dims_to_string(logits.dims()));
  }
  const T mx = *std::max_element(logits.values().begin(),
                                 logits.values().end());
  Tensor<T> out(logits.dims());
  T sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= sum;
  return out;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& softmax_out,
                           const Tensor<T>& grad_out) {
  softmax_out.require_same_dims(grad_out, "softmax_backward");
  T dot = 0;
  for (std::size_t i = 0; i < softmax_out.size(); ++i) {
    dot += grad_out[i] * softmax_out[i];
  }
  Tensor<T> grad_in(softmax_out.dims());
  for (std::size_t i = 0; i < softmax_out.size(); ++i) {
    grad_in[i] = softmax_out[i] * (grad_out[i] - dot);
  }
  return grad_in;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
  if (x.rank() != 1 || p.weight.rank() != 2 || p.weight.dim(1) != x.dim(0)) {
    throw ShapeError("linear: input " + dims_to_string(x.dims()) +
                     " vs weight " + dims_to_string(p.weight.dims()));
  }
  const std::size_t k = p.weight.dim(0), d = p.weight.dim(1);
  Tensor<T> out({k});
  for (std::size_t i = 0; i < k; ++i) {
    T acc = p.bias[i];
    const T* wrow = &p.weight.at(i, 0);
    for (std::size_t j = 0; j < d; ++j) acc += wrow[j] * x[j];
    out[i] = acc;
  }
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const LinearParams<T>& p,
                               const Tensor<T>& grad_out) {
  if (grad_out.rank() != 1 || grad_out.dim(0) != p.weight.dim(0)) {
    throw ShapeError("linear_backward grad dims " +
                     dims_to_string(grad_out.dims()) + " vs weight " +
                     dims_to_string(p.weight.dims()));
  }
  const std::size_t k = p.weight.dim(0), d = p.weight.dim(1);
  LinearGrads<T> g{Tensor<T>(x.dims()), Tensor<T>(p.weight.dims()),
                   Tensor<T>(p.bias.dims())};
  for (std::size_t i = 0; i < k; ++i) {
    const T go = grad_out[i];
    g.bias[i] = go;
    const T* wrow = &p.weight.at(i, 0);
    T* gwrow = &g.weight.at(i, 0);
    for (std::size_t j = 0; j < d; ++j) {
      gwrow[j] = go * x[j];
      g.input[j] += go * wrow[j];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

#define REID_INSTANTIATE_OPS(T)                                               \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const ConvParams<T>&);       \
  template Tensor<T> conv2d_direct<T>(const Tensor<T>&, const ConvParams<T>&);\
  template ConvGrads<T> conv2d_backward<T>(const Tensor<T>&,                  \
                                           const ConvParams<T>&,              \
                                           const Tensor<T>&);                 \
  template BatchNormParams<T> make_batchnorm<T>(std::size_t);                 \
  template Tensor<T> batchnorm<T>(const Tensor<T>&, BatchNormParams<T>&,      \
                                  Mode, BatchNormCtx<T>*);                    \
  template BatchNormGrads<T> batchnorm_backward<T>(const Tensor<T>&,          \
                                                   const BatchNormParams<T>&, \
                                                   const BatchNormCtx<T>&);   \
  template Tensor<T> relu<T>(const Tensor<T>&);                               \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                    \
  template Tensor<T> global_avg_pool_backward<T>(                             \
      const std::vector<std::size_t>&, const Tensor<T>&);                     \
  template Tensor<T> avg_pool2d<T>(const Tensor<T>&, int, int, int);          \
  template Tensor<T> avg_pool2d_backward<T>(const std::vector<std::size_t>&,  \
                                            int, int, int, const Tensor<T>&); \
  template std::vector<Tensor<T>> channel_split<T>(const Tensor<T>&, int);    \
  template Tensor<T> channel_concat<T>(const std::vector<Tensor<T>>&);        \
  template Tensor<T> softmax<T>(const Tensor<T>&);                            \
  template Tensor<T> softmax_backward<T>(const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> linear<T>(const Tensor<T>&, const LinearParams<T>&);     \
  template LinearGrads<T> linear_backward<T>(const Tensor<T>&,                \
                                             const LinearParams<T>&,          \
                                             const Tensor<T>&);

REID_INSTANTIATE_OPS(float)
REID_INSTANTIATE_OPS(double)

#undef REID_INSTANTIATE_OPS

}  // namespace reid
