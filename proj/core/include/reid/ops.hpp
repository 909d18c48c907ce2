#pragma once

#include <map>
#include <string>
#include <vector>

#include "reid/tensor.hpp"

namespace reid {

enum class Mode { kTrain, kInfer };

// Named parameter-id -> gradient map. std::map keeps iteration (and thus
// every reduction over it) in lexicographic order.
template <typename T>
using GradBundle = std::map<std::string, Tensor<T>>;

template <typename T>
void accumulate_grad(GradBundle<T>& grads, const std::string& name,
                     const Tensor<T>& g) {
  auto it = grads.find(name);
  if (it == grads.end()) {
    grads.emplace(name, g);
  } else {
    it->second.require_same_dims(g, name.c_str());
    it->second += g;
  }
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation plus per-channel bias)

template <typename T>
struct ConvParams {
  Tensor<T> weight;  // [out_channels, in_channels, kh, kw]
  Tensor<T> bias;    // [out_channels]
  int stride = 1;
  int padding = 0;
};

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

// Output spatial extent: floor((H + 2*pad - kh) / stride) + 1, which must
// be >= 1. Rows/columns that the strided window never reaches contribute
// nothing (and receive zero gradient).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& p);

// Naive quadruple-loop reference; conv2d's im2col path must match it.
template <typename T>
Tensor<T> conv2d_direct(const Tensor<T>& input, const ConvParams<T>& p);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& p,
                             const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Batch normalization

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma;         // [C]
  Tensor<T> beta;          // [C]
  Tensor<T> running_mean;  // [C]
  Tensor<T> running_var;   // [C]
  T epsilon = T(1e-5);
  T momentum = T(0.1);
};

template <typename T>
BatchNormParams<T> make_batchnorm(std::size_t channels);

// Saved by the train-mode forward pass for the backward pass.
template <typename T>
struct BatchNormCtx {
  Tensor<T> x_hat;
  std::vector<T> inv_std;  // per channel
};

// Train mode normalizes with batch statistics and updates the running
// stats in place; infer mode is a per-channel affine map from the running
// stats. ctx (train mode only) captures what the backward pass needs.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormParams<T>& p, Mode mode,
                    BatchNormCtx<T>* ctx = nullptr);

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out,
                                     const BatchNormParams<T>& p,
                                     const BatchNormCtx<T>& ctx);

// ---------------------------------------------------------------------------
// Elementwise / pooling / reshuffling

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

// Subgradient at 0 is 0: the mask passes grad only where input > 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);  // [N,C,H,W] -> [N,C]

template <typename T>
Tensor<T> global_avg_pool_backward(const std::vector<std::size_t>& input_dims,
                                   const Tensor<T>& grad_out);

// Average pooling that counts padded cells in the divisor (divides by k*k).
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, int kernel, int stride,
                     int padding);

template <typename T>
Tensor<T> avg_pool2d_backward(const std::vector<std::size_t>& input_dims,
                              int kernel, int stride, int padding,
                              const Tensor<T>& grad_out);

// Splits [N,n,H,W] into `scale` contiguous channel ranges of n/scale each.
// Throws ShapeError when scale does not divide n.
template <typename T>
std::vector<Tensor<T>> channel_split(const Tensor<T>& input, int scale);

// Exact inverse of channel_split (bitwise).
template <typename T>
Tensor<T> channel_concat(const std::vector<Tensor<T>>& parts);

// Rank-1 softmax with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// grad_in = s * (grad_out - <grad_out, s>), s being the softmax output.
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& softmax_out,
                           const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Linear map (a 1x1 convolution on a pooled descriptor)

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [K, d]
  Tensor<T> bias;    // [K]
};

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p);  // [d] -> [K]

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const LinearParams<T>& p,
                               const Tensor<T>& grad_out);

}  // namespace reid
