#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "reid/ops.hpp"
#include "reid/rng.hpp"
#include "reid/tensor.hpp"

namespace reid {

// ---------------------------------------------------------------------------
// Conv + BatchNorm unit (ReLU, where present, is applied by the caller)

template <typename T>
struct ConvBn {
  ConvParams<T> conv;
  BatchNormParams<T> bn;
};

template <typename T>
struct ConvBnCtx {
  Tensor<T> x;  // conv input, saved for the weight gradient
  BatchNormCtx<T> bn;
};

template <typename T>
Tensor<T> conv_bn(const Tensor<T>& x, ConvBn<T>& cb, Mode mode,
                  ConvBnCtx<T>* ctx = nullptr);

// Accumulates "<prefix>.conv.weight" etc. into grads; returns grad w.r.t. x.
template <typename T>
Tensor<T> conv_bn_backward(const ConvBn<T>& cb, const ConvBnCtx<T>& ctx,
                           const Tensor<T>& grad_out, GradBundle<T>& grads,
                           const std::string& prefix);

// ---------------------------------------------------------------------------
// Res2Net block
//
// reduce (1x1) -> split into `scale` groups of `width` channels -> 3x3 convs
// wired in a hierarchical residual-like style -> concat -> expand (1x1) ->
// shortcut add -> ReLU. The first split passes through untouched
// (figure-style wiring); set first_split_conv for the variant that convolves
// it too. scale == 1 always owns a 3x3 conv (the `first` slot), making the
// block a plain bottleneck.

template <typename T>
struct Res2NetBlockParams {
  int in_channels = 0;
  int out_channels = 0;
  int mid_channels = 0;  // n = scale * width
  int scale = 1;
  int width = 0;
  int stride = 1;
  bool first_split_conv = false;

  ConvBn<T> reduce;                  // 1x1, in_channels -> n
  std::optional<ConvBn<T>> first;    // 3x3, w -> w, for split 1
  std::vector<ConvBn<T>> group;      // 3x3, w -> w, for splits 2..scale
  ConvBn<T> expand;                  // 1x1, n -> out_channels
  std::optional<ConvBn<T>> proj;     // 1x1 shortcut projection
};

// Allocates (zero-filled) parameter tensors for one block. mid_channels
// defaults to out_channels. Throws ConfigError unless scale >= 1 and
// scale divides mid_channels (n = s * w). A projection shortcut is created
// iff stride != 1 or in_channels != out_channels.
template <typename T>
Res2NetBlockParams<T> make_block(int in_channels, int out_channels, int scale,
                                 int stride, bool first_split_conv = false,
                                 int mid_channels = 0);

template <typename T>
struct BlockCtx {
  ConvBnCtx<T> reduce;
  Tensor<T> reduce_bn_out;  // pre-ReLU
  std::vector<std::size_t> split_dims;
  std::optional<ConvBnCtx<T>> first;
  Tensor<T> first_bn_out;
  std::vector<ConvBnCtx<T>> group;
  std::vector<Tensor<T>> group_bn_out;
  ConvBnCtx<T> expand;
  std::optional<ConvBnCtx<T>> proj;
  Tensor<T> pre_out;  // expand BN output + shortcut, pre-ReLU
};

template <typename T>
Tensor<T> res2net_block(const Tensor<T>& x, Res2NetBlockParams<T>& p,
                        Mode mode, BlockCtx<T>* ctx = nullptr);

// Accumulates parameter gradients under "<prefix>reduce.conv.weight" etc.
// and returns the gradient w.r.t. the block input.
template <typename T>
Tensor<T> res2net_block_backward(const Res2NetBlockParams<T>& p,
                                 const BlockCtx<T>& ctx,
                                 const Tensor<T>& grad_out,
                                 GradBundle<T>& grads,
                                 const std::string& prefix);

// Plain bottleneck (reduce -> single 3x3 -> expand -> shortcut) evaluated
// without any split/concat machinery; the scale-1 block must match it
// bitwise on the same weights. Forward only.
template <typename T>
Tensor<T> bottleneck_forward(const Tensor<T>& x, Res2NetBlockParams<T>& p,
                             Mode mode);

// ---------------------------------------------------------------------------
// Backbone: stem -> stages of blocks -> global average pool -> descriptor f

struct StageSpec {
  int blocks = 1;
  int out_channels = 8;
  int stride = 1;
  bool operator==(const StageSpec&) const = default;
};

struct BackboneConfig {
  int in_channels = 3;
  int stem_channels = 8;
  int stem_kernel = 3;  // odd; padded to keep stride arithmetic simple
  int stem_stride = 1;
  std::vector<StageSpec> stages{{1, 8, 1}, {1, 16, 2}};
  int scale = 4;
  int descriptor_dim = 16;  // must equal the last stage's out_channels
  int num_identities = 8;   // K
  bool first_split_conv = false;

  bool operator==(const BackboneConfig&) const = default;
};

// Throws ConfigError on an inconsistent channel plan (descriptor_dim vs last
// stage, scale divisibility, K < 2, ...).
void validate_config(const BackboneConfig& cfg);

template <typename T>
struct Model {
  BackboneConfig config;
  ConvBn<T> stem;
  std::vector<Res2NetBlockParams<T>> blocks;  // stage-major order
  LinearParams<T> head_id;   // theta_t: [K, d]
  LinearParams<T> head_ver;  // theta_s: [2, d]
};

// "stage<i>.block<j>." prefix for the flat block index (both 1-based).
std::string block_prefix(const BackboneConfig& cfg, std::size_t flat_index);

// Visitor callbacks live behind std::type_identity_t so T deduces from the
// model alone and plain lambdas convert at the call site.
template <typename T>
using ParamVisitor =
    std::type_identity_t<std::function<void(const std::string&, Tensor<T>&)>>;
template <typename T>
using ConstParamVisitor = std::type_identity_t<
    std::function<void(const std::string&, const Tensor<T>&)>>;

// Enumerates learnable parameters (conv/BN/head weights) in a fixed order.
template <typename T>
void visit_params(Model<T>& m, const ParamVisitor<T>& fn);
template <typename T>
void visit_params(const Model<T>& m, const ConstParamVisitor<T>& fn);

// Parameters plus BatchNorm running statistics (everything a checkpoint
// must carry).
template <typename T>
void visit_state(Model<T>& m, const ParamVisitor<T>& fn);
template <typename T>
void visit_state(const Model<T>& m, const ConstParamVisitor<T>& fn);

// Deterministic initialization: conv weights N(0, sqrt(2/fan_in)), BN
// gamma 1 / beta 0, head weights N(0, 0.001), all biases 0.
template <typename T>
Model<T> build_backbone(const BackboneConfig& cfg, Rng& rng);

template <typename T>
struct BackboneCtx {
  ConvBnCtx<T> stem;
  Tensor<T> stem_bn_out;
  std::vector<BlockCtx<T>> blocks;
  std::vector<std::size_t> pool_in_dims;
};

// [N,3,H,W] -> [N,d] pooled descriptors.
template <typename T>
Tensor<T> backbone_forward(Model<T>& m, const Tensor<T>& images, Mode mode,
                           BackboneCtx<T>* ctx = nullptr);

// Accumulates gradients for every backbone parameter; returns grad w.r.t.
// the input images.
template <typename T>
Tensor<T> backbone_backward(const Model<T>& m, const BackboneCtx<T>& ctx,
                            const Tensor<T>& grad_descriptors,
                            GradBundle<T>& grads);

// Single image [3,H,W] -> descriptor f [d], in infer mode. Infer mode
// never mutates the model, so a const model is safe here.
template <typename T>
Tensor<T> extract_descriptor(const Model<T>& m, const Tensor<T>& image);

}  // namespace reid
