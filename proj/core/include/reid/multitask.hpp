#pragma once

#include <vector>

#include "reid/ops.hpp"
#include "reid/res2net.hpp"
#include "reid/tensor.hpp"

namespace reid {

// Index 0 of the verification softmax means "same person".
enum class PairLabel { kSame, kDifferent };

template <typename T>
struct PairBatch {
  Tensor<T> images_a;  // [B,C,H,W]
  Tensor<T> images_b;  // [B,C,H,W]
  std::vector<int> labels_a;
  std::vector<int> labels_b;
  std::vector<PairLabel> pair_labels;

  std::size_t size() const { return pair_labels.size(); }
};

// Throws DataError when a pair label disagrees with the identity labels or
// the shapes/lengths are inconsistent.
template <typename T>
void validate_pair_batch(const PairBatch<T>& batch);

struct LossWeights {
  double id_a = 0.5;
  double id_b = 0.5;
  double verif = 1.0;
};

template <typename T>
struct LossReport {
  T id_loss_a = 0;   // batch means
  T id_loss_b = 0;
  T verif_loss = 0;
  Tensor<T> p_hat_a;  // [B,K]
  Tensor<T> p_hat_b;  // [B,K]
  Tensor<T> q_hat;    // [B,2]

  T total(const LossWeights& w) const {
    return static_cast<T>(w.id_a) * id_loss_a +
           static_cast<T>(w.id_b) * id_loss_b +
           static_cast<T>(w.verif) * verif_loss;
  }
};

// ---------------------------------------------------------------------------
// Per-sample losses (exact analytic gradients)

template <typename T>
struct IdLossResult {
  T loss = 0;
  Tensor<T> p_hat;        // [K]
  Tensor<T> grad_f;       // [d]
  Tensor<T> grad_weight;  // [K,d]
  Tensor<T> grad_bias;    // [K]
};

// p_hat = softmax(theta_t f + b); loss = -log p_hat[target].
template <typename T>
IdLossResult<T> identification_loss(const Tensor<T>& f, int target,
                                    const LinearParams<T>& theta_t);

// f_s = (f1 - f2)^2 elementwise.
template <typename T>
Tensor<T> square_layer(const Tensor<T>& f1, const Tensor<T>& f2);

template <typename T>
struct SquareGrads {
  Tensor<T> f1;
  Tensor<T> f2;
};

template <typename T>
SquareGrads<T> square_layer_backward(const Tensor<T>& f1, const Tensor<T>& f2,
                                     const Tensor<T>& grad_fs);

template <typename T>
struct VerifLossResult {
  T loss = 0;
  Tensor<T> q_hat;        // [2]
  Tensor<T> grad_f1;      // [d]
  Tensor<T> grad_f2;      // [d]
  Tensor<T> grad_weight;  // [2,d]
  Tensor<T> grad_bias;    // [2]
};

// q_hat = softmax(theta_s (f1-f2)^2 + b); loss = -log q_hat[label].
template <typename T>
VerifLossResult<T> verification_loss(const Tensor<T>& f1, const Tensor<T>& f2,
                                     PairLabel label,
                                     const LinearParams<T>& theta_s);

// ---------------------------------------------------------------------------
// Fused siamese step

template <typename T>
struct StepResult {
  LossReport<T> report;
  GradBundle<T> grads;
};

// out[name] += w * g[name], inserting missing entries. Zero weights still
// materialize (zero) entries so the bundle covers every touched parameter.
template <typename T>
void add_scaled(GradBundle<T>& out, const GradBundle<T>& g, T w);

// Runs both branches through the shared model in train mode, computes the
// three batch-mean losses, and fuses their gradients as
// w_id_a * g_idA + w_id_b * g_idB + w_verif * g_ver. The three per-loss
// bundles are formed independently and combined with add_scaled, so the
// fusion is exactly linear in the weights.
template <typename T>
StepResult<T> multitask_step(const PairBatch<T>& batch, Model<T>& model,
                             const LossWeights& weights = LossWeights{});

}  // namespace reid
