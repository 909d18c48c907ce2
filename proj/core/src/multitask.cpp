#include "reid/multitask.hpp"

#include <cmath>
#include <string>

namespace reid {

template <typename T>
void validate_pair_batch(const PairBatch<T>& batch) {
  const std::size_t b = batch.pair_labels.size();
  if (b == 0) throw DataError("empty pair batch");
  if (batch.labels_a.size() != b || batch.labels_b.size() != b) {
    throw DataError("pair batch label lists disagree with batch size " +
                    std::to_string(b));
  }
  if (batch.images_a.rank() != 4 || batch.images_b.rank() != 4 ||
      batch.images_a.dim(0) != b || batch.images_b.dim(0) != b ||
      !batch.images_a.same_dims(batch.images_b)) {
    throw DataError("pair batch images must both be [B,C,H,W] with B = " +
                    std::to_string(b) + ", got " +
                    dims_to_string(batch.images_a.dims()) + " and " +
                    dims_to_string(batch.images_b.dims()));
  }
  for (std::size_t i = 0; i < b; ++i) {
    const bool same = batch.labels_a[i] == batch.labels_b[i];
    const bool marked_same = batch.pair_labels[i] == PairLabel::kSame;
    if (same != marked_same) {
      throw DataError("pair " + std::to_string(i) + " labeled " +
                      (marked_same ? "same" : "different") +
                      " but identities are " +
                      std::to_string(batch.labels_a[i]) + " and " +
                      std::to_string(batch.labels_b[i]));
    }
  }
}

template <typename T>
IdLossResult<T> identification_loss(const Tensor<T>& f, int target,
                                    const LinearParams<T>& theta_t) {
  const std::size_t k = theta_t.weight.dim(0);
  if (target < 0 || static_cast<std::size_t>(target) >= k) {
    throw DataError("identity label " + std::to_string(target) +
                    " out of range [0, " + std::to_string(k) + ")");
  }
  IdLossResult<T> r;
  Tensor<T> logits = linear(f, theta_t);
  r.p_hat = softmax(logits);
  r.loss = -std::log(r.p_hat[static_cast<std::size_t>(target)]);

  // d loss / d logits = p_hat - onehot(target)
  Tensor<T> dlogits = r.p_hat;
  dlogits[static_cast<std::size_t>(target)] -= T(1);
  LinearGrads<T> lg = linear_backward(f, theta_t, dlogits);
  r.grad_f = std::move(lg.input);
  r.grad_weight = std::move(lg.weight);
  r.grad_bias = std::move(lg.bias);
  return r;
}

template <typename T>
Tensor<T> square_layer(const Tensor<T>& f1, const Tensor<T>& f2) {
  f1.require_same_dims(f2, "square_layer");
  Tensor<T> out(f1.dims());
  for (std::size_t i = 0; i < f1.size(); ++i) {
    const T d = f1[i] - f2[i];
    out[i] = d * d;
  }
  return out;
}

template <typename T>
SquareGrads<T> square_layer_backward(const Tensor<T>& f1, const Tensor<T>& f2,
                                     const Tensor<T>& grad_fs) {
  f1.require_same_dims(f2, "square_layer_backward");
  f1.require_same_dims(grad_fs, "square_layer_backward");
  SquareGrads<T> g{Tensor<T>(f1.dims()), Tensor<T>(f1.dims())};
  for (std::size_t i = 0; i < f1.size(); ++i) {
    const T d = T(2) * (f1[i] - f2[i]) * grad_fs[i];
    g.f1[i] = d;
    g.f2[i] = -d;
  }
  return g;
}

template <typename T>
VerifLossResult<T> verification_loss(const Tensor<T>& f1, const Tensor<T>& f2,
                                     PairLabel label,
                                     const LinearParams<T>& theta_s) {
  VerifLossResult<T> r;
  Tensor<T> fs = square_layer(f1, f2);
  Tensor<T> logits = linear(fs, theta_s);
  r.q_hat = softmax(logits);
  const std::size_t target = (label == PairLabel::kSame) ? 0 : 1;
  r.loss = -std::log(r.q_hat[target]);

  Tensor<T> dlogits = r.q_hat;
  dlogits[target] -= T(1);
  LinearGrads<T> lg = linear_backward(fs, theta_s, dlogits);
  SquareGrads<T> sg = square_layer_backward(f1, f2, lg.input);
  r.grad_f1 = std::move(sg.f1);
  r.grad_f2 = std::move(sg.f2);
  r.grad_weight = std::move(lg.weight);
  r.grad_bias = std::move(lg.bias);
  return r;
}

template <typename T>
void add_scaled(GradBundle<T>& out, const GradBundle<T>& g, T w) {
  for (const auto& [name, grad] : g) {
    auto it = out.find(name);
    if (it == out.end()) {
      Tensor<T> t = grad;
      t *= w;
      out.emplace(name, std::move(t));
    } else {
      it->second.require_same_dims(grad, name.c_str());
      for (std::size_t i = 0; i < grad.size(); ++i) {
        it->second[i] += w * grad[i];
      }
    }
  }
}

namespace {

// Copies row i of a [B,d] matrix into a [d] vector.
template <typename T>
Tensor<T> matrix_row(const Tensor<T>& m, std::size_t i) {
  const std::size_t d = m.dim(1);
  Tensor<T> r({d});
  for (std::size_t j = 0; j < d; ++j) r[j] = m.at(i, j);
  return r;
}

template <typename T>
void add_row(Tensor<T>& m, std::size_t i, const Tensor<T>& v, T w) {
  for (std::size_t j = 0; j < m.dim(1); ++j) m.at(i, j) += w * v[j];
}

}  // namespace

template <typename T>
StepResult<T> multitask_step(const PairBatch<T>& batch, Model<T>& model,
                             const LossWeights& weights) {
  validate_pair_batch(batch);
  const std::size_t b = batch.size();
  const T inv_b = T(1) / static_cast<T>(b);
  const std::size_t k = model.head_id.weight.dim(0);

  BackboneCtx<T> ctx_a, ctx_b;
  Tensor<T> desc_a = backbone_forward(model, batch.images_a, Mode::kTrain,
                                      &ctx_a);
  Tensor<T> desc_b = backbone_forward(model, batch.images_b, Mode::kTrain,
                                      &ctx_b);

  StepResult<T> out;
  out.report.p_hat_a = Tensor<T>({b, k});
  out.report.p_hat_b = Tensor<T>({b, k});
  out.report.q_hat = Tensor<T>({b, 2});

  // One bundle per loss; each is the gradient of that batch-mean loss alone.
  GradBundle<T> g_id_a, g_id_b, g_ver;
  Tensor<T> ddesc_a_id(desc_a.dims()), ddesc_b_id(desc_b.dims());
  Tensor<T> ddesc_a_ver(desc_a.dims()), ddesc_b_ver(desc_b.dims());

  for (std::size_t i = 0; i < b; ++i) {
    Tensor<T> fa = matrix_row(desc_a, i);
    Tensor<T> fb = matrix_row(desc_b, i);

    IdLossResult<T> ia = identification_loss(fa, batch.labels_a[i],
                                             model.head_id);
    IdLossResult<T> ib = identification_loss(fb, batch.labels_b[i],
                                             model.head_id);
    VerifLossResult<T> v = verification_loss(fa, fb, batch.pair_labels[i],
                                             model.head_ver);

    out.report.id_loss_a += inv_b * ia.loss;
    out.report.id_loss_b += inv_b * ib.loss;
    out.report.verif_loss += inv_b * v.loss;
    for (std::size_t j = 0; j < k; ++j) {
      out.report.p_hat_a.at(i, j) = ia.p_hat[j];
      out.report.p_hat_b.at(i, j) = ib.p_hat[j];
    }
    out.report.q_hat.at(i, 0) = v.q_hat[0];
    out.report.q_hat.at(i, 1) = v.q_hat[1];

    ia.grad_weight *= inv_b;
    ia.grad_bias *= inv_b;
    accumulate_grad(g_id_a, "head_id.weight", ia.grad_weight);
    accumulate_grad(g_id_a, "head_id.bias", ia.grad_bias);
    ib.grad_weight *= inv_b;
    ib.grad_bias *= inv_b;
    accumulate_grad(g_id_b, "head_id.weight", ib.grad_weight);
    accumulate_grad(g_id_b, "head_id.bias", ib.grad_bias);
    v.grad_weight *= inv_b;
    v.grad_bias *= inv_b;
    accumulate_grad(g_ver, "head_ver.weight", v.grad_weight);
    accumulate_grad(g_ver, "head_ver.bias", v.grad_bias);

    add_row(ddesc_a_id, i, ia.grad_f, inv_b);
    add_row(ddesc_b_id, i, ib.grad_f, inv_b);
    add_row(ddesc_a_ver, i, v.grad_f1, inv_b);
    add_row(ddesc_b_ver, i, v.grad_f2, inv_b);
  }

  backbone_backward(model, ctx_a, ddesc_a_id, g_id_a);
  backbone_backward(model, ctx_b, ddesc_b_id, g_id_b);
  backbone_backward(model, ctx_a, ddesc_a_ver, g_ver);
  backbone_backward(model, ctx_b, ddesc_b_ver, g_ver);

  add_scaled(out.grads, g_id_a, static_cast<T>(weights.id_a));
  add_scaled(out.grads, g_id_b, static_cast<T>(weights.id_b));
  add_scaled(out.grads, g_ver, static_cast<T>(weights.verif));
  return out;
}

#define REID_INSTANTIATE_MULTITASK(T)                                         \
  template void validate_pair_batch<T>(const PairBatch<T>&);                  \
  template IdLossResult<T> identification_loss<T>(const Tensor<T>&, int,      \
                                                  const LinearParams<T>&);    \
  template Tensor<T> square_layer<T>(const Tensor<T>&, const Tensor<T>&);     \
  template SquareGrads<T> square_layer_backward<T>(const Tensor<T>&,          \
                                                   const Tensor<T>&,          \
                                                   const Tensor<T>&);         \
  template VerifLossResult<T> verification_loss<T>(const Tensor<T>&,          \
                                                   const Tensor<T>&,          \
                                                   PairLabel,                 \
                                                   const LinearParams<T>&);   \
  template void add_scaled<T>(GradBundle<T>&, const GradBundle<T>&, T);       \
  template StepResult<T> multitask_step<T>(const PairBatch<T>&, Model<T>&,    \
                                           const LossWeights&);

REID_INSTANTIATE_MULTITASK(float)
REID_INSTANTIATE_MULTITASK(double)

#undef REID_INSTANTIATE_MULTITASK

}  // namespace reid
