#include "reid/gradcheck.hpp"

#include <cmath>
#include <set>
#include <utility>

#include "reid/multitask.hpp"
#include "reid/ops.hpp"
#include "reid/res2net.hpp"

namespace reid {

GradCheckReport finite_diff_check(const std::function<double()>& forward,
                                  std::span<Tensor<double>* const> inputs,
                                  const std::vector<Tensor<double>>& analytic,
                                  double eps,
                                  std::size_t max_coords_per_tensor,
                                  Rng& rng) {
  if (inputs.size() != analytic.size()) {
    throw ShapeError("finite_diff_check: " + std::to_string(inputs.size()) +
                     " inputs vs " + std::to_string(analytic.size()) +
                     " analytic gradients");
  }
  std::vector<std::pair<double, double>> pairs;  // (analytic, numeric)
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor<double>& x = *inputs[t];
    if (!x.same_dims(analytic[t])) {
      throw ShapeError("finite_diff_check: input " + std::to_string(t) +
                       " is " + dims_to_string(x.dims()) +
                       " but its gradient is " +
                       dims_to_string(analytic[t].dims()));
    }
    std::vector<std::size_t> coords;
    if (max_coords_per_tensor == 0 || x.size() <= max_coords_per_tensor) {
      coords.resize(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) coords[i] = i;
    } else {
      std::set<std::size_t> picked;
      while (picked.size() < max_coords_per_tensor) {
        picked.insert(rng.uniform_int(x.size()));
      }
      coords.assign(picked.begin(), picked.end());
    }
    for (std::size_t c : coords) {
      const double orig = x[c];
      x[c] = orig + eps;
      const double hi = forward();
      x[c] = orig - eps;
      const double lo = forward();
      x[c] = orig;
      pairs.emplace_back(analytic[t][c], (hi - lo) / (2.0 * eps));
    }
  }
  double gmax = 0.0;
  for (const auto& [a, n] : pairs) {
    gmax = std::max(gmax, std::max(std::fabs(a), std::fabs(n)));
  }
  const double scale = std::max(gmax, 1e-12);
  GradCheckReport rep;
  rep.coords_checked = pairs.size();
  for (const auto& [a, n] : pairs) {
    rep.max_rel_error = std::max(rep.max_rel_error, std::fabs(a - n) / scale);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Named suite

namespace {

Tensor<double> randn(std::vector<std::size_t> dims, Rng& rng,
                     double scale = 1.0) {
  Tensor<double> t(std::move(dims));
  for (double& v : t.values()) v = scale * rng.gaussian();
  return t;
}

// |v| >= 0.1 so an eps-sized nudge cannot cross the ReLU kink.
Tensor<double> randn_off_zero(std::vector<std::size_t> dims, Rng& rng) {
  Tensor<double> t(std::move(dims));
  for (double& v : t.values()) {
    const double mag = 0.1 + rng.uniform();
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double check(const std::function<double()>& forward,
             std::vector<Tensor<double>*> inputs,
             std::vector<Tensor<double>> analytic,
             std::size_t max_coords, Rng& rng) {
  return finite_diff_check(forward, inputs, analytic, 1e-5, max_coords, rng)
      .max_rel_error;
}

double conv_rep(int kernel, int stride, int padding, Rng& rng) {
  Tensor<double> x = randn({2, 3, 6, 5}, rng);
  ConvParams<double> p;
  p.weight = randn({4, 3, static_cast<std::size_t>(kernel),
                    static_cast<std::size_t>(kernel)},
                   rng, 0.5);
  p.bias = randn({4}, rng, 0.2);
  p.stride = stride;
  p.padding = padding;
  Tensor<double> out = conv2d(x, p);
  Tensor<double> r = randn(out.dims(), rng);
  ConvGrads<double> g = conv2d_backward(x, p, r);
  auto loss = [&] { return dot(conv2d(x, p), r); };
  return check(loss, {&x, &p.weight, &p.bias},
               {g.input, g.weight, g.bias}, 24, rng);
}

double batchnorm_rep(Rng& rng) {
  Tensor<double> x = randn({4, 3, 3, 2}, rng);
  BatchNormParams<double> p = make_batchnorm<double>(3);
  for (double& v : p.gamma.values()) v = rng.uniform(0.75, 1.25);
  for (double& v : p.beta.values()) v = 0.2 * rng.gaussian();
  BatchNormCtx<double> ctx;
  Tensor<double> out = batchnorm(x, p, Mode::kTrain, &ctx);
  Tensor<double> r = randn(out.dims(), rng);
  BatchNormGrads<double> g = batchnorm_backward(r, p, ctx);
  auto loss = [&] { return dot(batchnorm(x, p, Mode::kTrain), r); };
  return check(loss, {&x, &p.gamma, &p.beta},
               {g.input, g.gamma, g.beta}, 0, rng);
}

double relu_rep(Rng& rng) {
  Tensor<double> x = randn_off_zero({2, 3, 4, 3}, rng);
  Tensor<double> r = randn(x.dims(), rng);
  Tensor<double> g = relu_backward(x, r);
  auto loss = [&] { return dot(relu(x), r); };
  return check(loss, {&x}, {g}, 0, rng);
}

double gap_rep(Rng& rng) {
  Tensor<double> x = randn({2, 3, 4, 5}, rng);
  Tensor<double> out = global_avg_pool(x);
  Tensor<double> r = randn(out.dims(), rng);
  Tensor<double> g = global_avg_pool_backward(x.dims(), r);
  auto loss = [&] { return dot(global_avg_pool(x), r); };
  return check(loss, {&x}, {g}, 40, rng);
}

double avg_pool_rep(Rng& rng) {
  Tensor<double> x = randn({2, 3, 6, 5}, rng);
  Tensor<double> out = avg_pool2d(x, 3, 2, 1);
  Tensor<double> r = randn(out.dims(), rng);
  Tensor<double> g = avg_pool2d_backward(x.dims(), 3, 2, 1, r);
  auto loss = [&] { return dot(avg_pool2d(x, 3, 2, 1), r); };
  return check(loss, {&x}, {g}, 40, rng);
}

double linear_rep(Rng& rng) {
  Tensor<double> x = randn({7}, rng);
  LinearParams<double> p;
  p.weight = randn({4, 7}, rng, 0.5);
  p.bias = randn({4}, rng, 0.2);
  Tensor<double> r = randn({4}, rng);
  LinearGrads<double> g = linear_backward(x, p, r);
  auto loss = [&] { return dot(linear(x, p), r); };
  return check(loss, {&x, &p.weight, &p.bias},
               {g.input, g.weight, g.bias}, 0, rng);
}

double softmax_rep(Rng& rng) {
  Tensor<double> z = randn({6}, rng);
  Tensor<double> r = randn({6}, rng);
  Tensor<double> s = softmax(z);
  Tensor<double> g = softmax_backward(s, r);
  auto loss = [&] { return dot(softmax(z), r); };
  return check(loss, {&z}, {g}, 0, rng);
}

double square_rep(Rng& rng) {
  Tensor<double> f1 = randn({9}, rng);
  Tensor<double> f2 = randn({9}, rng);
  Tensor<double> r = randn({9}, rng);
  SquareGrads<double> g = square_layer_backward(f1, f2, r);
  auto loss = [&] { return dot(square_layer(f1, f2), r); };
  return check(loss, {&f1, &f2}, {g.f1, g.f2}, 0, rng);
}

void randomize_conv_bn(ConvBn<double>& cb, Rng& rng) {
  for (double& v : cb.conv.weight.values()) v = 0.4 * rng.gaussian();
  for (double& v : cb.conv.bias.values()) v = 0.1 * rng.gaussian();
  for (double& v : cb.bn.gamma.values()) v = rng.uniform(0.8, 1.25);
  for (double& v : cb.bn.beta.values()) v = 0.1 * rng.gaussian();
}

std::vector<std::pair<std::string, Tensor<double>*>> block_param_ptrs(
    Res2NetBlockParams<double>& p) {
  std::vector<std::pair<std::string, Tensor<double>*>> out;
  auto add = [&out](const std::string& prefix, ConvBn<double>& cb) {
    out.emplace_back(prefix + ".conv.weight", &cb.conv.weight);
    out.emplace_back(prefix + ".conv.bias", &cb.conv.bias);
    out.emplace_back(prefix + ".bn.gamma", &cb.bn.gamma);
    out.emplace_back(prefix + ".bn.beta", &cb.bn.beta);
  };
  add("reduce", p.reduce);
  if (p.first.has_value()) add("first", *p.first);
  for (std::size_t i = 0; i < p.group.size(); ++i) {
    add("group" + std::to_string(i + 2), p.group[i]);
  }
  add("expand", p.expand);
  if (p.proj.has_value()) add("proj", *p.proj);
  return out;
}

double block_rep(int scale, int stride, bool first_split_conv, Rng& rng) {
  Res2NetBlockParams<double> p =
      make_block<double>(8, 8, scale, stride, first_split_conv);
  randomize_conv_bn(p.reduce, rng);
  if (p.first.has_value()) randomize_conv_bn(*p.first, rng);
  for (ConvBn<double>& g : p.group) randomize_conv_bn(g, rng);
  randomize_conv_bn(p.expand, rng);
  if (p.proj.has_value()) randomize_conv_bn(*p.proj, rng);

  Tensor<double> x = randn({2, 8, 5, 4}, rng);
  BlockCtx<double> ctx;
  Tensor<double> out = res2net_block(x, p, Mode::kTrain, &ctx);
  Tensor<double> r = randn(out.dims(), rng);
  GradBundle<double> grads;
  Tensor<double> gx = res2net_block_backward(p, ctx, r, grads, "");

  std::vector<Tensor<double>*> inputs{&x};
  std::vector<Tensor<double>> analytic{gx};
  for (auto& [name, ptr] : block_param_ptrs(p)) {
    inputs.push_back(ptr);
    analytic.push_back(grads.at(name));
  }
  auto loss = [&] { return dot(res2net_block(x, p, Mode::kTrain), r); };
  return finite_diff_check(loss, inputs, analytic, 1e-5, 10, rng)
      .max_rel_error;
}

// Saturated softmax cases (target probability ~1) have losses near the
// round-off floor, where finite differences are all cancellation noise.
// Resample until the case is well conditioned.
double id_loss_rep(Rng& rng) {
  LinearParams<double> theta;
  Tensor<double> f;
  int target = 0;
  IdLossResult<double> r0;
  for (int tries = 0;; ++tries) {
    theta.weight = randn({5, 8}, rng, 0.5);
    theta.bias = randn({5}, rng, 0.2);
    f = randn({8}, rng);
    target = static_cast<int>(rng.uniform_int(5));
    r0 = identification_loss(f, target, theta);
    if (r0.p_hat[static_cast<std::size_t>(target)] < 0.95 || tries >= 100) {
      break;
    }
  }
  auto loss = [&] { return identification_loss(f, target, theta).loss; };
  return check(loss, {&f, &theta.weight, &theta.bias},
               {r0.grad_f, r0.grad_weight, r0.grad_bias}, 0, rng);
}

double verif_loss_rep(Rng& rng) {
  LinearParams<double> theta;
  Tensor<double> f1, f2;
  PairLabel label = PairLabel::kSame;
  VerifLossResult<double> r0;
  for (int tries = 0;; ++tries) {
    theta.weight = randn({2, 8}, rng, 0.5);
    theta.bias = randn({2}, rng, 0.2);
    f1 = randn({8}, rng);
    f2 = randn({8}, rng);
    label = rng.uniform_int(2) == 0 ? PairLabel::kSame : PairLabel::kDifferent;
    r0 = verification_loss(f1, f2, label, theta);
    const std::size_t t = label == PairLabel::kSame ? 0 : 1;
    if (r0.q_hat[t] < 0.95 || tries >= 100) break;
  }
  auto loss = [&] { return verification_loss(f1, f2, label, theta).loss; };
  return check(loss, {&f1, &f2, &theta.weight, &theta.bias},
               {r0.grad_f1, r0.grad_f2, r0.grad_weight, r0.grad_bias}, 0,
               rng);
}

struct SuiteEntry {
  const char* name;
  const char* group;
  double tolerance;
  std::function<double(Rng&)> rep;
};

std::vector<SuiteEntry> suite_entries() {
  return {
      {"conv2d_3x3", "primitives", 1e-6,
       [](Rng& rng) { return conv_rep(3, 1, 1, rng); }},
      {"conv2d_3x3_stride2", "primitives", 1e-6,
       [](Rng& rng) { return conv_rep(3, 2, 1, rng); }},
      {"conv2d_1x1", "primitives", 1e-6,
       [](Rng& rng) { return conv_rep(1, 1, 0, rng); }},
      {"batchnorm", "primitives", 1e-6, batchnorm_rep},
      {"relu", "primitives", 1e-6, relu_rep},
      {"global_avg_pool", "primitives", 1e-6, gap_rep},
      {"avg_pool2d", "primitives", 1e-6, avg_pool_rep},
      {"linear", "primitives", 1e-6, linear_rep},
      {"softmax", "primitives", 1e-6, softmax_rep},
      {"square_layer", "primitives", 1e-6, square_rep},
      {"res2net_block", "block", 1e-4,
       [](Rng& rng) { return block_rep(4, 1, false, rng); }},
      {"res2net_block_scale1", "block", 1e-4,
       [](Rng& rng) { return block_rep(1, 1, false, rng); }},
      {"res2net_block_stride2", "block", 1e-4,
       [](Rng& rng) { return block_rep(4, 2, false, rng); }},
      {"res2net_block_first_split_conv", "block", 1e-4,
       [](Rng& rng) { return block_rep(4, 1, true, rng); }},
      {"identification_loss", "losses", 1e-6, id_loss_rep},
      {"verification_loss", "losses", 1e-6, verif_loss_rep},
  };
}

}  // namespace

std::vector<GradCheckCase> run_gradient_suite(const std::string& scope,
                                              int seeds,
                                              std::uint64_t base_seed) {
  if (scope != "all" && scope != "primitives" && scope != "block" &&
      scope != "losses") {
    throw ConfigError("unknown gradcheck scope '" + scope +
                      "' (expected all|primitives|block|losses)");
  }
  if (seeds < 1) throw ConfigError("gradcheck needs at least one seed");
  std::vector<GradCheckCase> out;
  const std::vector<SuiteEntry> entries = suite_entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const SuiteEntry& e = entries[i];
    if (scope != "all" && scope != e.group) continue;
    GradCheckCase c;
    c.name = e.name;
    c.tolerance = e.tolerance;
    for (int s = 0; s < seeds; ++s) {
      Rng rng(base_seed + 9973 * i + static_cast<std::uint64_t>(s));
      c.max_rel_error = std::max(c.max_rel_error, e.rep(rng));
    }
    c.pass = c.max_rel_error < c.tolerance;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace reid
