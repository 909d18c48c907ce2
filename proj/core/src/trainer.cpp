#include "reid/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace reid {

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.base_lr <= 0.0) throw ConfigError("base_lr must be > 0");
  if (cfg.warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (cfg.warmup_factor <= 0.0 || cfg.warmup_factor > 1.0) {
    throw ConfigError("warmup_factor must lie in (0,1]");
  }
  if (cfg.decay_every < 1) throw ConfigError("decay_every must be >= 1");
  if (cfg.decay_factor <= 0.0 || cfg.decay_factor >= 1.0) {
    throw ConfigError("decay_factor must lie in (0,1)");
  }
  if (cfg.total_epochs < 1) throw ConfigError("total_epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) {
    throw ConfigError("momentum must lie in [0,1)");
  }
  if (cfg.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (cfg.positive_fraction < 0.0 || cfg.positive_fraction > 1.0) {
    throw ConfigError("positive_fraction must lie in [0,1]");
  }
  if (cfg.max_iterations < 0) {
    throw ConfigError("max_iterations must be >= 0");
  }
  validate_augment_config(cfg.augment);
}

double learning_rate(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ConfigError("epoch must be >= 0");
  if (epoch < cfg.warmup_epochs) {
    return cfg.base_lr / (1.0 / cfg.warmup_factor);
  }
  const int k = epoch / cfg.decay_every;
  double divisor = 1.0;
  const double inv = 1.0 / cfg.decay_factor;
  for (int i = 0; i < k; ++i) divisor *= inv;
  return cfg.base_lr / divisor;
}

template <typename T>
OptimizerState<T> make_optimizer_state(Model<T>& model) {
  OptimizerState<T> state;
  visit_params<T>(model, [&state](const std::string& name, Tensor<T>& t) {
    state.momentum.emplace(name, Tensor<T>(t.dims()));
  });
  return state;
}

template <typename T>
void sgd_step(Model<T>& model, const GradBundle<T>& grads,
              OptimizerState<T>& state, T lr, T momentum, T weight_decay) {
  std::size_t seen = 0;
  visit_params<T>(model, [&](const std::string& name, Tensor<T>& theta) {
    auto git = grads.find(name);
    if (git == grads.end()) {
      throw DataError("missing gradient for parameter " + name);
    }
    const Tensor<T>& g = git->second;
    theta.require_same_dims(g, name.c_str());
    ++seen;
    auto vit = state.momentum.find(name);
    if (vit == state.momentum.end()) {
      throw DataError("missing momentum buffer for parameter " + name);
    }
    Tensor<T>& v = vit->second;
    theta.require_same_dims(v, name.c_str());
    const bool decay = weight_decay != T(0) && !name.ends_with(".bias") &&
                       !name.ends_with(".gamma") && !name.ends_with(".beta");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      T gi = g[i];
      if (decay) gi += weight_decay * theta[i];
      v[i] = momentum * v[i] + gi;
      theta[i] -= lr * v[i];
    }
  });
  if (seen != grads.size()) {
    for (const auto& [name, g] : grads) {
      if (state.momentum.find(name) == state.momentum.end()) {
        throw DataError("gradient entry " + name +
                        " matches no model parameter");
      }
    }
  }
}

void write_loss_csv(const std::string& path,
                    const std::vector<LossRow>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss history to " + path);
  out << "iter,epoch,lr,id_loss_a,id_loss_b,verif_loss,total\n";
  out << std::setprecision(10);
  for (const LossRow& r : history) {
    out << r.iter << ',' << r.epoch << ',' << r.lr << ',' << r.id_loss_a
        << ',' << r.id_loss_b << ',' << r.verif_loss << ',' << r.total
        << '\n';
  }
  if (!out) throw IoError("failed while writing " + path);
}

TrainResult train(const TrainConfig& cfg, const BackboneConfig& backbone_cfg,
                  const Dataset& ds, const Model<float>* warm_start) {
  validate_train_config(cfg);
  validate_config(backbone_cfg);
  if (backbone_cfg.num_identities != ds.num_classes()) {
    throw ConfigError("backbone expects " +
                      std::to_string(backbone_cfg.num_identities) +
                      " identities but the dataset has " +
                      std::to_string(ds.num_classes()));
  }

  Rng rng(cfg.seed);
  TrainResult out{warm_start ? *warm_start
                             : build_backbone<float>(backbone_cfg, rng),
                  {}, {}, 0};
  out.state = make_optimizer_state(out.model);

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    if (ds.records[i].identity >= 0) pool.push_back(i);
  }
  if (pool.size() < static_cast<std::size_t>(cfg.batch_size)) {
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) +
                      " exceeds the " + std::to_string(pool.size()) +
                      " trainable records");
  }
  const std::size_t batches_per_epoch =
      pool.size() / static_cast<std::size_t>(cfg.batch_size);

  ImageCache cache;
  RecordLoader loader = [&](const DatasetRecord& r) {
    return augment_image(cache.get(r.path), cfg.augment, rng);
  };

  int iter = 0;
  for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    const double lr = learning_rate(epoch, cfg);
    std::vector<std::size_t> order = pool;
    shuffle(order, rng);
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::vector<std::size_t> anchors(
          order.begin() +
              static_cast<std::ptrdiff_t>(b * cfg.batch_size),
          order.begin() +
              static_cast<std::ptrdiff_t>((b + 1) * cfg.batch_size));
      const std::vector<PairIndices> pairs = pair_partners_for_anchors(
          ds, anchors, cfg.positive_fraction, rng);
      const PairBatch<float> batch = assemble_pair_batch(ds, pairs, loader);
      StepResult<float> step = multitask_step(batch, out.model,
                                              cfg.loss_weights);
      sgd_step(out.model, step.grads, out.state, static_cast<float>(lr),
               static_cast<float>(cfg.momentum),
               static_cast<float>(cfg.weight_decay));
      ++iter;
      const LossReport<float>& rep = step.report;
      out.history.push_back({iter, epoch, lr, rep.id_loss_a, rep.id_loss_b,
                             rep.verif_loss,
                             static_cast<double>(rep.total(cfg.loss_weights))});
      if (cfg.max_iterations > 0 && iter >= cfg.max_iterations) {
        out.iterations = iter;
        return out;
      }
    }
  }
  out.iterations = iter;
  return out;
}

#define REID_INSTANTIATE_TRAINER(T)                                          \
  template OptimizerState<T> make_optimizer_state<T>(Model<T>&);             \
  template void sgd_step<T>(Model<T>&, const GradBundle<T>&,                 \
                            OptimizerState<T>&, T, T, T);

REID_INSTANTIATE_TRAINER(float)
REID_INSTANTIATE_TRAINER(double)

#undef REID_INSTANTIATE_TRAINER

}  // namespace reid
