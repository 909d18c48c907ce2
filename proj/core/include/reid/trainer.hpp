#pragma once

#include <map>
#include <string>
#include <vector>

#include "reid/datapipe.hpp"
#include "reid/multitask.hpp"
#include "reid/res2net.hpp"

namespace reid {

struct TrainConfig {
  double base_lr = 0.05;
  int warmup_epochs = 5;
  double warmup_factor = 0.1;
  int decay_every = 40;      // epochs between step decays
  double decay_factor = 0.1;
  int total_epochs = 256;
  int batch_size = 16;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double positive_fraction = 0.5;
  LossWeights loss_weights{};
  AugmentConfig augment{};
  std::uint64_t seed = 0;
  int max_iterations = 0;  // 0 = run every epoch; otherwise stop early
};

void validate_train_config(const TrainConfig& cfg);

// Piecewise-constant schedule: warmup_factor * base_lr while epoch <
// warmup_epochs, then base_lr * decay_factor^floor(epoch / decay_every).
// Scaling is done by dividing by the inverse factor so that decimal
// constants (0.05 -> 0.005 -> 0.0005...) come out exactly.
double learning_rate(int epoch, const TrainConfig& cfg);

template <typename T>
struct OptimizerState {
  std::map<std::string, Tensor<T>> momentum;  // one buffer per parameter
};

template <typename T>
OptimizerState<T> make_optimizer_state(Model<T>& model);

// g' = g + weight_decay * theta; v <- momentum * v + g'; theta <- theta -
// lr * v. Weight decay skips BN gamma/beta and all biases. Throws DataError
// when grads do not cover the parameters exactly.
template <typename T>
void sgd_step(Model<T>& model, const GradBundle<T>& grads,
              OptimizerState<T>& state, T lr, T momentum, T weight_decay);

struct LossRow {
  int iter = 0;   // 1-based
  int epoch = 0;  // 0-based
  double lr = 0.0;
  double id_loss_a = 0.0;
  double id_loss_b = 0.0;
  double verif_loss = 0.0;
  double total = 0.0;
};

// Columns: iter,epoch,lr,id_loss_a,id_loss_b,verif_loss,total
void write_loss_csv(const std::string& path,
                    const std::vector<LossRow>& history);

struct TrainResult {
  Model<float> model;
  OptimizerState<float> state;
  std::vector<LossRow> history;
  int iterations = 0;
};

// Shuffles the non-distractor records every epoch, pairs each anchor with a
// sampled partner, and runs multitask_step + sgd_step per batch. Fully
// deterministic for a fixed config seed.
TrainResult train(const TrainConfig& cfg, const BackboneConfig& backbone_cfg,
                  const Dataset& ds, const Model<float>* warm_start = nullptr);

}  // namespace reid
