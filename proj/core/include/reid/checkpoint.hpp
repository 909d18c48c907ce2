#pragma once

#include <string>

#include "reid/res2net.hpp"
#include "reid/trainer.hpp"

namespace reid {

// Strict JSON round-trip for BackboneConfig; unknown keys are rejected by
// name on parse.
std::string backbone_config_to_json(const BackboneConfig& cfg);
BackboneConfig backbone_config_from_json(const std::string& text);

struct Checkpoint {
  Model<float> model;
  OptimizerState<float> state;
};

// R2MT container: magic "R2MT", version byte, length-prefixed BackboneConfig
// JSON, then name-sorted tensors ("model.*" state and "momentum.*" buffers)
// as length-prefixed names + RTEN blobs. Round-trips bitwise.
void save_checkpoint(const Model<float>& model,
                     const OptimizerState<float>& state,
                     const std::string& path);

// Throws DataError with distinct messages for bad magic, unsupported
// version, and truncated files.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace reid
