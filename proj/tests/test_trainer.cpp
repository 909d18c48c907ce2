#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "reid/checkpoint.hpp"
#include "reid/trainer.hpp"

using namespace reid;
namespace fs = std::filesystem;

namespace {

// All-zero parameters make SGD hand arithmetic exact.
Model<float> zeroed_model() {
  BackboneConfig cfg;
  Rng rng(0);
  Model<float> m = build_backbone<float>(cfg, rng);
  visit_params(m, [](const std::string&, Tensor<float>& t) {
    for (auto& v : t.values()) v = 0.0f;
  });
  return m;
}

GradBundle<float> zero_grads(Model<float>& m) {
  GradBundle<float> g;
  visit_params(m, [&g](const std::string& name, Tensor<float>& t) {
    g.emplace(name, Tensor<float>(t.dims()));
  });
  return g;
}

}  // namespace

TEST_CASE("warmup and step-decay schedule, decimal-exact") {
  TrainConfig cfg;  // 0.05 base, 5 warmup epochs at x0.1, decay /10 every 40

  for (int e = 0; e < 5; ++e) CHECK(learning_rate(e, cfg) == 0.005);
  CHECK(learning_rate(5, cfg) == 0.05);
  CHECK(learning_rate(39, cfg) == 0.05);
  CHECK(learning_rate(40, cfg) == 0.005);
  CHECK(learning_rate(79, cfg) == 0.005);
  CHECK(learning_rate(80, cfg) == 0.0005);
  CHECK(learning_rate(119, cfg) == 0.0005);
  CHECK(learning_rate(120, cfg) == 0.00005);
  CHECK(learning_rate(200, cfg) == 0.0000005);
  // The sixth decay (5e-8) lands one round-off away from the decimal
  // literal, so no exact pin past here.
  CHECK(learning_rate(255, cfg) == doctest::Approx(5e-8));

  // Warmup boundary: epoch 4 still warm, epoch 5 not.
  CHECK(learning_rate(4, cfg) == 0.005);
  CHECK(learning_rate(5, cfg) != learning_rate(4, cfg));

  TrainConfig other;
  other.base_lr = 0.04;
  other.warmup_factor = 0.5;
  CHECK(learning_rate(0, other) == 0.02);

  CHECK_THROWS_AS(learning_rate(-1, cfg), ConfigError);
}

TEST_CASE("train config validation messages") {
  TrainConfig cfg;
  validate_train_config(cfg);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.decay_factor = 1.0;
  CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.warmup_factor = 0.0;
  CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
}

TEST_CASE("sgd with momentum: two hand-checked steps") {
  Model<float> m = zeroed_model();
  OptimizerState<float> state = make_optimizer_state(m);
  GradBundle<float> g = zero_grads(m);
  for (auto& v : g.at("head_id.weight").values()) v = 1.0f;

  // v=1, theta=-0.1; then v=1.9, theta=-0.29.
  sgd_step<float>(m, g, state, 0.1f, 0.9f, 0.0f);
  visit_params(m, [](const std::string& name, Tensor<float>& t) {
    if (name == "head_id.weight") {
      for (auto v : t.values()) CHECK(v == doctest::Approx(-0.1));
    }
  });
  sgd_step<float>(m, g, state, 0.1f, 0.9f, 0.0f);
  visit_params(m, [](const std::string& name, Tensor<float>& t) {
    if (name == "head_id.weight") {
      for (auto v : t.values()) CHECK(v == doctest::Approx(-0.29));
    } else {
      for (auto v : t.values()) CHECK(v == 0.0f);  // zero grads stay put
    }
  });
}

TEST_CASE("weight decay applies to weights but not biases or BN affines") {
  Model<float> m = zeroed_model();
  visit_params(m, [](const std::string& name, Tensor<float>& t) {
    if (name == "head_id.weight" || name == "stem.bn.gamma" ||
        name == "head_ver.bias") {
      for (auto& v : t.values()) v = 1.0f;
    }
  });
  OptimizerState<float> state = make_optimizer_state(m);
  GradBundle<float> g = zero_grads(m);
  sgd_step<float>(m, g, state, 0.1f, 0.0f, 0.5f);

  visit_params(m, [](const std::string& name, Tensor<float>& t) {
    if (name == "head_id.weight") {
      // theta' = 1 - 0.1 * (0.5 * 1) = 0.95
      for (auto v : t.values()) CHECK(v == doctest::Approx(0.95));
    } else if (name == "stem.bn.gamma" || name == "head_ver.bias") {
      for (auto v : t.values()) CHECK(v == 1.0f);  // decay skipped, exact
    }
  });
}

TEST_CASE("sgd step demands exact gradient coverage") {
  Model<float> m = zeroed_model();
  OptimizerState<float> state = make_optimizer_state(m);
  GradBundle<float> g = zero_grads(m);

  GradBundle<float> missing = g;
  missing.erase("head_id.weight");
  CHECK_THROWS_AS(sgd_step<float>(m, missing, state, 0.1f, 0.9f, 0.0f),
                  DataError);

  GradBundle<float> extra = g;
  extra.emplace("made_up.weight", Tensor<float>({1}));
  CHECK_THROWS_AS(sgd_step<float>(m, extra, state, 0.1f, 0.9f, 0.0f),
                  DataError);
}

TEST_CASE("momentum descent shrinks a convex quadratic") {
  // loss = 0.5 * ||theta||^2 over one parameter tensor; grad = theta.
  Model<float> m = zeroed_model();
  Rng rng(123);
  visit_params(m, [&rng](const std::string& name, Tensor<float>& t) {
    if (name == "head_id.weight") {
      for (auto& v : t.values()) v = static_cast<float>(rng.gaussian());
    }
  });
  OptimizerState<float> state = make_optimizer_state(m);

  auto norm2 = [&m]() {
    double s = 0.0;
    visit_params(m, [&s](const std::string& name, Tensor<float>& t) {
      if (name == "head_id.weight") {
        for (auto v : t.values()) s += static_cast<double>(v) * v;
      }
    });
    return s;
  };

  // Contraction per step is |lambda|^2 = momentum = 0.9 for this system,
  // so 120 steps give ~3e-6; 1e-3 leaves room for the oscillatory phase.
  const double start = norm2();
  for (int step = 0; step < 120; ++step) {
    GradBundle<float> g = zero_grads(m);
    visit_params(m, [&g](const std::string& name, Tensor<float>& t) {
      if (name == "head_id.weight") g.at(name) = t;
    });
    sgd_step<float>(m, g, state, 0.1f, 0.9f, 0.0f);
  }
  CHECK(norm2() < 1e-3 * start);
}

TEST_CASE("backbone config JSON round-trips and rejects unknown keys") {
  BackboneConfig cfg;
  cfg.stages = {{2, 8, 1}, {3, 16, 2}};
  cfg.scale = 2;
  cfg.first_split_conv = true;
  const std::string text = backbone_config_to_json(cfg);
  const BackboneConfig back = backbone_config_from_json(text);
  CHECK(back == cfg);

  CHECK_THROWS_WITH_AS(
      backbone_config_from_json("{\"scale\": 4, \"num_identites\": 8}"),
      "unknown key 'num_identites' in backbone config", ConfigError);
  CHECK_THROWS_AS(backbone_config_from_json("not json at all"), ConfigError);
  CHECK_THROWS_AS(backbone_config_from_json("{\"scale\": \"four\"}"),
                  ConfigError);
  // Partial configs inherit defaults.
  const BackboneConfig partial = backbone_config_from_json("{\"scale\": 2}");
  CHECK(partial.scale == 2);
  CHECK(partial.descriptor_dim == BackboneConfig{}.descriptor_dim);
}

TEST_CASE("checkpoints round-trip byte-identically") {
  BackboneConfig cfg;
  Rng rng(55);
  Model<float> m = build_backbone<float>(cfg, rng);
  OptimizerState<float> state = make_optimizer_state(m);
  // Non-trivial momentum so that side of the file is exercised too.
  for (auto& [name, t] : state.momentum) {
    for (auto& v : t.values()) v = static_cast<float>(rng.gaussian());
  }

  const fs::path dir = fs::temp_directory_path();
  const std::string p1 = (dir / "reid_ck_a.r2mt").string();
  const std::string p2 = (dir / "reid_ck_b.r2mt").string();
  save_checkpoint(m, state, p1);
  Checkpoint loaded = load_checkpoint(p1);
  CHECK(loaded.model.config == cfg);
  save_checkpoint(loaded.model, loaded.state, p2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::stringstream b1, b2;
  b1 << f1.rdbuf();
  b2 << f2.rdbuf();
  CHECK(b1.str() == b2.str());
  CHECK(!b1.str().empty());
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("checkpoint loader distinguishes its failure modes") {
  BackboneConfig cfg;
  Rng rng(56);
  Model<float> m = build_backbone<float>(cfg, rng);
  OptimizerState<float> state = make_optimizer_state(m);
  const fs::path dir = fs::temp_directory_path();
  const std::string good = (dir / "reid_ck_good.r2mt").string();
  save_checkpoint(m, state, good);

  std::ifstream in(good, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string blob = buf.str();

  auto write_blob = [&dir](const std::string& name, const std::string& data) {
    const std::string p = (dir / name).string();
    std::ofstream out(p, std::ios::binary);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    return p;
  };

  {
    std::string bad = blob;
    bad[0] = 'X';
    bad[1] = 'X';
    bad[2] = 'X';
    bad[3] = 'X';
    const std::string p = write_blob("reid_ck_magic.r2mt", bad);
    CHECK_THROWS_WITH_AS(load_checkpoint(p),
                         ("bad R2MT magic in " + p).c_str(), DataError);
    fs::remove(p);
  }
  {
    std::string bad = blob;
    bad[4] = 99;
    const std::string p = write_blob("reid_ck_ver.r2mt", bad);
    CHECK_THROWS_WITH_AS(load_checkpoint(p),
                         ("unsupported R2MT version 99 in " + p).c_str(),
                         DataError);
    fs::remove(p);
  }
  {
    const std::string p = write_blob("reid_ck_trunc.r2mt",
                                     blob.substr(0, blob.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(p), DataError);
    fs::remove(p);
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "reid_ck_nope.r2mt").string()),
                  IoError);
  fs::remove(good);
}

TEST_CASE("loss csv carries the full column set") {
  std::vector<LossRow> rows = {
      {1, 0, 0.005, 2.0, 2.1, 0.7, 2.75},
      {2, 0, 0.005, 1.9, 2.0, 0.69, 2.64},
  };
  const std::string path =
      (fs::temp_directory_path() / "reid_loss_test.csv").string();
  write_loss_csv(path, rows);
  std::ifstream in(path);
  std::string header, line1;
  std::getline(in, header);
  std::getline(in, line1);
  CHECK(header == "iter,epoch,lr,id_loss_a,id_loss_b,verif_loss,total");
  CHECK(line1.substr(0, 2) == "1,");
  CHECK(line1.find("0.005") != std::string::npos);
  fs::remove(path);
}

TEST_CASE("optimizer state covers every parameter with zeros") {
  Model<float> m = zeroed_model();
  OptimizerState<float> state = make_optimizer_state(m);
  std::size_t params = 0;
  visit_params(m, [&](const std::string& name, Tensor<float>& t) {
    ++params;
    REQUIRE(state.momentum.contains(name));
    CHECK(state.momentum.at(name).same_dims(t));
  });
  CHECK(state.momentum.size() == params);
  for (const auto& [name, t] : state.momentum) {
    for (auto v : t.values()) CHECK(v == 0.0f);
  }
}
