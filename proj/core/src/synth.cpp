#include "reid/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "reid/rng.hpp"
#include "reid/rten.hpp"
#include "reid/tensor.hpp"

namespace fs = std::filesystem;

namespace reid {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ull;
  h = (h ^ a) * 0x100000001b3ull;
  h = (h ^ b) * 0xc6a4a7935bd1e995ull;
  return h;
}

struct IdentitySignature {
  float base[3];
  float stripe[3];
  int period;
  int phase;
};

IdentitySignature identity_signature(std::uint64_t seed, int id) {
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(id), 0xa11ce));
  IdentitySignature sig{};
  for (float& v : sig.base) v = static_cast<float>(rng.uniform(0.15, 0.85));
  for (float& v : sig.stripe) v = static_cast<float>(rng.uniform(0.15, 0.85));
  sig.period = 2 + static_cast<int>(rng.uniform_int(4));  // 2..5 rows
  sig.phase = static_cast<int>(rng.uniform_int(
      static_cast<std::uint64_t>(sig.period)));
  return sig;
}

Tensor<float> render_image(const SynthConfig& cfg, int id, int img_index,
                           int camera) {
  const IdentitySignature sig = identity_signature(cfg.seed, id);
  Rng noise(mix_seed(cfg.seed, static_cast<std::uint64_t>(id),
                     0x1000 + static_cast<std::uint64_t>(img_index)));
  const float shift = camera == 1 ? 0.0f : 0.08f;
  Tensor<float> img({3, static_cast<std::size_t>(cfg.height),
                     static_cast<std::size_t>(cfg.width)});
  for (int y = 0; y < cfg.height; ++y) {
    const bool band = ((y + sig.phase) % sig.period) * 2 < sig.period;
    for (int x = 0; x < cfg.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        float v = band ? sig.base[c] : sig.stripe[c];
        v += shift;
        v += static_cast<float>(noise.uniform(-0.05, 0.05));
        img.at(static_cast<std::size_t>(c), static_cast<std::size_t>(y),
               static_cast<std::size_t>(x)) =
            std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  return img;
}

}  // namespace

SynthResult generate_synth_dataset(const std::string& out_dir,
                                   const SynthConfig& cfg) {
  if (cfg.n_ids < 2) throw ConfigError("synth needs at least 2 identities");
  if (cfg.imgs_per_id < 2) {
    throw ConfigError("synth needs at least 2 images per identity");
  }
  if (cfg.height < 4 || cfg.width < 4) {
    throw ConfigError("synth images must be at least 4x4");
  }

  const fs::path root(out_dir);
  const fs::path images = root / "images";
  std::error_code ec;
  fs::create_directories(images, ec);
  if (ec || !fs::is_directory(images)) {
    throw IoError("cannot create synth output directory " + images.string());
  }

  SynthResult result;
  result.images_dir = images.string();
  result.train_manifest = (root / "train.csv").string();
  result.query_manifest = (root / "query.csv").string();
  result.gallery_manifest = (root / "gallery.csv").string();

  std::ofstream train(result.train_manifest);
  std::ofstream query(result.query_manifest);
  std::ofstream gallery(result.gallery_manifest);
  if (!train || !query || !gallery) {
    throw IoError("cannot write synth manifests under " + out_dir);
  }
  train << "path,identity,camera\n";
  query << "path,identity,camera\n";
  gallery << "path,identity,camera\n";

  const bool hold_out = cfg.imgs_per_id >= 4;
  for (int id = 0; id < cfg.n_ids; ++id) {
    const int identity = id + 1;
    // Even image indices go to camera 1, odd to camera 2; the last image
    // of each camera is the query / gallery sample for this identity.
    const int last_c1 = (cfg.imgs_per_id - 1) & ~1;
    const int last_c2 = ((cfg.imgs_per_id - 2) | 1);
    for (int k = 0; k < cfg.imgs_per_id; ++k) {
      const int camera = (k % 2) + 1;
      char name[64];
      std::snprintf(name, sizeof(name), "%04d_c%d_%04d.rten", identity,
                    camera, k + 1);
      write_rten((images / name).string(), render_image(cfg, id, k, camera));
      ++result.images_written;

      const std::string row = std::string("images/") + name + "," +
                              std::to_string(identity) + "," +
                              std::to_string(camera) + "\n";
      if (k == last_c1) {
        query << row;
        if (!hold_out) train << row;
      } else if (k == last_c2) {
        gallery << row;
        if (!hold_out) train << row;
      } else {
        train << row;
      }
    }
  }
  if (!train || !query || !gallery) {
    throw IoError("failed while writing synth manifests under " + out_dir);
  }
  return result;
}

}  // namespace reid
