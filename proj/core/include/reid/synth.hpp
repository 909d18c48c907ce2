#pragma once

#include <cstdint>
#include <string>

namespace reid {

// Desk-scale stand-in for a re-ID dataset: every identity gets a
// deterministic color + stripe signature, images alternate between two
// "cameras" that differ by a brightness shift, and per-image noise comes
// from the seed alone.
struct SynthConfig {
  int n_ids = 8;
  int imgs_per_id = 8;
  int height = 32;
  int width = 16;
  std::uint64_t seed = 0;
};

struct SynthResult {
  std::string images_dir;
  std::string train_manifest;
  std::string query_manifest;
  std::string gallery_manifest;
  int images_written = 0;
};

// Writes RTEN images under <out_dir>/images plus train/query/gallery
// manifests in <out_dir>. Per identity the last camera-1 image becomes the
// query and the last camera-2 image the gallery row; with imgs_per_id >= 4
// those two are held out of train.csv. Identical seeds produce
// byte-identical trees.
SynthResult generate_synth_dataset(const std::string& out_dir,
                                   const SynthConfig& cfg);

}  // namespace reid
