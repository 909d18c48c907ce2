#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "reid/multitask.hpp"
#include "reid/rng.hpp"
#include "reid/tensor.hpp"

namespace reid {

// ---------------------------------------------------------------------------
// Dataset

struct DatasetRecord {
  std::string path;
  int identity = 0;  // -1 marks a distractor (never a correct match)
  int camera = 1;
};

struct Dataset {
  std::vector<DatasetRecord> records;             // sorted by path
  std::map<int, std::vector<std::size_t>> identity_index;
  std::map<int, int> class_of;                    // identity (>= 0) -> dense id

  int num_classes() const { return static_cast<int>(class_of.size()); }
};

// Directory of Market-1501-style filenames: "<identity>_c<camera>...".
Dataset load_dataset(const std::string& root_path);

// Manifest CSV with rows `path,identity,camera` (header line optional).
// Relative record paths resolve against root_path.
Dataset load_dataset(const std::string& root_path, const std::string& manifest);

// RTEN ([3,H,W], already in [0,1]) or binary PPM (P6, scaled to [0,1]).
Tensor<float> load_image(const std::string& path);

// Loads each path once and keeps the decoded tensor.
class ImageCache {
 public:
  const Tensor<float>& get(const std::string& path);

 private:
  std::map<std::string, Tensor<float>> cache_;
};

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  int crop_h = 256;
  int crop_w = 128;
  double rea_probability = 0.5;
  double rea_area_lo = 0.02;
  double rea_area_hi = 0.4;
  double rea_aspect_lo = 0.3;
  double rea_aspect_hi = 3.33;
  std::uint64_t seed = 0;
};

void validate_augment_config(const AugmentConfig& cfg);

// Half-pixel-centered bilinear interpolation, [C,H,W] -> [C,out_h,out_w].
Tensor<float> bilinear_resize(const Tensor<float>& image, int out_h,
                              int out_w);

// Uniformly random valid offset; inputs smaller than the target are first
// resized up so a crop always exists.
Tensor<float> random_crop(const Tensor<float>& image, int out_h, int out_w,
                          Rng& rng);

struct EraseRect {
  bool applied = false;
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
};

// Random Erasing: with probability rea_probability picks (in at most 100
// attempts) a rectangle whose integer area ratio and aspect ratio both lie
// inside the configured ranges, and fills it with uniform noise in [0,1).
// Pixels outside the rectangle are copied untouched.
Tensor<float> random_erase(const Tensor<float>& image,
                           const AugmentConfig& cfg, Rng& rng,
                           EraseRect* rect = nullptr);

// Train-time transform: resize to 1.125x the crop target, random-crop back,
// then random-erase.
Tensor<float> augment_image(const Tensor<float>& image,
                            const AugmentConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Pair sampling

struct PairIndices {
  std::size_t a = 0;
  std::size_t b = 0;
  PairLabel label = PairLabel::kSame;
};

// round(count * positive_fraction) positive pairs (same identity, distinct
// records) followed by negatives (different identities). Distractors are
// never sampled.
std::vector<PairIndices> sample_pair_indices(const Dataset& ds,
                                             std::size_t count,
                                             double positive_fraction,
                                             Rng& rng);

// Keeps the given records as the A side (one pair per anchor) and samples
// only the partners; used by the per-epoch shuffled training loop.
std::vector<PairIndices> pair_partners_for_anchors(
    const Dataset& ds, const std::vector<std::size_t>& anchors,
    double positive_fraction, Rng& rng);

using RecordLoader = std::function<Tensor<float>(const DatasetRecord&)>;

// Loads/augments both sides of each pair and stacks them into [B,C,H,W].
// Labels are the dataset's dense class ids.
PairBatch<float> assemble_pair_batch(const Dataset& ds,
                                     const std::vector<PairIndices>& pairs,
                                     const RecordLoader& load);

PairBatch<float> sample_pair_batch(const Dataset& ds, std::size_t batch_size,
                                   double positive_fraction, Rng& rng,
                                   const RecordLoader& load);

// Deterministic Fisher-Yates.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.uniform_int(i)]);
  }
}

}  // namespace reid
