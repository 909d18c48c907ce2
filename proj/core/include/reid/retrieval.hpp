#pragma once

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "reid/datapipe.hpp"
#include "reid/res2net.hpp"
#include "reid/tensor.hpp"

namespace reid {

struct GalleryIndex {
  Tensor<float> descriptors;    // [G, d], rows stored L2-normalized
  std::vector<int> identities;  // -1 = distractor
  std::vector<int> cameras;
  std::vector<float> norms;     // pre-normalization norms, for diagnostics

  std::size_t size() const { return identities.size(); }
  std::size_t dim() const {
    return descriptors.rank() == 2 ? descriptors.dim(1) : 0;
  }
};

// Normalizes to unit L2 norm; a zero-norm vector is an error naming `what`
// (a zero descriptor means a broken model, not something to epsilon away).
Tensor<float> l2_normalize(const Tensor<float>& v, const std::string& what);

// Options shared by gallery building and evaluation.
struct EvalOptions {
  int resize_h = 0;  // 0 = keep images at native size
  int resize_w = 0;
  int k_max = 20;    // CMC depth
};

GalleryIndex make_gallery(const std::vector<Tensor<float>>& descriptors,
                          const std::vector<int>& identities,
                          const std::vector<int>& cameras,
                          const std::vector<std::string>* names = nullptr);

// Extracts a descriptor per dataset record (infer mode) and normalizes.
GalleryIndex build_gallery(const Model<float>& model, const Dataset& ds,
                           const EvalOptions& opt = EvalOptions{});

struct RankedList {
  std::vector<std::size_t> order;  // gallery positions, best first
  std::vector<float> scores;       // cosine similarity, aligned with order
};

// Descending cosine similarity; equal scores break toward the smaller
// gallery index. `exclude` (optional) removes rows from the candidate set;
// removing everything is an error.
RankedList rank_query(
    const Tensor<float>& query, const GalleryIndex& gallery,
    const std::function<bool(std::size_t)>& exclude = nullptr);

// AP = (1/|relevant|) * sum over hit ranks r of hits_up_to_r / r.
// An empty relevant set throws DataError("no ground truth ...").
double average_precision(const RankedList& ranked,
                         const std::set<std::size_t>& relevant);

struct EvalResult {
  std::vector<double> cmc;           // Acc_k, k = 1..k_max
  double map = 0.0;                  // mean of per_query_ap
  std::vector<double> per_query_ap;  // one entry per evaluated query
  std::size_t queries_evaluated = 0;
  std::size_t queries_dropped = 0;   // no cross-camera ground truth
};

// Market-1501 single-query protocol: per query, gallery rows sharing both
// identity and camera are excluded, distractors (identity -1) stay as
// negatives, and queries left without ground truth are dropped (counted).
EvalResult evaluate_descriptors(const std::vector<Tensor<float>>& queries,
                                const std::vector<int>& query_identities,
                                const std::vector<int>& query_cameras,
                                const GalleryIndex& gallery, int k_max);

EvalResult evaluate(const Model<float>& model, const Dataset& queries,
                    const GalleryIndex& gallery,
                    const EvalOptions& opt = EvalOptions{});

// R2GX gallery file: magic, version, d, G, then G rows of f32 descriptor +
// i32 identity + i32 camera (little-endian).
void save_gallery(const GalleryIndex& gallery, const std::string& path);
GalleryIndex load_gallery(const std::string& path);

// "1.0", "0.75", "0.8333333333": trailing zeros trimmed but at least one
// decimal digit kept.
std::string format_metric(double v);

}  // namespace reid
