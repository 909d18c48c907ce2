#include "reid/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "reid/rten.hpp"

namespace reid {

namespace {

constexpr char kR2gxMagic[4] = {'R', '2', 'G', 'X'};
constexpr std::uint8_t kR2gxVersion = 1;

Tensor<float> eval_image(const DatasetRecord& rec, const EvalOptions& opt) {
  Tensor<float> img = load_image(rec.path);
  if (opt.resize_h > 0 && opt.resize_w > 0) {
    img = bilinear_resize(img, opt.resize_h, opt.resize_w);
  }
  return img;
}

}  // namespace

Tensor<float> l2_normalize(const Tensor<float>& v, const std::string& what) {
  double sq = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    sq += static_cast<double>(v[i]) * static_cast<double>(v[i]);
  }
  const double norm = std::sqrt(sq);
  if (norm == 0.0) {
    throw DataError("zero-norm descriptor for " + what);
  }
  Tensor<float> out(v.dims());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<float>(v[i] / norm);
  }
  return out;
}

GalleryIndex make_gallery(const std::vector<Tensor<float>>& descriptors,
                          const std::vector<int>& identities,
                          const std::vector<int>& cameras,
                          const std::vector<std::string>* names) {
  if (descriptors.empty()) throw DataError("cannot build an empty gallery");
  if (identities.size() != descriptors.size() ||
      cameras.size() != descriptors.size() ||
      (names && names->size() != descriptors.size())) {
    throw DataError("gallery descriptor/label counts disagree");
  }
  const std::size_t d = descriptors[0].size();
  GalleryIndex g;
  g.descriptors = Tensor<float>({descriptors.size(), d});
  g.identities = identities;
  g.cameras = cameras;
  g.norms.resize(descriptors.size());
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    const Tensor<float>& v = descriptors[i];
    if (v.size() != d) {
      throw ShapeError("gallery descriptor " + std::to_string(i) + " has " +
                       std::to_string(v.size()) + " dims, expected " +
                       std::to_string(d));
    }
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      sq += static_cast<double>(v[j]) * static_cast<double>(v[j]);
    }
    const double norm = std::sqrt(sq);
    if (norm == 0.0) {
      throw DataError("zero-norm descriptor for " +
                      (names ? (*names)[i]
                             : "gallery row " + std::to_string(i)));
    }
    g.norms[i] = static_cast<float>(norm);
    for (std::size_t j = 0; j < d; ++j) {
      g.descriptors.at(i, j) = static_cast<float>(v[j] / norm);
    }
  }
  return g;
}

GalleryIndex build_gallery(const Model<float>& model, const Dataset& ds,
                           const EvalOptions& opt) {
  std::vector<Tensor<float>> descriptors;
  std::vector<int> identities, cameras;
  std::vector<std::string> names;
  descriptors.reserve(ds.records.size());
  for (const DatasetRecord& rec : ds.records) {
    descriptors.push_back(extract_descriptor(model, eval_image(rec, opt)));
    identities.push_back(rec.identity);
    cameras.push_back(rec.camera);
    names.push_back(rec.path);
  }
  return make_gallery(descriptors, identities, cameras, &names);
}

RankedList rank_query(const Tensor<float>& query, const GalleryIndex& gallery,
                      const std::function<bool(std::size_t)>& exclude) {
  if (query.size() != gallery.dim()) {
    throw ShapeError("query descriptor has " + std::to_string(query.size()) +
                     " dims but the gallery stores " +
                     std::to_string(gallery.dim()));
  }
  const Tensor<float> q = l2_normalize(query, "query");
  RankedList out;
  std::vector<float> sims(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    if (exclude && exclude(i)) continue;
    double dot = 0.0;
    for (std::size_t j = 0; j < gallery.dim(); ++j) {
      dot += static_cast<double>(q[j]) *
             static_cast<double>(gallery.descriptors.at(i, j));
    }
    sims[i] = static_cast<float>(dot);
    out.order.push_back(i);
  }
  if (out.order.empty()) {
    throw DataError("empty candidate set: every gallery row was excluded");
  }
  std::sort(out.order.begin(), out.order.end(),
            [&sims](std::size_t a, std::size_t b) {
              if (sims[a] != sims[b]) return sims[a] > sims[b];
              return a < b;
            });
  out.scores.reserve(out.order.size());
  for (std::size_t i : out.order) out.scores.push_back(sims[i]);
  return out;
}

double average_precision(const RankedList& ranked,
                         const std::set<std::size_t>& relevant) {
  if (relevant.empty()) {
    throw DataError("no ground truth: the relevant set is empty");
  }
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < ranked.order.size(); ++r) {
    if (relevant.contains(ranked.order[r])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return sum / static_cast<double>(relevant.size());
}

EvalResult evaluate_descriptors(const std::vector<Tensor<float>>& queries,
                                const std::vector<int>& query_identities,
                                const std::vector<int>& query_cameras,
                                const GalleryIndex& gallery, int k_max) {
  if (queries.empty()) throw DataError("empty query set");
  if (query_identities.size() != queries.size() ||
      query_cameras.size() != queries.size()) {
    throw DataError("query descriptor/label counts disagree");
  }
  if (k_max < 1) throw ConfigError("k_max must be >= 1");

  EvalResult res;
  std::vector<std::size_t> cmc_hits(static_cast<std::size_t>(k_max), 0);
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const int qid = query_identities[qi];
    const int qcam = query_cameras[qi];
    auto excluded = [&gallery, qid, qcam](std::size_t i) {
      return gallery.identities[i] == qid && gallery.cameras[i] == qcam;
    };
    std::set<std::size_t> relevant;
    if (qid >= 0) {
      for (std::size_t i = 0; i < gallery.size(); ++i) {
        if (gallery.identities[i] == qid && !excluded(i)) relevant.insert(i);
      }
    }
    if (relevant.empty()) {
      ++res.queries_dropped;
      continue;
    }
    const RankedList ranked = rank_query(queries[qi], gallery, excluded);
    res.per_query_ap.push_back(average_precision(ranked, relevant));
    for (std::size_t r = 0; r < ranked.order.size(); ++r) {
      if (relevant.contains(ranked.order[r])) {
        for (std::size_t k = r; k < static_cast<std::size_t>(k_max); ++k) {
          ++cmc_hits[k];
        }
        break;
      }
    }
    ++res.queries_evaluated;
  }
  if (res.queries_evaluated == 0) {
    throw DataError(
        "no query has cross-camera ground truth in the gallery");
  }
  res.cmc.resize(static_cast<std::size_t>(k_max));
  for (std::size_t k = 0; k < res.cmc.size(); ++k) {
    res.cmc[k] = static_cast<double>(cmc_hits[k]) /
                 static_cast<double>(res.queries_evaluated);
  }
  double sum = 0.0;
  for (double ap : res.per_query_ap) sum += ap;
  res.map = sum / static_cast<double>(res.queries_evaluated);
  return res;
}

EvalResult evaluate(const Model<float>& model, const Dataset& queries,
                    const GalleryIndex& gallery, const EvalOptions& opt) {
  std::vector<Tensor<float>> descs;
  std::vector<int> ids, cams;
  descs.reserve(queries.records.size());
  for (const DatasetRecord& rec : queries.records) {
    descs.push_back(extract_descriptor(model, eval_image(rec, opt)));
    ids.push_back(rec.identity);
    cams.push_back(rec.camera);
  }
  return evaluate_descriptors(descs, ids, cams, gallery, opt.k_max);
}

void save_gallery(const GalleryIndex& gallery, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write gallery " + path);
  os.write(kR2gxMagic, 4);
  write_u8(os, kR2gxVersion);
  write_u32_le(os, static_cast<std::uint32_t>(gallery.dim()));
  write_u32_le(os, static_cast<std::uint32_t>(gallery.size()));
  std::vector<float> row(gallery.dim());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    for (std::size_t j = 0; j < gallery.dim(); ++j) {
      row[j] = gallery.descriptors.at(i, j);
    }
    write_f32_le(os, row.data(), row.size());
    write_i32_le(os, gallery.identities[i]);
    write_i32_le(os, gallery.cameras[i]);
  }
  if (!os) throw IoError("write failed: " + path);
}

GalleryIndex load_gallery(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open gallery " + path);
  char magic[4] = {0, 0, 0, 0};
  is.read(magic, 4);
  if (is.gcount() != 4) throw DataError("truncated gallery header in " + path);
  if (std::memcmp(magic, kR2gxMagic, 4) != 0) {
    throw DataError("bad R2GX magic in " + path);
  }
  const std::uint8_t version = read_u8(is, "gallery version");
  if (version != kR2gxVersion) {
    throw DataError("unsupported R2GX version " + std::to_string(version) +
                    " in " + path);
  }
  const std::uint32_t d = read_u32_le(is, "gallery descriptor dim");
  const std::uint32_t g = read_u32_le(is, "gallery row count");
  if (d == 0 || g == 0) throw DataError("empty gallery in " + path);
  GalleryIndex out;
  out.descriptors = Tensor<float>({g, d});
  out.identities.resize(g);
  out.cameras.resize(g);
  out.norms.assign(g, 1.0f);  // rows are stored normalized
  std::vector<float> row(d);
  for (std::uint32_t i = 0; i < g; ++i) {
    read_f32_le(is, row.data(), row.size(), "gallery descriptor row");
    for (std::uint32_t j = 0; j < d; ++j) out.descriptors.at(i, j) = row[j];
    out.identities[i] = read_i32_le(is, "gallery identity");
    out.cameras[i] = read_i32_le(is, "gallery camera");
  }
  return out;
}

std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10f", v);
  std::string s(buf);
  const std::size_t dot = s.find('.');
  std::size_t end = s.size();
  while (end > dot + 2 && s[end - 1] == '0') --end;
  return s.substr(0, end);
}

}  // namespace reid
