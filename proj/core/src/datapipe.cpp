#include "reid/datapipe.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "reid/rten.hpp"

namespace fs = std::filesystem;

namespace reid {

namespace {

int parse_int_field(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    throw DataError("cannot parse " + what + " from '" + s + "'");
  }
  if (used != s.size()) {
    throw DataError("cannot parse " + what + " from '" + s + "'");
  }
  return v;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

Dataset finalize_dataset(std::vector<DatasetRecord> records,
                         const std::string& origin) {
  if (records.empty()) throw DataError("empty dataset: " + origin);
  std::sort(records.begin(), records.end(),
            [](const DatasetRecord& a, const DatasetRecord& b) {
              return a.path < b.path;
            });
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].path == records[i - 1].path) {
      throw DataError("duplicate path in dataset: " + records[i].path);
    }
  }
  Dataset ds;
  ds.records = std::move(records);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const DatasetRecord& r = ds.records[i];
    if (r.camera < 1) {
      throw DataError("camera must be a positive integer in " + r.path);
    }
    if (r.identity < -1) {
      throw DataError("identity must be >= -1 in " + r.path);
    }
    ds.identity_index[r.identity].push_back(i);
  }
  int next = 0;
  for (const auto& [id, positions] : ds.identity_index) {
    if (id >= 0) ds.class_of[id] = next++;
  }
  return ds;
}

}  // namespace

Dataset load_dataset(const std::string& root_path) {
  if (!fs::is_directory(root_path)) {
    throw IoError("dataset root is not a directory: " + root_path);
  }
  static const std::regex market_name(R"(^(-?\d+)_c(\d+).*)");
  std::vector<DatasetRecord> records;
  for (const fs::directory_entry& e : fs::directory_iterator(root_path)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name.empty() || name[0] == '.') continue;
    std::smatch m;
    if (!std::regex_match(name, m, market_name)) {
      throw DataError("unparseable dataset filename: " + name +
                      " (expected <identity>_c<camera>...)");
    }
    records.push_back({e.path().string(),
                       parse_int_field(m[1].str(), "identity"),
                       parse_int_field(m[2].str(), "camera")});
  }
  return finalize_dataset(std::move(records), root_path);
}

Dataset load_dataset(const std::string& root_path,
                     const std::string& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest);
  std::vector<DatasetRecord> records;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (first) {
      first = false;
      std::string probe = lowercase(line);
      probe.erase(std::remove(probe.begin(), probe.end(), ' '), probe.end());
      if (probe == "path,identity,camera") continue;  // optional header
    }
    std::istringstream ss(line);
    std::string path, identity, camera, extra;
    if (!std::getline(ss, path, ',') || !std::getline(ss, identity, ',') ||
        !std::getline(ss, camera, ',') || std::getline(ss, extra, ',')) {
      throw DataError("bad manifest line (want path,identity,camera): " +
                      line);
    }
    path = trim(path);
    if (path.empty()) throw DataError("empty path in manifest line: " + line);
    fs::path p(path);
    if (p.is_relative()) p = fs::path(root_path) / p;
    records.push_back({p.string(), parse_int_field(trim(identity), "identity"),
                       parse_int_field(trim(camera), "camera")});
  }
  return finalize_dataset(std::move(records), manifest);
}

namespace {

Tensor<float> load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') {
    throw DataError("not a binary (P6) PPM: " + path);
  }
  auto next_int = [&in, &path]() -> long {
    int c = in.get();
    while (in && (std::isspace(c) || c == '#')) {
      if (c == '#') {
        while (in && c != '\n') c = in.get();
      }
      c = in.get();
    }
    if (!in || !std::isdigit(c)) {
      throw DataError("malformed PPM header in " + path);
    }
    long v = 0;
    while (in && std::isdigit(c)) {
      v = v * 10 + (c - '0');
      c = in.get();
    }
    in.unget();
    return v;
  };
  const long w = next_int();
  const long h = next_int();
  const long maxval = next_int();
  in.get();  // single whitespace after maxval
  if (w < 1 || h < 1) throw DataError("bad PPM dimensions in " + path);
  if (maxval < 1 || maxval > 255) {
    throw DataError("unsupported PPM maxval " + std::to_string(maxval) +
                    " in " + path);
  }
  std::vector<unsigned char> raw(static_cast<std::size_t>(3 * w * h));
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw DataError("truncated PPM payload in " + path);
  }
  Tensor<float> img({3, static_cast<std::size_t>(h),
                     static_cast<std::size_t>(w)});
  const float scale = 1.0f / static_cast<float>(maxval);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      for (long c = 0; c < 3; ++c) {
        img.at(static_cast<std::size_t>(c), static_cast<std::size_t>(y),
               static_cast<std::size_t>(x)) =
            scale * static_cast<float>(raw[static_cast<std::size_t>(
                        (y * w + x) * 3 + c)]);
      }
    }
  }
  return img;
}

}  // namespace

Tensor<float> load_image(const std::string& path) {
  const std::string ext = lowercase(fs::path(path).extension().string());
  if (ext == ".rten") {
    Tensor<float> t = read_rten<float>(path);
    if (t.rank() != 3) {
      throw DataError("image tensor must be [C,H,W], got " +
                      dims_to_string(t.dims()) + " in " + path);
    }
    return t;
  }
  if (ext == ".ppm") return load_ppm(path);
  throw DataError("unsupported image format (want .rten or .ppm): " + path);
}

const Tensor<float>& ImageCache::get(const std::string& path) {
  auto it = cache_.find(path);
  if (it == cache_.end()) {
    it = cache_.emplace(path, load_image(path)).first;
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// Augmentation

void validate_augment_config(const AugmentConfig& cfg) {
  if (cfg.crop_h < 1 || cfg.crop_w < 1) {
    throw ConfigError("crop dims must be >= 1");
  }
  if (cfg.rea_probability < 0.0 || cfg.rea_probability > 1.0) {
    throw ConfigError("rea_probability must lie in [0,1]");
  }
  if (!(cfg.rea_area_lo > 0.0 && cfg.rea_area_lo < cfg.rea_area_hi &&
        cfg.rea_area_hi < 1.0)) {
    throw ConfigError("rea area range must satisfy 0 < lo < hi < 1");
  }
  if (!(cfg.rea_aspect_lo > 0.0 && cfg.rea_aspect_lo < cfg.rea_aspect_hi)) {
    throw ConfigError("rea aspect range must satisfy 0 < lo < hi");
  }
}

Tensor<float> bilinear_resize(const Tensor<float>& image, int out_h,
                              int out_w) {
  if (image.rank() != 3) {
    throw ShapeError("bilinear_resize expects [C,H,W], got " +
                     dims_to_string(image.dims()));
  }
  if (out_h < 1 || out_w < 1) throw ShapeError("resize target must be >= 1");
  const std::size_t c_n = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<float> out({c_n, static_cast<std::size_t>(out_h),
                     static_cast<std::size_t>(out_w)});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (std::size_t oy = 0; oy < static_cast<std::size_t>(out_h); ++oy) {
    double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    fy = std::max(0.0, std::min(fy, static_cast<double>(h - 1)));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < static_cast<std::size_t>(out_w); ++ox) {
      double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      fx = std::max(0.0, std::min(fx, static_cast<double>(w - 1)));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < c_n; ++c) {
        const double v =
            (1.0 - wy) * ((1.0 - wx) * image.at(c, y0, x0) +
                          wx * image.at(c, y0, x1)) +
            wy * ((1.0 - wx) * image.at(c, y1, x0) +
                  wx * image.at(c, y1, x1));
        out.at(c, oy, ox) = static_cast<float>(v);
      }
    }
  }
  return out;
}

Tensor<float> random_crop(const Tensor<float>& image, int out_h, int out_w,
                          Rng& rng) {
  if (image.rank() != 3) {
    throw ShapeError("random_crop expects [C,H,W], got " +
                     dims_to_string(image.dims()));
  }
  if (out_h < 1 || out_w < 1) throw ShapeError("crop target must be >= 1");
  const Tensor<float>* src = &image;
  Tensor<float> resized;
  if (image.dim(1) < static_cast<std::size_t>(out_h) ||
      image.dim(2) < static_cast<std::size_t>(out_w)) {
    resized = bilinear_resize(
        image, std::max<int>(out_h, static_cast<int>(image.dim(1))),
        std::max<int>(out_w, static_cast<int>(image.dim(2))));
    src = &resized;
  }
  const std::size_t c_n = src->dim(0);
  const std::size_t top =
      rng.uniform_int(src->dim(1) - static_cast<std::size_t>(out_h) + 1);
  const std::size_t left =
      rng.uniform_int(src->dim(2) - static_cast<std::size_t>(out_w) + 1);
  Tensor<float> out({c_n, static_cast<std::size_t>(out_h),
                     static_cast<std::size_t>(out_w)});
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t y = 0; y < static_cast<std::size_t>(out_h); ++y) {
      for (std::size_t x = 0; x < static_cast<std::size_t>(out_w); ++x) {
        out.at(c, y, x) = src->at(c, top + y, left + x);
      }
    }
  }
  return out;
}

Tensor<float> random_erase(const Tensor<float>& image,
                           const AugmentConfig& cfg, Rng& rng,
                           EraseRect* rect) {
  validate_augment_config(cfg);
  if (image.rank() != 3) {
    throw ShapeError("random_erase expects [C,H,W], got " +
                     dims_to_string(image.dims()));
  }
  if (rect) *rect = EraseRect{};
  Tensor<float> out = image;
  if (rng.uniform() >= cfg.rea_probability) return out;

  const int h = static_cast<int>(image.dim(1));
  const int w = static_cast<int>(image.dim(2));
  const double full = static_cast<double>(h) * static_cast<double>(w);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double target = rng.uniform(cfg.rea_area_lo, cfg.rea_area_hi) * full;
    const double aspect = rng.uniform(cfg.rea_aspect_lo, cfg.rea_aspect_hi);
    const int rh = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int rw = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (rh < 1 || rw < 1 || rh > h || rw > w) continue;
    // Rounding to whole pixels can push the realized ratios out of range;
    // keep only rectangles that still honor the configured bounds.
    const double ratio = static_cast<double>(rh) * rw / full;
    const double realized_aspect = static_cast<double>(rh) / rw;
    if (ratio < cfg.rea_area_lo || ratio > cfg.rea_area_hi) continue;
    if (realized_aspect < cfg.rea_aspect_lo ||
        realized_aspect > cfg.rea_aspect_hi) {
      continue;
    }
    const int top = static_cast<int>(rng.uniform_int(
        static_cast<std::uint64_t>(h - rh + 1)));
    const int left = static_cast<int>(rng.uniform_int(
        static_cast<std::uint64_t>(w - rw + 1)));
    for (std::size_t c = 0; c < image.dim(0); ++c) {
      for (int y = top; y < top + rh; ++y) {
        for (int x = left; x < left + rw; ++x) {
          out.at(c, static_cast<std::size_t>(y),
                 static_cast<std::size_t>(x)) =
              static_cast<float>(rng.uniform());
        }
      }
    }
    if (rect) *rect = {true, top, left, rh, rw};
    return out;
  }
  return out;  // no valid placement found; image left unchanged
}

Tensor<float> augment_image(const Tensor<float>& image,
                            const AugmentConfig& cfg, Rng& rng) {
  const int big_h = static_cast<int>(std::lround(cfg.crop_h * 1.125));
  const int big_w = static_cast<int>(std::lround(cfg.crop_w * 1.125));
  Tensor<float> t = bilinear_resize(image, big_h, big_w);
  t = random_crop(t, cfg.crop_h, cfg.crop_w, rng);
  return random_erase(t, cfg, rng);
}

// ---------------------------------------------------------------------------
// Pair sampling

namespace {

struct IdPools {
  std::vector<int> all;    // identities >= 0 present in the dataset
  std::vector<int> multi;  // identities with >= 2 records
};

IdPools identity_pools(const Dataset& ds) {
  IdPools pools;
  for (const auto& [id, positions] : ds.identity_index) {
    if (id < 0) continue;
    pools.all.push_back(id);
    if (positions.size() >= 2) pools.multi.push_back(id);
  }
  return pools;
}

// Uniform element of [0,n) \ {skip}.
std::size_t pick_other(std::size_t n, std::size_t skip, Rng& rng) {
  std::size_t j = rng.uniform_int(n - 1);
  if (j >= skip) ++j;
  return j;
}

}  // namespace

std::vector<PairIndices> sample_pair_indices(const Dataset& ds,
                                             std::size_t count,
                                             double positive_fraction,
                                             Rng& rng) {
  if (count == 0) throw DataError("cannot sample an empty pair batch");
  if (positive_fraction < 0.0 || positive_fraction > 1.0) {
    throw ConfigError("positive_fraction must lie in [0,1]");
  }
  const IdPools pools = identity_pools(ds);
  const std::size_t n_pos = static_cast<std::size_t>(
      std::llround(static_cast<double>(count) * positive_fraction));
  const std::size_t n_neg = count - n_pos;
  if (n_pos > 0 && pools.multi.empty()) {
    throw DataError(
        "positive pairs requested but no identity has two images");
  }
  if (n_neg > 0 && pools.all.size() < 2) {
    throw DataError(
        "negative pairs requested but the dataset has fewer than two "
        "identities");
  }
  std::vector<PairIndices> out;
  out.reserve(count);
  for (std::size_t i = 0; i < n_pos; ++i) {
    const int id = pools.multi[rng.uniform_int(pools.multi.size())];
    const std::vector<std::size_t>& pos = ds.identity_index.at(id);
    const std::size_t a = rng.uniform_int(pos.size());
    const std::size_t b = pick_other(pos.size(), a, rng);
    out.push_back({pos[a], pos[b], PairLabel::kSame});
  }
  for (std::size_t i = 0; i < n_neg; ++i) {
    const std::size_t ia = rng.uniform_int(pools.all.size());
    const std::size_t ib = pick_other(pools.all.size(), ia, rng);
    const std::vector<std::size_t>& pa = ds.identity_index.at(pools.all[ia]);
    const std::vector<std::size_t>& pb = ds.identity_index.at(pools.all[ib]);
    out.push_back({pa[rng.uniform_int(pa.size())],
                   pb[rng.uniform_int(pb.size())], PairLabel::kDifferent});
  }
  return out;
}

std::vector<PairIndices> pair_partners_for_anchors(
    const Dataset& ds, const std::vector<std::size_t>& anchors,
    double positive_fraction, Rng& rng) {
  if (anchors.empty()) throw DataError("cannot sample an empty pair batch");
  const IdPools pools = identity_pools(ds);
  const std::size_t n_pos = static_cast<std::size_t>(std::llround(
      static_cast<double>(anchors.size()) * positive_fraction));
  std::vector<PairIndices> out;
  out.reserve(anchors.size());
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    const std::size_t a = anchors[k];
    const DatasetRecord& rec = ds.records.at(a);
    if (rec.identity < 0) {
      throw DataError("distractor record used as a training anchor: " +
                      rec.path);
    }
    if (k < n_pos) {
      const std::vector<std::size_t>& pos =
          ds.identity_index.at(rec.identity);
      if (pos.size() < 2) {
        throw DataError("identity " + std::to_string(rec.identity) +
                        " has a single image; cannot form a positive pair");
      }
      const std::size_t idx = static_cast<std::size_t>(
          std::lower_bound(pos.begin(), pos.end(), a) - pos.begin());
      out.push_back({a, pos[pick_other(pos.size(), idx, rng)],
                     PairLabel::kSame});
    } else {
      if (pools.all.size() < 2) {
        throw DataError(
            "negative pairs requested but the dataset has fewer than two "
            "identities");
      }
      const std::size_t idx = static_cast<std::size_t>(
          std::lower_bound(pools.all.begin(), pools.all.end(),
                           rec.identity) -
          pools.all.begin());
      const int other_id = pools.all[pick_other(pools.all.size(), idx, rng)];
      const std::vector<std::size_t>& pos = ds.identity_index.at(other_id);
      out.push_back({a, pos[rng.uniform_int(pos.size())],
                     PairLabel::kDifferent});
    }
  }
  return out;
}

PairBatch<float> assemble_pair_batch(const Dataset& ds,
                                     const std::vector<PairIndices>& pairs,
                                     const RecordLoader& load) {
  if (pairs.empty()) throw DataError("cannot assemble an empty pair batch");
  PairBatch<float> batch;
  const std::size_t b = pairs.size();
  std::vector<std::size_t> expect;
  for (std::size_t i = 0; i < b; ++i) {
    const DatasetRecord& ra = ds.records.at(pairs[i].a);
    const DatasetRecord& rb = ds.records.at(pairs[i].b);
    Tensor<float> ia = load(ra);
    Tensor<float> ib = load(rb);
    if (ia.rank() != 3) {
      throw ShapeError("record loader must yield [C,H,W], got " +
                       dims_to_string(ia.dims()) + " for " + ra.path);
    }
    if (i == 0) {
      expect = ia.dims();
      batch.images_a =
          Tensor<float>({b, ia.dim(0), ia.dim(1), ia.dim(2)});
      batch.images_b = Tensor<float>(batch.images_a.dims());
    }
    if (ia.dims() != expect || ib.dims() != expect) {
      throw ShapeError("batch images disagree in shape: " + ra.path +
                       " yields " + dims_to_string(ia.dims()) + ", " +
                       rb.path + " yields " + dims_to_string(ib.dims()) +
                       ", expected " + dims_to_string(expect));
    }
    std::copy(ia.values().begin(), ia.values().end(),
              batch.images_a.values().begin() +
                  static_cast<std::ptrdiff_t>(i * ia.size()));
    std::copy(ib.values().begin(), ib.values().end(),
              batch.images_b.values().begin() +
                  static_cast<std::ptrdiff_t>(i * ib.size()));
    batch.labels_a.push_back(ds.class_of.at(ra.identity));
    batch.labels_b.push_back(ds.class_of.at(rb.identity));
    batch.pair_labels.push_back(pairs[i].label);
  }
  validate_pair_batch(batch);
  return batch;
}

PairBatch<float> sample_pair_batch(const Dataset& ds, std::size_t batch_size,
                                   double positive_fraction, Rng& rng,
                                   const RecordLoader& load) {
  return assemble_pair_batch(
      ds, sample_pair_indices(ds, batch_size, positive_fraction, rng), load);
}

}  // namespace reid
