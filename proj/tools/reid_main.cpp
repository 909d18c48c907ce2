#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "reid/checkpoint.hpp"
#include "reid/gradcheck.hpp"
#include "reid/retrieval.hpp"
#include "reid/rten.hpp"
#include "reid/synth.hpp"
#include "reid/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliConfig {
  reid::BackboneConfig backbone;
  reid::TrainConfig train;
  std::string train_manifest;
  std::string data_root;  // defaults to the manifest's directory
  std::string output_dir = ".";
};

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (const auto& item : j.items()) {
    if (!allowed.contains(item.key())) {
      throw reid::ConfigError("unknown key '" + item.key() + "' in " + where);
    }
  }
}

std::pair<double, double> range_from_json(const json& j,
                                          const std::string& where) {
  if (!j.is_array() || j.size() != 2) {
    throw reid::ConfigError(where + " must be a [lo, hi] pair");
  }
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

void apply_train_json(const json& j, reid::TrainConfig& cfg) {
  reject_unknown(j,
                 {"base_lr", "warmup_epochs", "warmup_factor", "decay_every",
                  "decay_factor", "total_epochs", "batch_size", "momentum",
                  "weight_decay", "positive_fraction", "loss_weights", "seed",
                  "max_iterations"},
                 "train config");
  if (j.contains("base_lr")) cfg.base_lr = j.at("base_lr").get<double>();
  if (j.contains("warmup_epochs")) {
    cfg.warmup_epochs = j.at("warmup_epochs").get<int>();
  }
  if (j.contains("warmup_factor")) {
    cfg.warmup_factor = j.at("warmup_factor").get<double>();
  }
  if (j.contains("decay_every")) {
    cfg.decay_every = j.at("decay_every").get<int>();
  }
  if (j.contains("decay_factor")) {
    cfg.decay_factor = j.at("decay_factor").get<double>();
  }
  if (j.contains("total_epochs")) {
    cfg.total_epochs = j.at("total_epochs").get<int>();
  }
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
  if (j.contains("momentum")) cfg.momentum = j.at("momentum").get<double>();
  if (j.contains("weight_decay")) {
    cfg.weight_decay = j.at("weight_decay").get<double>();
  }
  if (j.contains("positive_fraction")) {
    cfg.positive_fraction = j.at("positive_fraction").get<double>();
  }
  if (j.contains("loss_weights")) {
    const json& w = j.at("loss_weights");
    if (!w.is_array() || w.size() != 3) {
      throw reid::ConfigError(
          "loss_weights must be [id_a, id_b, verification]");
    }
    cfg.loss_weights.id_a = w.at(0).get<double>();
    cfg.loss_weights.id_b = w.at(1).get<double>();
    cfg.loss_weights.verif = w.at(2).get<double>();
  }
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("max_iterations")) {
    cfg.max_iterations = j.at("max_iterations").get<int>();
  }
}

void apply_augment_json(const json& j, reid::AugmentConfig& cfg) {
  reject_unknown(j,
                 {"crop_h", "crop_w", "rea_probability", "rea_area_range",
                  "rea_aspect_range"},
                 "augment config");
  if (j.contains("crop_h")) cfg.crop_h = j.at("crop_h").get<int>();
  if (j.contains("crop_w")) cfg.crop_w = j.at("crop_w").get<int>();
  if (j.contains("rea_probability")) {
    cfg.rea_probability = j.at("rea_probability").get<double>();
  }
  if (j.contains("rea_area_range")) {
    std::tie(cfg.rea_area_lo, cfg.rea_area_hi) =
        range_from_json(j.at("rea_area_range"), "rea_area_range");
  }
  if (j.contains("rea_aspect_range")) {
    std::tie(cfg.rea_aspect_lo, cfg.rea_aspect_hi) =
        range_from_json(j.at("rea_aspect_range"), "rea_aspect_range");
  }
}

CliConfig load_cli_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw reid::IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::exception& e) {
    throw reid::ConfigError("config file " + path +
                            " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) {
    throw reid::ConfigError("config file " + path + " must hold an object");
  }
  reject_unknown(j, {"backbone", "train", "augment", "data", "output"},
                 "config file " + path);
  CliConfig cfg;
  try {
    if (j.contains("backbone")) {
      cfg.backbone =
          reid::backbone_config_from_json(j.at("backbone").dump());
    }
    if (j.contains("train")) apply_train_json(j.at("train"), cfg.train);
    if (j.contains("augment")) {
      apply_augment_json(j.at("augment"), cfg.train.augment);
    }
    if (j.contains("data")) {
      const json& d = j.at("data");
      reject_unknown(d, {"train_manifest", "root"}, "data config");
      if (d.contains("train_manifest")) {
        cfg.train_manifest = d.at("train_manifest").get<std::string>();
      }
      if (d.contains("root")) cfg.data_root = d.at("root").get<std::string>();
    }
    if (j.contains("output")) {
      const json& o = j.at("output");
      reject_unknown(o, {"dir"}, "output config");
      if (o.contains("dir")) cfg.output_dir = o.at("dir").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw reid::ConfigError("bad value in config file " + path + ": " +
                            e.what());
  }
  // Paths in the config resolve against the config file's directory.
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&base](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) {
      p = (base / p).string();
    }
  };
  resolve(cfg.train_manifest);
  resolve(cfg.data_root);
  resolve(cfg.output_dir);
  return cfg;
}

reid::Dataset load_manifest_dataset(const std::string& manifest,
                                    const std::string& root = "") {
  if (!fs::is_regular_file(manifest)) {
    throw reid::IoError("manifest not found: " + manifest);
  }
  const std::string base =
      root.empty() ? fs::path(manifest).parent_path().string() : root;
  return reid::load_dataset(base, manifest);
}

int run_synth(const std::string& out_dir, const reid::SynthConfig& cfg) {
  const reid::SynthResult r = reid::generate_synth_dataset(out_dir, cfg);
  std::cout << "wrote " << r.images_written << " images under "
            << r.images_dir << "\n"
            << "train manifest: " << r.train_manifest << "\n"
            << "query manifest: " << r.query_manifest << "\n"
            << "gallery manifest: " << r.gallery_manifest << "\n";
  return 0;
}

int run_train(const std::string& config_path, bool seed_set,
              std::uint64_t seed, const std::string& out_override) {
  CliConfig cfg = load_cli_config(config_path);
  if (seed_set) cfg.train.seed = seed;
  if (!out_override.empty()) cfg.output_dir = out_override;
  if (cfg.train_manifest.empty()) {
    throw reid::ConfigError("config file " + config_path +
                            " sets no data.train_manifest");
  }
  const reid::Dataset ds = load_manifest_dataset(
      cfg.train_manifest,
      cfg.data_root.empty() ? "" : cfg.data_root);
  fs::create_directories(cfg.output_dir);

  const reid::TrainResult result = reid::train(cfg.train, cfg.backbone, ds);
  const std::string ck_path =
      (fs::path(cfg.output_dir) / "checkpoint.r2mt").string();
  const std::string csv_path =
      (fs::path(cfg.output_dir) / "loss.csv").string();
  reid::save_checkpoint(result.model, result.state, ck_path);
  reid::write_loss_csv(csv_path, result.history);
  std::cout << "trained " << result.iterations << " iterations over "
            << ds.records.size() << " records\n"
            << "checkpoint: " << ck_path << "\n"
            << "loss history: " << csv_path << "\n";
  if (!result.history.empty()) {
    const reid::LossRow& last = result.history.back();
    std::cout << "final losses: id_a " << last.id_loss_a << ", id_b "
              << last.id_loss_b << ", verif " << last.verif_loss << "\n";
  }
  return 0;
}

int run_extract(const std::string& checkpoint, const std::string& manifest,
                const std::string& out, int resize_h, int resize_w) {
  const reid::Checkpoint ck = reid::load_checkpoint(checkpoint);
  const reid::Dataset ds = load_manifest_dataset(manifest);
  const reid::EvalOptions opt{resize_h, resize_w, 1};
  reid::Tensor<float> matrix;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    reid::Tensor<float> img = reid::load_image(ds.records[i].path);
    if (opt.resize_h > 0 && opt.resize_w > 0) {
      img = reid::bilinear_resize(img, opt.resize_h, opt.resize_w);
    }
    const reid::Tensor<float> f = reid::extract_descriptor(ck.model, img);
    if (i == 0) {
      matrix = reid::Tensor<float>({ds.records.size(), f.size()});
    }
    for (std::size_t j = 0; j < f.size(); ++j) matrix.at(i, j) = f[j];
  }
  reid::write_rten(out, matrix);
  std::cout << "wrote " << matrix.dim(0) << "x" << matrix.dim(1)
            << " descriptor matrix to " << out << "\n";
  return 0;
}

int run_rank(const std::string& checkpoint, const std::string& query_image,
             const std::string& gallery_manifest,
             const std::string& gallery_index, int top_k, int resize_h,
             int resize_w) {
  const reid::Checkpoint ck = reid::load_checkpoint(checkpoint);
  const reid::Dataset gallery_ds = load_manifest_dataset(gallery_manifest);
  const reid::EvalOptions opt{resize_h, resize_w, 1};
  const reid::GalleryIndex index =
      gallery_index.empty() ? reid::build_gallery(ck.model, gallery_ds, opt)
                            : reid::load_gallery(gallery_index);
  if (index.size() != gallery_ds.records.size()) {
    throw reid::DataError("gallery index has " +
                          std::to_string(index.size()) + " rows but " +
                          gallery_manifest + " lists " +
                          std::to_string(gallery_ds.records.size()));
  }
  reid::Tensor<float> img = reid::load_image(query_image);
  if (opt.resize_h > 0 && opt.resize_w > 0) {
    img = reid::bilinear_resize(img, opt.resize_h, opt.resize_w);
  }
  const reid::Tensor<float> q = reid::extract_descriptor(ck.model, img);
  const reid::RankedList ranked = reid::rank_query(q, index);
  const std::size_t n =
      std::min<std::size_t>(static_cast<std::size_t>(top_k),
                            ranked.order.size());
  std::cout << "rank,path,identity,camera,similarity\n";
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = ranked.order[r];
    std::cout << (r + 1) << ',' << gallery_ds.records[i].path << ','
              << index.identities[i] << ',' << index.cameras[i] << ','
              << reid::format_metric(ranked.scores[r]) << "\n";
  }
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& query_manifest,
             const std::string& gallery_manifest, int top_k,
             const std::string& out, int resize_h, int resize_w) {
  const reid::Checkpoint ck = reid::load_checkpoint(checkpoint);
  const reid::Dataset queries = load_manifest_dataset(query_manifest);
  const reid::Dataset gallery_ds = load_manifest_dataset(gallery_manifest);
  const reid::EvalOptions opt{resize_h, resize_w, top_k};
  const reid::GalleryIndex gallery =
      reid::build_gallery(ck.model, gallery_ds, opt);
  const reid::EvalResult res = reid::evaluate(ck.model, queries, gallery, opt);

  std::ostringstream csv;
  csv << "k,acc_k\n";
  for (std::size_t k = 0; k < res.cmc.size(); ++k) {
    csv << (k + 1) << ',' << reid::format_metric(res.cmc[k]) << "\n";
  }
  csv << "mAP," << reid::format_metric(res.map) << "\n";

  std::cout << "evaluated " << res.queries_evaluated << " queries against "
            << gallery.size() << " gallery rows (" << res.queries_dropped
            << " dropped for missing ground truth)\n"
            << csv.str();
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw reid::IoError("cannot write report to " + out);
    f << csv.str();
  }
  return 0;
}

int run_gradcheck(const std::string& scope, int seeds, std::uint64_t seed) {
  const std::vector<reid::GradCheckCase> cases =
      reid::run_gradient_suite(scope, seeds, seed);
  std::printf("%-32s %12s %10s  %s\n", "op", "max_rel_err", "tolerance",
              "status");
  bool all_pass = true;
  for (const reid::GradCheckCase& c : cases) {
    std::printf("%-32s %12.3e %10.0e  %s\n", c.name.c_str(), c.max_rel_error,
                c.tolerance, c.pass ? "PASS" : "FAIL");
    all_pass = all_pass && c.pass;
  }
  if (!all_pass) {
    std::cerr << "gradient check failed\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Res2Net person re-identification toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand(
      "synth", "Generate a deterministic synthetic re-ID dataset");
  std::string synth_out;
  reid::SynthConfig synth_cfg;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--ids", synth_cfg.n_ids, "Number of identities")
      ->check(CLI::Range(2, 100000));
  synth->add_option("--imgs-per-id", synth_cfg.imgs_per_id,
                    "Images per identity")
      ->check(CLI::Range(2, 100000));
  synth->add_option("--height", synth_cfg.height, "Image height")
      ->check(CLI::Range(4, 4096));
  synth->add_option("--width", synth_cfg.width, "Image width")
      ->check(CLI::Range(4, 4096));
  std::uint64_t synth_seed = 0;
  synth->add_option("--seed", synth_seed, "Generation seed");

  // train
  auto* train = app.add_subcommand("train", "Train from a JSON config file");
  std::string train_config, train_out;
  std::uint64_t train_seed = 0;
  train->add_option("--config", train_config, "JSON config file")->required();
  auto* train_seed_opt =
      train->add_option("--seed", train_seed, "Override the config seed");
  train->add_option("--out", train_out, "Override the output directory");

  // extract
  auto* extract = app.add_subcommand(
      "extract", "Write a descriptor matrix for a manifest of images");
  std::string ex_ck, ex_manifest, ex_out;
  int ex_h = 0, ex_w = 0;
  extract->add_option("--checkpoint", ex_ck, "R2MT checkpoint")->required();
  extract->add_option("--manifest", ex_manifest, "Image manifest CSV")
      ->required();
  extract->add_option("--out", ex_out, "Output RTEN file")->required();
  extract->add_option("--resize-h", ex_h, "Resize images to this height");
  extract->add_option("--resize-w", ex_w, "Resize images to this width");

  // rank
  auto* rank = app.add_subcommand(
      "rank", "Rank a gallery against one query image");
  std::string rk_ck, rk_query, rk_manifest, rk_index;
  int rk_top = 10, rk_h = 0, rk_w = 0;
  rank->add_option("--checkpoint", rk_ck, "R2MT checkpoint")->required();
  rank->add_option("--query", rk_query, "Query image (RTEN or PPM)")
      ->required();
  rank->add_option("--gallery", rk_manifest, "Gallery manifest CSV")
      ->required();
  rank->add_option("--gallery-index", rk_index,
                   "Prebuilt R2GX gallery index (else built on the fly)");
  rank->add_option("--top-k", rk_top, "Rows to print")
      ->check(CLI::Range(1, 1000000));
  rank->add_option("--resize-h", rk_h, "Resize images to this height");
  rank->add_option("--resize-w", rk_w, "Resize images to this width");

  // eval
  auto* eval = app.add_subcommand(
      "eval", "CMC / mAP evaluation of a checkpoint");
  std::string ev_ck, ev_query, ev_gallery, ev_out;
  int ev_top = 20, ev_h = 0, ev_w = 0;
  eval->add_option("--checkpoint", ev_ck, "R2MT checkpoint")->required();
  eval->add_option("--query", ev_query, "Query manifest CSV")->required();
  eval->add_option("--gallery", ev_gallery, "Gallery manifest CSV")
      ->required();
  eval->add_option("--top-k", ev_top, "CMC depth")
      ->check(CLI::Range(1, 1000000));
  eval->add_option("--out", ev_out, "Also write the CSV report here");
  eval->add_option("--resize-h", ev_h, "Resize images to this height");
  eval->add_option("--resize-w", ev_w, "Resize images to this width");

  // gradcheck
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "Finite-difference check of every differentiable op");
  std::string gc_scope = "all";
  int gc_seeds = 10;
  std::uint64_t gc_seed = 7;
  gradcheck->add_option("--scope", gc_scope,
                        "all, primitives, block, or losses")
      ->check(CLI::IsMember({"all", "primitives", "block", "losses"}));
  gradcheck->add_option("--seeds", gc_seeds, "Seeded repetitions per op")
      ->check(CLI::Range(1, 1000));
  gradcheck->add_option("--seed", gc_seed, "Base seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version exit 0, usage errors exit 2
  }

  try {
    if (synth->parsed()) {
      synth_cfg.seed = synth_seed;
      return run_synth(synth_out, synth_cfg);
    }
    if (train->parsed()) {
      return run_train(train_config, train_seed_opt->count() > 0, train_seed,
                       train_out);
    }
    if (extract->parsed()) {
      return run_extract(ex_ck, ex_manifest, ex_out, ex_h, ex_w);
    }
    if (rank->parsed()) {
      return run_rank(rk_ck, rk_query, rk_manifest, rk_index, rk_top, rk_h,
                      rk_w);
    }
    if (eval->parsed()) {
      return run_eval(ev_ck, ev_query, ev_gallery, ev_top, ev_out, ev_h,
                      ev_w);
    }
    if (gradcheck->parsed()) {
      return run_gradcheck(gc_scope, gc_seeds, gc_seed);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;  // no subcommand (require_subcommand should have caught this)
}
