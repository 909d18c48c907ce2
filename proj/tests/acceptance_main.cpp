// Release checklist: one line per shipping requirement, pinned tolerances.
// Exit 0 iff every line is PASS.
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "reid/checkpoint.hpp"
#include "reid/datapipe.hpp"
#include "reid/gradcheck.hpp"
#include "reid/multitask.hpp"
#include "reid/ops.hpp"
#include "reid/res2net.hpp"
#include "reid/retrieval.hpp"
#include "reid/rten.hpp"
#include "reid/synth.hpp"
#include "reid/trainer.hpp"

using namespace reid;
namespace fs = std::filesystem;

namespace {

// ---- pinned thresholds ----------------------------------------------------
constexpr double kPrimitiveGradTol = 1e-6;
constexpr double kComposedGradTol = 1e-4;
constexpr int kGradSeeds = 10;
constexpr std::uint64_t kGradBaseSeed = 7;
constexpr double kGradSuiteBudgetSec = 120.0;
constexpr double kOracleTol = 1e-12;
constexpr double kApHandTol = 1e-9;
constexpr double kInitialLossRelTol = 0.05;
constexpr double kFusionTol = 1e-10;
constexpr double kReaFreqTol = 0.02;
constexpr double kToyRank1Min = 0.95;
constexpr double kToyVerifAccMin = 0.95;
constexpr double kToyMapMin = 0.80;
constexpr double kToyBudgetSec = 600.0;

int g_failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s: %s (%s)\n", ok ? "PASS" : "FAIL", name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

fs::path scratch() {
  static const fs::path p = [] {
    fs::path root = fs::temp_directory_path() /
                    ("reid_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    return root;
  }();
  return p;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// ---- 1. gradient suite -----------------------------------------------------

void check_gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<GradCheckCase> cases =
      run_gradient_suite("all", kGradSeeds, kGradBaseSeed);
  const double elapsed = seconds_since(t0);
  double worst_prim = 0.0, worst_comp = 0.0;
  bool ok = !cases.empty();
  for (const GradCheckCase& c : cases) {
    const bool primitive = c.tolerance <= kPrimitiveGradTol;
    (primitive ? worst_prim : worst_comp) =
        std::max(primitive ? worst_prim : worst_comp, c.max_rel_error);
    ok = ok && c.max_rel_error <
                   (primitive ? kPrimitiveGradTol : kComposedGradTol);
  }
  ok = ok && elapsed < kGradSuiteBudgetSec;
  report(ok, "gradient suite",
         std::to_string(cases.size()) + " ops x " +
             std::to_string(kGradSeeds) + " seeds, worst primitive " +
             fmt(worst_prim) + " < 1e-6, worst composed " + fmt(worst_comp) +
             " < 1e-4, " + fmt(elapsed) + "s");
}

// ---- 2. scale-1 degeneracy --------------------------------------------------

void check_scale1_degeneracy() {
  int exact = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Res2NetBlockParams<float> p = make_block<float>(8, 8, 1, 1);
    auto fill = [&rng](ConvBn<float>& cb) {
      for (auto& v : cb.conv.weight.values()) {
        v = static_cast<float>(0.3 * rng.gaussian());
      }
      for (auto& v : cb.conv.bias.values()) {
        v = static_cast<float>(0.1 * rng.gaussian());
      }
      for (auto& v : cb.bn.gamma.values()) {
        v = static_cast<float>(rng.uniform(0.8, 1.2));
      }
      for (auto& v : cb.bn.beta.values()) {
        v = static_cast<float>(0.1 * rng.gaussian());
      }
    };
    fill(p.reduce);
    fill(*p.first);
    fill(p.expand);
    Tensor<float> x({2, 8, 6, 4});
    for (auto& v : x.values()) v = static_cast<float>(rng.gaussian());

    Res2NetBlockParams<float> p_copy = p;
    const Tensor<float> a = res2net_block(x, p, Mode::kTrain);
    const Tensor<float> b = bottleneck_forward(x, p_copy, Mode::kTrain);
    bool same = a.same_dims(b);
    for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i] == b[i];
    exact += same ? 1 : 0;
  }
  report(exact == 10, "scale-1 degeneracy",
         std::to_string(exact) + "/10 weight sets bitwise equal");
}

// ---- 3. retrieval metric oracle ---------------------------------------------

struct NaiveRow {
  std::vector<double> d;
  int id = 0;
  int cam = 0;
};

// Matches the library's numeric contract (float-normalized rows, double dot,
// float similarity) so exact ties order identically; the protocol and metric
// arithmetic below stay independent of the library.
float naive_cos(const std::vector<double>& a, const std::vector<double>& b) {
  auto unit = [](const std::vector<double>& v) {
    double sq = 0;
    for (double x : v) sq += x * x;
    const double norm = std::sqrt(sq);
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      out[i] = static_cast<float>(v[i] / norm);
    }
    return out;
  };
  const std::vector<float> ua = unit(a), ub = unit(b);
  double dot = 0;
  for (std::size_t i = 0; i < ua.size(); ++i) {
    dot += static_cast<double>(ua[i]) * static_cast<double>(ub[i]);
  }
  return static_cast<float>(dot);
}

struct NaiveOut {
  std::vector<double> cmc;
  double map = 0;
  std::size_t evaluated = 0;
  std::size_t dropped = 0;
};

NaiveOut naive_eval(const std::vector<NaiveRow>& qs,
                    const std::vector<NaiveRow>& gs, int k_max) {
  NaiveOut out;
  out.cmc.assign(static_cast<std::size_t>(k_max), 0.0);
  double ap_sum = 0;
  for (const NaiveRow& q : qs) {
    std::vector<std::pair<float, std::size_t>> scored;
    for (std::size_t g = 0; g < gs.size(); ++g) {
      if (gs[g].id == q.id && gs[g].cam == q.cam) continue;
      scored.emplace_back(naive_cos(q.d, gs[g].d), g);
    }
    std::stable_sort(scored.begin(), scored.end(), [](auto& x, auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return x.second < y.second;
    });
    std::size_t rel = 0;
    for (auto& [s, g] : scored) {
      (void)s;
      if (gs[g].id == q.id) ++rel;
    }
    if (rel == 0) {
      ++out.dropped;
      continue;
    }
    ++out.evaluated;
    std::size_t hits = 0, first = scored.size();
    double ap = 0;
    for (std::size_t r = 0; r < scored.size(); ++r) {
      if (gs[scored[r].second].id == q.id) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
        if (first == scored.size()) first = r;
      }
    }
    ap_sum += ap / static_cast<double>(rel);
    for (std::size_t k = first; k < out.cmc.size(); ++k) out.cmc[k] += 1.0;
  }
  if (out.evaluated) {
    for (double& v : out.cmc) v /= static_cast<double>(out.evaluated);
    out.map = ap_sum / static_cast<double>(out.evaluated);
  }
  return out;
}

void check_metric_oracle() {
  Rng rng(515253);
  double worst = 0.0;
  int compared = 0;
  bool ok = true;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t d = 2 + rng.uniform_int(7);
    const std::size_t G = 4 + rng.uniform_int(17);  // <= 20
    const std::size_t Q = 1 + rng.uniform_int(6);
    const int ids = 2 + static_cast<int>(rng.uniform_int(5));
    auto draw = [&rng, d](int id, int cam) {
      NaiveRow r;
      r.id = id;
      r.cam = cam;
      r.d.resize(d);
      for (double& v : r.d) {
        v = 0.25 * static_cast<double>(1 + rng.uniform_int(8));
      }
      return r;
    };
    std::vector<NaiveRow> gallery, queries;
    for (std::size_t g = 0; g < G; ++g) {
      gallery.push_back(draw(static_cast<int>(rng.uniform_int(ids + 1)) - 1,
                             1 + static_cast<int>(rng.uniform_int(3))));
    }
    for (std::size_t q = 0; q < Q; ++q) {
      queries.push_back(draw(static_cast<int>(rng.uniform_int(ids)),
                             1 + static_cast<int>(rng.uniform_int(3))));
    }
    const int k_max = 1 + static_cast<int>(rng.uniform_int(10));
    const NaiveOut expect = naive_eval(queries, gallery, k_max);
    if (expect.evaluated == 0) continue;

    std::vector<Tensor<float>> gd, qd;
    std::vector<int> gi, gc, qi, qc;
    for (const NaiveRow& r : gallery) {
      Tensor<float> t({r.d.size()});
      for (std::size_t i = 0; i < r.d.size(); ++i) {
        t[i] = static_cast<float>(r.d[i]);
      }
      gd.push_back(t);
      gi.push_back(r.id);
      gc.push_back(r.cam);
    }
    for (const NaiveRow& r : queries) {
      Tensor<float> t({r.d.size()});
      for (std::size_t i = 0; i < r.d.size(); ++i) {
        t[i] = static_cast<float>(r.d[i]);
      }
      qd.push_back(t);
      qi.push_back(r.id);
      qc.push_back(r.cam);
    }
    const EvalResult got = evaluate_descriptors(
        qd, qi, qc, make_gallery(gd, gi, gc), k_max);
    ++compared;
    ok = ok && got.queries_evaluated == expect.evaluated &&
         got.queries_dropped == expect.dropped;
    for (std::size_t k = 0; k < expect.cmc.size(); ++k) {
      worst = std::max(worst, std::fabs(got.cmc[k] - expect.cmc[k]));
    }
    worst = std::max(worst, std::fabs(got.map - expect.map));
  }
  ok = ok && worst <= kOracleTol && compared >= 400;

  // Hand case: 2 relevant rows, hits at ranks 1 and 3 -> (1 + 2/3)/2 = 5/6.
  RankedList ranked;
  for (std::size_t i = 0; i < 6; ++i) {
    ranked.order.push_back(i);
    ranked.scores.push_back(1.0f - 0.1f * static_cast<float>(i));
  }
  const double ap = average_precision(ranked, {0, 2});
  ok = ok && std::fabs(ap - 5.0 / 6.0) <= kApHandTol;

  report(ok, "retrieval metric oracle",
         std::to_string(compared) + " instances, max |engine - oracle| " +
             fmt(worst) + " <= 1e-12, AP hand case " + fmt(ap));
}

// ---- 4. initial losses -----------------------------------------------------

void check_initial_losses() {
  BackboneConfig cfg;
  cfg.num_identities = 751;
  Rng rng(17);
  Model<float> model = build_backbone<float>(cfg, rng);

  const std::size_t B = 8;
  PairBatch<float> batch;
  batch.images_a = Tensor<float>({B, 3, 32, 16});
  batch.images_b = Tensor<float>({B, 3, 32, 16});
  for (auto& v : batch.images_a.values()) {
    v = static_cast<float>(rng.uniform());
  }
  for (auto& v : batch.images_b.values()) {
    v = static_cast<float>(rng.uniform());
  }
  for (std::size_t i = 0; i < B; ++i) {
    const bool same = i % 2 == 0;  // balanced
    const int la = static_cast<int>(rng.uniform_int(751));
    const int lb = same ? la : (la + 1) % 751;
    batch.labels_a.push_back(la);
    batch.labels_b.push_back(lb);
    batch.pair_labels.push_back(same ? PairLabel::kSame
                                     : PairLabel::kDifferent);
  }
  StepResult<float> step = multitask_step(batch, model);
  const double ln_k = std::log(751.0);
  const double ln_2 = std::log(2.0);
  const double rel_a = std::fabs(step.report.id_loss_a - ln_k) / ln_k;
  const double rel_b = std::fabs(step.report.id_loss_b - ln_k) / ln_k;
  const double rel_v = std::fabs(step.report.verif_loss - ln_2) / ln_2;
  const bool ok = rel_a < kInitialLossRelTol && rel_b < kInitialLossRelTol &&
                  rel_v < kInitialLossRelTol;
  report(ok, "initial losses at K=751",
         "id_a " + fmt(step.report.id_loss_a) + " id_b " +
             fmt(step.report.id_loss_b) + " vs ln751 " + fmt(ln_k) +
             ", verif " + fmt(step.report.verif_loss) + " vs ln2 " +
             fmt(ln_2) + ", rel err " + fmt(std::max({rel_a, rel_b, rel_v})));
}

// ---- 5. learning-rate schedule ----------------------------------------------

void check_schedule() {
  TrainConfig cfg;  // base 0.05, warmup 5 @ x0.1, /10 every 40
  bool ok = true;
  int checked = 0;
  for (int e = 0; e < 256; ++e) {
    const double lr = learning_rate(e, cfg);
    ++checked;
    if (e < 5) {
      ok = ok && lr == 0.005;
    } else if (e < 40) {
      ok = ok && lr == 0.05;
    } else if (e < 80) {
      ok = ok && lr == 0.005;
    } else if (e < 120) {
      ok = ok && lr == 0.0005;
    } else if (e < 160) {
      ok = ok && lr == 0.00005;
    } else if (e < 200) {
      ok = ok && lr == 0.000005;
    } else if (e < 240) {
      ok = ok && lr == 0.0000005;
    } else {
      // 5e-8 sits one round-off from its decimal literal; relative check.
      ok = ok && std::fabs(lr - 5e-8) / 5e-8 < 1e-12;
    }
  }
  report(ok, "learning-rate schedule",
         std::to_string(checked) +
             " epochs enumerated, bands 0.005/0.05/0.005/0.0005 exact");
}

// ---- 6. gradient fusion linearity --------------------------------------------

void check_fusion_linearity() {
  BackboneConfig cfg;
  Rng rng(29);
  Model<double> model = build_backbone<double>(cfg, rng);
  const std::size_t B = 4;
  PairBatch<double> batch;
  batch.images_a = Tensor<double>({B, 3, 16, 8});
  batch.images_b = Tensor<double>({B, 3, 16, 8});
  for (auto& v : batch.images_a.values()) v = rng.gaussian();
  for (auto& v : batch.images_b.values()) v = rng.gaussian();
  for (std::size_t i = 0; i < B; ++i) {
    const bool same = i % 2 == 0;
    const int la = static_cast<int>(rng.uniform_int(8));
    const int lb = same ? la : (la + 3) % 8;
    batch.labels_a.push_back(la);
    batch.labels_b.push_back(lb);
    batch.pair_labels.push_back(same ? PairLabel::kSame
                                     : PairLabel::kDifferent);
  }

  Model<double> m1 = model;
  const StepResult<double> fused =
      multitask_step(batch, m1, LossWeights{0.5, 0.5, 1.0});
  Model<double> m2 = model;
  const StepResult<double> ga =
      multitask_step(batch, m2, LossWeights{1.0, 0.0, 0.0});
  Model<double> m3 = model;
  const StepResult<double> gb =
      multitask_step(batch, m3, LossWeights{0.0, 1.0, 0.0});
  Model<double> m4 = model;
  const StepResult<double> gv =
      multitask_step(batch, m4, LossWeights{0.0, 0.0, 1.0});

  double worst = 0.0;
  for (const auto& [name, g] : fused.grads) {
    const Tensor<double>& a = ga.grads.at(name);
    const Tensor<double>& b = gb.grads.at(name);
    const Tensor<double>& v = gv.grads.at(name);
    for (std::size_t i = 0; i < g.size(); ++i) {
      worst = std::max(worst,
                       std::fabs(g[i] - (0.5 * a[i] + 0.5 * b[i] + v[i])));
    }
  }
  report(worst < kFusionTol, "gradient fusion linearity",
         "max |fused - 0.5*gA - 0.5*gB - gV| = " + fmt(worst) + " < 1e-10");
}

// ---- 7. random erasing statistics --------------------------------------------

void check_rea_statistics() {
  AugmentConfig cfg;  // p 0.5, area [0.02, 0.4], aspect [0.3, 3.33]
  Rng rng(606060);
  Tensor<float> img = Tensor<float>::full({3, 32, 16}, 0.5f);
  int applied = 0;
  bool areas_ok = true;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    EraseRect rect;
    (void)random_erase(img, cfg, rng, &rect);
    if (!rect.applied) continue;
    ++applied;
    const double ratio =
        static_cast<double>(rect.height) * rect.width / (32.0 * 16.0);
    areas_ok = areas_ok && ratio >= 0.02 && ratio <= 0.4;
  }
  const double freq = static_cast<double>(applied) / trials;

  AugmentConfig off = cfg;
  off.rea_probability = 0.0;
  Rng rng2(1);
  Tensor<float> noisy({3, 8, 4});
  for (auto& v : noisy.values()) v = static_cast<float>(rng2.uniform());
  const Tensor<float> untouched = random_erase(noisy, off, rng2);
  bool identity = true;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    identity = identity && untouched[i] == noisy[i];
  }

  const bool ok =
      std::fabs(freq - 0.5) < kReaFreqTol && areas_ok && identity;
  report(ok, "random erasing statistics",
         "frequency " + fmt(freq) + " in 0.5 +/- 0.02, areas in [0.02,0.4]: " +
             (areas_ok ? "yes" : "no") +
             ", p=0 bitwise identity: " + (identity ? "yes" : "no"));
}

// ---- 8. toy overfit ----------------------------------------------------------

void check_toy_overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path root = scratch() / "toy";
  SynthConfig synth_cfg;  // 8 ids x 8 images, 3x32x16
  synth_cfg.seed = 1;
  const SynthResult synth = generate_synth_dataset(root.string(), synth_cfg);

  const Dataset train_ds = load_dataset(root.string(), synth.train_manifest);
  const Dataset query_ds = load_dataset(root.string(), synth.query_manifest);
  const Dataset gallery_ds =
      load_dataset(root.string(), synth.gallery_manifest);

  BackboneConfig bb;  // toy backbone: 8 -> 8 -> 16 channels, d = 16, K = 8
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.max_iterations = 200;
  cfg.total_epochs = 70;
  cfg.seed = 3;
  cfg.augment.crop_h = 32;
  cfg.augment.crop_w = 16;
  const TrainResult tr = train(cfg, bb, train_ds);

  const LossRow& first = tr.history.front();
  const LossRow& last = tr.history.back();
  const bool losses_fell = last.id_loss_a < first.id_loss_a &&
                           last.id_loss_b < first.id_loss_b &&
                           last.verif_loss < first.verif_loss;

  // Training-set rank-1 under the usual protocol (train images query the
  // other train images; same-camera rows of the same identity excluded).
  const GalleryIndex train_gallery = build_gallery(tr.model, train_ds);
  const EvalResult train_eval =
      evaluate(tr.model, train_ds, train_gallery, EvalOptions{});
  const double rank1 = train_eval.cmc.empty() ? 0.0 : train_eval.cmc[0];

  // Verification accuracy over balanced descriptor pairs.
  Rng prng(99);
  const auto pairs = sample_pair_indices(train_ds, 200, 0.5, prng);
  int correct = 0;
  for (const PairIndices& p : pairs) {
    const Tensor<float> f1 = extract_descriptor(
        tr.model, load_image(train_ds.records[p.a].path));
    const Tensor<float> f2 = extract_descriptor(
        tr.model, load_image(train_ds.records[p.b].path));
    const Tensor<float> fs = square_layer(f1, f2);
    const Tensor<float> q = softmax(linear(fs, tr.model.head_ver));
    const PairLabel predicted =
        q[0] > q[1] ? PairLabel::kSame : PairLabel::kDifferent;
    correct += predicted == p.label ? 1 : 0;
  }
  const double verif_acc = correct / 200.0;

  // Held-out cross-camera retrieval.
  const GalleryIndex gallery = build_gallery(tr.model, gallery_ds);
  const EvalResult held_out =
      evaluate(tr.model, query_ds, gallery, EvalOptions{});

  const double elapsed = seconds_since(t0);
  const bool ok = losses_fell && rank1 >= kToyRank1Min &&
                  verif_acc >= kToyVerifAccMin && held_out.map >= kToyMapMin &&
                  elapsed < kToyBudgetSec;
  report(ok, "toy overfit",
         "200 iters in " + fmt(elapsed) + "s, train rank-1 " + fmt(rank1) +
             " >= 0.95, verif acc " + fmt(verif_acc) + " >= 0.95, held-out " +
             "mAP " + fmt(held_out.map) + " >= 0.80, losses iter200 < iter1: " +
             (losses_fell ? "yes" : "no"));
}

// ---- 9. determinism and formats ----------------------------------------------

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void check_determinism_and_formats() {
  const fs::path root = scratch() / "determinism";
  SynthConfig synth_cfg;
  synth_cfg.n_ids = 4;
  synth_cfg.imgs_per_id = 4;
  synth_cfg.height = 16;
  synth_cfg.width = 8;
  synth_cfg.seed = 2;
  const SynthResult synth = generate_synth_dataset(root.string(), synth_cfg);
  const Dataset ds = load_dataset(root.string(), synth.train_manifest);

  BackboneConfig bb;
  bb.num_identities = 4;
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_iterations = 6;
  cfg.total_epochs = 10;
  cfg.seed = 11;
  cfg.augment.crop_h = 16;
  cfg.augment.crop_w = 8;

  const TrainResult r1 = train(cfg, bb, ds);
  const TrainResult r2 = train(cfg, bb, ds);
  const std::string ck1 = (root / "a.r2mt").string();
  const std::string ck2 = (root / "b.r2mt").string();
  save_checkpoint(r1.model, r1.state, ck1);
  save_checkpoint(r2.model, r2.state, ck2);
  const bool ck_identical = slurp(ck1) == slurp(ck2) && !slurp(ck1).empty();

  // RTEN round trip, both dtypes.
  Rng rng(8);
  Tensor<float> tf({3, 5});
  for (auto& v : tf.values()) v = static_cast<float>(rng.gaussian());
  Tensor<double> td({2, 3});
  for (auto& v : td.values()) v = rng.gaussian();
  std::stringstream sf, sd;
  write_rten(sf, tf);
  write_rten(sd, td);
  const Tensor<float> tf2 = read_rten<float>(sf);
  const Tensor<double> td2 = read_rten<double>(sd);
  bool rten_ok = tf2.same_dims(tf) && td2.same_dims(td);
  for (std::size_t i = 0; rten_ok && i < tf.size(); ++i) {
    rten_ok = tf2[i] == tf[i];
  }
  for (std::size_t i = 0; rten_ok && i < td.size(); ++i) {
    rten_ok = td2[i] == td[i];
  }

  // R2MT: load and re-save byte-identically.
  const Checkpoint loaded = load_checkpoint(ck1);
  const std::string ck3 = (root / "c.r2mt").string();
  save_checkpoint(loaded.model, loaded.state, ck3);
  const bool r2mt_ok = slurp(ck3) == slurp(ck1);

  // R2GX: gallery round trip.
  const GalleryIndex gallery = build_gallery(r1.model, ds);
  const std::string gx = (root / "g.r2gx").string();
  save_gallery(gallery, gx);
  const GalleryIndex gback = load_gallery(gx);
  bool r2gx_ok = gback.size() == gallery.size() &&
                 gback.identities == gallery.identities &&
                 gback.cameras == gallery.cameras;
  for (std::size_t i = 0; r2gx_ok && i < gallery.descriptors.size(); ++i) {
    r2gx_ok = gback.descriptors[i] == gallery.descriptors[i];
  }

  // Weight sharing: both branches see one model, so feeding the same image
  // to each branch must give bitwise-equal posteriors.
  PairBatch<float> batch;
  batch.images_a = Tensor<float>({2, 3, 16, 8});
  for (auto& v : batch.images_a.values()) {
    v = static_cast<float>(rng.uniform());
  }
  batch.images_b = batch.images_a;
  batch.labels_a = {0, 1};
  batch.labels_b = {0, 1};
  batch.pair_labels = {PairLabel::kSame, PairLabel::kSame};
  Model<float> shared = r1.model;
  const StepResult<float> step = multitask_step(batch, shared);
  bool branches_equal = true;
  for (std::size_t i = 0; i < step.report.p_hat_a.size(); ++i) {
    branches_equal =
        branches_equal && step.report.p_hat_a[i] == step.report.p_hat_b[i];
  }

  const bool ok =
      ck_identical && rten_ok && r2mt_ok && r2gx_ok && branches_equal;
  report(ok, "determinism and formats",
         std::string("fixed-seed checkpoints identical: ") +
             (ck_identical ? "yes" : "no") + ", RTEN/R2MT/R2GX round-trips: " +
             (rten_ok && r2mt_ok && r2gx_ok ? "yes" : "no") +
             ", shared-branch posteriors equal: " +
             (branches_equal ? "yes" : "no"));
}

}  // namespace

int main() {
  check_gradient_suite();
  check_scale1_degeneracy();
  check_metric_oracle();
  check_initial_losses();
  check_schedule();
  check_fusion_linearity();
  check_rea_statistics();
  check_toy_overfit();
  check_determinism_and_formats();
  fs::remove_all(scratch());
  if (g_failures) {
    std::printf("%d criteria FAILED\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
