#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "doctest.h"
#include "reid/checkpoint.hpp"
#include "reid/rten.hpp"
#include "reid/trainer.hpp"

using namespace reid;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int code = -1;
  std::string output;  // stdout + stderr
};

fs::path scratch_root() {
  static const fs::path root = [] {
    fs::path p = fs::temp_directory_path() /
                 ("reid_cli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

CmdResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path log = scratch_root() / ("cmd_" + std::to_string(counter++));
  const std::string cmd = std::string(REID_CLI_PATH) + " " + args + " > " +
                          log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  CmdResult res;
  res.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(log);
  std::stringstream buf;
  buf << in.rdbuf();
  res.output = buf.str();
  return res;
}

std::map<std::string, std::string> slurp_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    out[fs::relative(entry.path(), root).string()] = buf.str();
  }
  return out;
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("usage errors exit 2 and name the problem") {
  CHECK(run_cli("frobnicate").code == 2);
  CHECK(run_cli("").code == 2);

  const CmdResult bad_flag = run_cli("synth --out /tmp/x --no-such-flag");
  CHECK(bad_flag.code == 2);
  CHECK(contains(bad_flag.output, "--no-such-flag"));

  const CmdResult low_ids =
      run_cli("synth --out /tmp/x --ids 1");
  CHECK(low_ids.code == 2);
  CHECK(contains(low_ids.output, "--ids"));

  const CmdResult missing_required = run_cli("train");
  CHECK(missing_required.code == 2);
  CHECK(contains(missing_required.output, "--config"));
}

TEST_CASE("--help exits 0 and lists the subcommands and flags") {
  const CmdResult top = run_cli("--help");
  CHECK(top.code == 0);
  for (const char* sub :
       {"synth", "train", "extract", "rank", "eval", "gradcheck"}) {
    CHECK(contains(top.output, sub));
  }
  const CmdResult ev = run_cli("eval --help");
  CHECK(ev.code == 0);
  for (const char* flag : {"--checkpoint", "--query", "--gallery", "--top-k",
                           "--out", "--resize-h", "--resize-w"}) {
    CHECK(contains(ev.output, flag));
  }
}

TEST_CASE("synth is deterministic per seed, byte for byte") {
  const fs::path a = scratch_root() / "synth_a";
  const fs::path b = scratch_root() / "synth_b";
  const fs::path c = scratch_root() / "synth_c";
  CHECK(run_cli("synth --out " + a.string() +
                " --ids 3 --imgs-per-id 4 --height 16 --width 8 --seed 9")
            .code == 0);
  CHECK(run_cli("synth --out " + b.string() +
                " --ids 3 --imgs-per-id 4 --height 16 --width 8 --seed 9")
            .code == 0);
  CHECK(run_cli("synth --out " + c.string() +
                " --ids 3 --imgs-per-id 4 --height 16 --width 8 --seed 10")
            .code == 0);

  const auto ta = slurp_tree(a);
  const auto tb = slurp_tree(b);
  const auto tc = slurp_tree(c);
  CHECK(!ta.empty());
  CHECK(ta == tb);
  CHECK(ta != tc);

  // 3 ids x 4 images + three manifests.
  std::size_t rten = 0;
  for (const auto& [name, blob] : ta) {
    if (name.ends_with(".rten")) ++rten;
  }
  CHECK(rten == 12);
  CHECK(ta.contains("train.csv"));
  CHECK(ta.contains("query.csv"));
  CHECK(ta.contains("gallery.csv"));
}

TEST_CASE("runtime failures exit 1 with a meaningful message") {
  const CmdResult missing_ck = run_cli(
      "eval --checkpoint /nonexistent.r2mt --query /tmp/q.csv --gallery "
      "/tmp/g.csv");
  CHECK(missing_ck.code == 1);
  CHECK(contains(missing_ck.output, "/nonexistent.r2mt"));

  const fs::path cfg = scratch_root() / "bad_config.json";
  { std::ofstream out(cfg); out << "{\"trian\": {}}"; }
  const CmdResult bad_cfg = run_cli("train --config " + cfg.string());
  CHECK(bad_cfg.code == 1);
  CHECK(contains(bad_cfg.output, "trian"));
}

TEST_CASE("gradcheck prints a per-op table") {
  const CmdResult res = run_cli("gradcheck --scope block --seeds 2");
  CHECK(res.code == 0);
  CHECK(contains(res.output, "res2net_block"));
  CHECK(contains(res.output, "res2net_block_scale1"));
  CHECK(contains(res.output, "PASS"));
  CHECK(!contains(res.output, "FAIL"));

  CHECK(run_cli("gradcheck --scope sideways").code == 2);
}

TEST_CASE("eval on a fixture whose descriptors must match exactly") {
  const fs::path dir = scratch_root() / "evalfix";
  fs::create_directories(dir / "img");

  // Two identities; query and gallery list the same image files under
  // different cameras, so rank 1 is a guaranteed hit for any checkpoint.
  Rng rng(404);
  for (int id = 1; id <= 2; ++id) {
    Tensor<float> img({3, 16, 8});
    for (auto& v : img.values()) v = static_cast<float>(rng.uniform());
    write_rten((dir / "img" / (std::to_string(id) + ".rten")).string(), img);
  }
  {
    std::ofstream q(dir / "query.csv"), g(dir / "gallery.csv");
    q << "path,identity,camera\n";
    g << "path,identity,camera\n";
    for (int id = 1; id <= 2; ++id) {
      q << "img/" << id << ".rten," << id << ",1\n";
      g << "img/" << id << ".rten," << id << ",2\n";
    }
  }
  BackboneConfig cfg;
  Rng mrng(7);
  Model<float> m = build_backbone<float>(cfg, mrng);
  OptimizerState<float> state = make_optimizer_state(m);
  const std::string ck = (dir / "model.r2mt").string();
  save_checkpoint(m, state, ck);

  const CmdResult res =
      run_cli("eval --checkpoint " + ck + " --query " +
              (dir / "query.csv").string() + " --gallery " +
              (dir / "gallery.csv").string() + " --top-k 2");
  CHECK(res.code == 0);
  CHECK(contains(res.output, "1,1.0\n"));
  CHECK(contains(res.output, "mAP,1.0\n"));

  // --out writes the same CSV rows to a file.
  const fs::path report = dir / "report.csv";
  const CmdResult res2 =
      run_cli("eval --checkpoint " + ck + " --query " +
              (dir / "query.csv").string() + " --gallery " +
              (dir / "gallery.csv").string() + " --out " + report.string());
  CHECK(res2.code == 0);
  std::ifstream rep(report);
  std::stringstream buf;
  buf << rep.rdbuf();
  CHECK(contains(buf.str(), "mAP,1.0\n"));
}

TEST_CASE("train, extract and rank flow end to end") {
  const fs::path dir = scratch_root() / "flow";
  fs::create_directories(dir);
  CHECK(run_cli("synth --out " + (dir / "data").string() +
                " --ids 3 --imgs-per-id 4 --height 16 --width 8 --seed 5")
            .code == 0);

  const fs::path cfg_path = dir / "config.json";
  {
    std::ofstream out(cfg_path);
    out << R"({
  "backbone": {"num_identities": 3},
  "train": {"batch_size": 4, "max_iterations": 3, "total_epochs": 8,
            "seed": 2},
  "augment": {"crop_h": 16, "crop_w": 8},
  "data": {"train_manifest": "data/train.csv"},
  "output": {"dir": "run"}
})";
  }
  const CmdResult tr = run_cli("train --config " + cfg_path.string());
  CHECK(tr.code == 0);
  const fs::path ck = dir / "run" / "checkpoint.r2mt";
  CHECK(fs::is_regular_file(ck));
  CHECK(fs::is_regular_file(dir / "run" / "loss.csv"));
  {
    std::ifstream in(dir / "run" / "loss.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "iter,epoch,lr,id_loss_a,id_loss_b,verif_loss,total");
    std::string row;
    std::size_t rows = 0;
    while (std::getline(in, row)) ++rows;
    CHECK(rows == 3);
  }

  const fs::path desc = dir / "gallery_desc.rten";
  const CmdResult ex =
      run_cli("extract --checkpoint " + ck.string() + " --manifest " +
              (dir / "data" / "gallery.csv").string() + " --out " +
              desc.string());
  CHECK(ex.code == 0);
  Tensor<float> matrix = read_rten<float>(desc);
  CHECK(matrix.dims() == std::vector<std::size_t>{3, 16});

  // Rank one of the query images against the gallery manifest.
  Dataset queries = load_dataset((dir / "data").string(),
                                 (dir / "data" / "query.csv").string());
  const CmdResult rk = run_cli(
      "rank --checkpoint " + ck.string() + " --query " +
      queries.records[0].path + " --gallery " +
      (dir / "data" / "gallery.csv").string() + " --top-k 3");
  CHECK(rk.code == 0);
  CHECK(contains(rk.output, "rank,path,identity,camera,similarity"));
  CHECK(contains(rk.output, "1,"));
  CHECK(contains(rk.output, ".rten"));

  // Same seed later: training must reproduce the identical checkpoint.
  const fs::path rerun = dir / "run2";
  const CmdResult tr2 = run_cli("train --config " + cfg_path.string() +
                                " --out " + rerun.string());
  CHECK(tr2.code == 0);
  std::ifstream c1(ck, std::ios::binary), c2(rerun / "checkpoint.r2mt",
                                             std::ios::binary);
  std::stringstream b1, b2;
  b1 << c1.rdbuf();
  b2 << c2.rdbuf();
  CHECK(b1.str() == b2.str());
}
