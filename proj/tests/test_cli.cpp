#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "dmsd/config.hpp"
#include "dmsd/manifest.hpp"
#include "doctest.h"

using namespace dmsd;
namespace fs = std::filesystem;

namespace {

#ifndef DMSD_CLI_PATH
#define DMSD_CLI_PATH "dmsd"
#endif

struct CmdResult {
  int exit_code = -1;
  std::string output;
};

CmdResult run_cli(const std::string& args) {
  std::string out_file = (fs::temp_directory_path() / "dmsd_cli_out.txt").string();
  std::string cmd = std::string(DMSD_CLI_PATH) + " " + args + " > " + out_file + " 2>&1";
  int status = std::system(cmd.c_str());
  CmdResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out_file);
  r.output.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return r;
}

std::string scratch() {
  static std::string dir = [] {
    std::string d = (fs::temp_directory_path() / "dmsd_cli_scratch").string();
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Small config shared by the pipeline test.
std::string write_tiny_config() {
  Config cfg;
  cfg.model.input_size = 32;
  cfg.model.widths = {6, 8};
  cfg.model.feature_dim = 12;
  cfg.model.head_dim = 12;
  cfg.model.expand_factor = 2;
  cfg.optim.batch_size = 8;
  cfg.optim.epochs = 1;
  cfg.optim.lr_backbone = 0.02;
  cfg.optim.lr_head = 0.02;
  std::string path = scratch() + "/tiny.ini";
  save_config(path, cfg);
  return path;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(run_cli("").exit_code == 1);              // missing subcommand
  CHECK(run_cli("explode").exit_code != 0);       // unknown subcommand
  CHECK(run_cli("train").exit_code == 1);         // no data root
  CHECK(run_cli("train --ablation S9 --data-root /tmp/none").exit_code == 1);
  CHECK(run_cli("eval --split test").exit_code != 0);  // missing required checkpoint
}

TEST_CASE("missing artifacts exit 2") {
  CmdResult r = run_cli("eval --checkpoint /nonexistent/ck --data-root /nonexistent --split test");
  CHECK(r.exit_code == 2);
  CmdResult t = run_cli("train --data-root /nonexistent/data --run-dir " + scratch() + "/r0");
  CHECK(t.exit_code == 2);
}

TEST_CASE("gen creates a dataset, is idempotent, and challenging pins 5 train clips") {
  std::string data = scratch() + "/data_single";
  CmdResult r = run_cli("--seed 9 gen --task single --per-class 2 --val-per-class 1 --test-per-class 1 --out " + data);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("train 10") != std::string::npos);

  CmdResult again = run_cli("--seed 9 gen --task single --per-class 2 --val-per-class 1 --test-per-class 1 --out " + data);
  CHECK(again.exit_code == 0);
  CHECK(again.output.find("config_hash matches") != std::string::npos);

  CmdResult conflict = run_cli("--seed 10 gen --task single --per-class 2 --val-per-class 1 --test-per-class 1 --out " + data);
  CHECK(conflict.exit_code == 2);

  std::string ch = scratch() + "/data_ch";
  CmdResult c = run_cli("--seed 9 gen --task challenging --per-class 7 --val-per-class 1 --test-per-class 2 --out " + ch);
  CHECK(c.exit_code == 0);
  DatasetManifest m = load_manifest(ch + "/manifest.jsonl");
  int train = 0;
  for (const auto& rec : m.records)
    if (rec.split == Split::train) ++train;
  CHECK(train == 5);
}

TEST_CASE("train then eval end to end") {
  std::string data = scratch() + "/data_single";
  if (!fs::exists(data + "/manifest.jsonl"))
    REQUIRE(run_cli("--seed 9 gen --task single --per-class 2 --val-per-class 1 --test-per-class 1 --out " + data)
                .exit_code == 0);
  std::string cfg = write_tiny_config();
  std::string run = scratch() + "/run1";

  CmdResult t = run_cli("--config " + cfg + " --data-root " + data + " --run-dir " + run +
                        " --seed 3 train --ablation S1 --epochs 1");
  CHECK(t.exit_code == 0);
  CHECK(fs::exists(run + "/config.resolved"));
  CHECK(fs::exists(run + "/metrics.log"));
  CHECK(fs::exists(run + "/checkpoint.last"));

  SUBCASE("metrics log carries zeroed auxiliary columns under S1") {
    std::ifstream in(run + "/metrics.log");
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    CHECK(header == "step,L_cls,L_sc,L_mc,L_f");
    CHECK(first.find(",0.000000,0.000000,0.000000") != std::string::npos);
  }

  SUBCASE("eval produces the canonical report, byte-identical across reruns") {
    std::string out = scratch() + "/eval1";
    CmdResult e = run_cli("--data-root " + data + " --run-dir " + out + " eval --checkpoint " + run +
                          "/checkpoint.last --split test");
    CHECK(e.exit_code == 0);
    CHECK(fs::exists(out + "/report.json"));
    CHECK(fs::exists(out + "/report.txt"));
    std::ifstream in(out + "/report.json");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("\"top1\"") != std::string::npos);

    std::string out2 = scratch() + "/eval2";
    REQUIRE(run_cli("--data-root " + data + " --run-dir " + out2 + " eval --checkpoint " + run +
                    "/checkpoint.last --split test")
                .exit_code == 0);
    std::ifstream in2(out2 + "/report.json");
    std::string text2((std::istreambuf_iterator<char>(in2)), std::istreambuf_iterator<char>());
    CHECK(text == text2);
  }

  SUBCASE("full ablation logs all three losses after step 1") {
    std::string run2 = scratch() + "/run2";
    CmdResult t2 = run_cli("--config " + cfg + " --data-root " + data + " --run-dir " + run2 +
                           " --seed 3 train --ablation full --epochs 1");
    CHECK(t2.exit_code == 0);
    std::ifstream in(run2 + "/metrics.log");
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    // step,L_cls,L_sc,L_mc,L_f with nonzero aux terms
    double step, cls, sc, mc, f;
    REQUIRE(std::sscanf(first.c_str(), "%lf,%lf,%lf,%lf,%lf", &step, &cls, &sc, &mc, &f) == 5);
    CHECK(cls > 0.0);
    CHECK(sc != 0.0);
    CHECK(mc != 0.0);
    CHECK(f == doctest::Approx(0.1 * sc + 1.0 * mc));
  }
}

TEST_CASE("numeric failure exits 3") {
  std::string data = scratch() + "/data_single";
  if (!fs::exists(data + "/manifest.jsonl"))
    REQUIRE(run_cli("--seed 9 gen --task single --per-class 2 --val-per-class 1 --test-per-class 1 --out " + data)
                .exit_code == 0);
  Config cfg;
  cfg.model.input_size = 32;
  cfg.model.widths = {6, 8};
  cfg.model.feature_dim = 12;
  cfg.model.head_dim = 12;
  cfg.model.expand_factor = 2;
  cfg.optim.batch_size = 8;
  cfg.optim.epochs = 20;
  cfg.optim.lr_backbone = 1e14;
  cfg.optim.lr_head = 1e14;
  cfg.optim.lr_centers = 1e14;
  cfg.optim.clip_norm = 0;
  cfg.losses.use_sc = false;
  cfg.losses.use_mc = false;
  std::string path = scratch() + "/diverge.ini";
  save_config(path, cfg);
  CmdResult r = run_cli("--config " + path + " --data-root " + data + " --run-dir " + scratch() +
                        "/run_diverge --seed 1 train");
  CHECK(r.exit_code == 3);
  CHECK(r.output.find("numeric failure") != std::string::npos);
}

TEST_CASE("predict and plot on a long video") {
  std::string data = scratch() + "/data_lv";
  CmdResult g = run_cli("--seed 4 gen --task single --per-class 2 --val-per-class 1 --test-per-class 1 "
                        "--long-video-seconds 12 --out " + data);
  REQUIRE(g.exit_code == 0);
  std::string cfg = write_tiny_config();
  std::string run = scratch() + "/run_lv";
  REQUIRE(run_cli("--config " + cfg + " --data-root " + data + " --run-dir " + run +
                  " --seed 3 train --ablation S1 --epochs 1")
              .exit_code == 0);

  std::string out = scratch() + "/pred_lv";
  CmdResult p = run_cli("--data-root " + data + " --run-dir " + out + " predict --checkpoint " + run +
                        "/checkpoint.last --video long0");
  CHECK(p.exit_code == 0);
  CHECK(fs::exists(out + "/prediction.json"));

  CmdResult pl = run_cli("--data-root " + data + " --run-dir " + out + " plot --checkpoint " + run +
                         "/checkpoint.last --video long0");
  CHECK(pl.exit_code == 0);
  CHECK(fs::exists(out + "/plot_long0.png"));
  CHECK(fs::exists(out + "/plot_long0.json"));
  {
    // Marker bookkeeping: sidecar window count equals the prediction's.
    std::ifstream meta(out + "/plot_long0.json"), predf(out + "/prediction.json");
    std::string mt((std::istreambuf_iterator<char>(meta)), std::istreambuf_iterator<char>());
    std::string pt((std::istreambuf_iterator<char>(predf)), std::istreambuf_iterator<char>());
    std::size_t n_pred = 0, pos = 0;
    while ((pos = pt.find("\"t_start\"", pos)) != std::string::npos) {
      ++n_pred;
      pos += 9;
    }
    CHECK(mt.find("\"n_windows\": " + std::to_string(n_pred)) != std::string::npos);
  }

  CmdResult missing = run_cli("--data-root " + data + " --run-dir " + out + " predict --checkpoint " + run +
                              "/checkpoint.last --video no_such_video");
  CHECK(missing.exit_code == 2);
}

TEST_CASE("xmatrix trains per-individual baselines and writes csv + heatmap") {
  std::string data = scratch() + "/data_single";
  if (!fs::exists(data + "/manifest.jsonl"))
    REQUIRE(run_cli("--seed 9 gen --task single --per-class 2 --val-per-class 1 --test-per-class 1 --out " + data)
                .exit_code == 0);
  DatasetManifest m = load_manifest(data + "/manifest.jsonl");
  auto inds = m.individuals();
  REQUIRE(inds.size() >= 2);
  std::string cfg = write_tiny_config();
  std::string run = scratch() + "/xm_run";
  CmdResult r = run_cli("--config " + cfg + " --data-root " + data + " --run-dir " + run +
                        " --seed 2 xmatrix --individuals " + inds[0] + "," + inds[1] + " --epochs 1");
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(run + "/xmatrix.csv"));
  CHECK(fs::exists(run + "/xmatrix.png"));
  std::ifstream csv(run + "/xmatrix.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "train\\test," + inds[0] + "," + inds[1]);
  int rows = 0;
  std::string line;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
}
