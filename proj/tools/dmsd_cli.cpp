// Command-line entry point: dataset generation, training, evaluation,
// cross-individual analysis, long-video prediction and plotting.
//
// Exit codes: 0 success, 1 usage, 2 data/artifact error, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "dmsd/evalkit.hpp"
#include "dmsd/synthgen.hpp"
#include "dmsd/trainloop.hpp"

namespace fs = std::filesystem;
using namespace dmsd;

namespace {

Config load_or_default_config(const std::string& path) {
  if (path.empty()) return Config{};
  return load_config(path);
}

int run_gen(const std::string& config_path, const std::string& task, int per_class, int val_per_class,
            int test_per_class, std::uint64_t seed, const std::string& out_dir, double long_video_s) {
  GenTaskOptions opt;
  opt.task = task;
  opt.train_per_class = per_class;
  opt.val_per_class = val_per_class;
  opt.test_per_class = test_per_class;
  opt.seed = seed;
  if (!config_path.empty()) {
    Config cfg = load_config(config_path);
    opt.horizon_seconds = cfg.label.horizon_t;
  }
  if (task == "challenging") opt.session_size = 3;

  fs::create_directories(out_dir);
  std::string manifest_path = out_dir + "/manifest.jsonl";
  if (fs::exists(manifest_path)) {
    DatasetManifest existing = load_manifest(manifest_path);
    if (existing.config_hash == gen_config_hash(opt)) {
      std::cout << "dataset exists, config_hash matches (" << existing.config_hash << "); nothing to do\n";
      return 0;
    }
    std::cerr << "error: " << out_dir << " holds a dataset with a different config_hash ("
              << existing.config_hash << " vs " << gen_config_hash(opt)
              << "); choose a fresh --out directory\n";
    return 2;
  }

  DatasetManifest m = build_dataset(opt, out_dir);
  if (long_video_s > 0) generate_long_video(out_dir, "long0", long_video_s, opt.horizon_seconds, opt);

  int counts[3] = {0, 0, 0};
  std::array<int, kNumClasses> per_class_train{};
  std::vector<std::string> scenarios;
  for (const auto& r : m.records) {
    counts[static_cast<int>(r.split)]++;
    if (r.split == Split::train) per_class_train[static_cast<std::size_t>(r.label)]++;
    if (std::find(scenarios.begin(), scenarios.end(), r.scenario_id) == scenarios.end())
      scenarios.push_back(r.scenario_id);
  }
  std::cout << "dataset " << out_dir << " config_hash " << m.config_hash << "\n";
  std::cout << "clips: train " << counts[0] << ", val " << counts[1] << ", test " << counts[2] << "\n";
  std::cout << "train per class:";
  static const char* names[] = {"up", "down", "left", "right", "middle"};
  for (int c = 0; c < kNumClasses; ++c)
    std::cout << " " << names[c] << "=" << per_class_train[static_cast<std::size_t>(c)];
  std::cout << "\nscenarios:";
  for (const auto& s : scenarios) std::cout << " " << s;
  std::cout << "\nindividuals:";
  for (const auto& i : m.individuals()) std::cout << " " << i;
  std::cout << "\n";
  if (long_video_s > 0) std::cout << "long video: long0 (" << long_video_s << " s)\n";
  return 0;
}

void apply_ablation(Config& cfg, const std::string& ablation) {
  if (ablation == "S1") {
    cfg.losses.use_sc = false;
    cfg.losses.use_mc = false;
  } else if (ablation == "S2") {
    cfg.losses.use_sc = true;
    cfg.losses.use_mc = false;
  } else if (ablation == "S3") {
    cfg.losses.use_sc = false;
    cfg.losses.use_mc = true;
  } else if (ablation == "full") {
    cfg.losses.use_sc = true;
    cfg.losses.use_mc = true;
  } else if (!ablation.empty()) {
    throw ConfigError("unknown ablation " + ablation + " (expected S1|S2|S3|full)");
  }
}

int run_train(const std::string& config_path, const std::string& data_root, const std::string& run_dir,
              std::int64_t seed, const std::string& ablation, int epochs, const std::string& finetune_from,
              bool resume) {
  Config cfg = load_or_default_config(config_path);
  if (!data_root.empty()) cfg.data.root = data_root;
  if (!run_dir.empty()) cfg.run.run_dir = run_dir;
  if (seed >= 0) cfg.run.seed = static_cast<std::uint64_t>(seed);
  if (epochs >= 0) cfg.optim.epochs = epochs;
  if (!finetune_from.empty()) cfg.run.finetune_from = finetune_from;
  cfg.run.resume = resume;
  apply_ablation(cfg, ablation);
  if (cfg.data.root.empty()) throw ConfigError("train: --data-root (or data.root in config) required");

  DatasetManifest manifest = load_manifest(cfg.data.root + "/manifest.jsonl");
  Trainer trainer(cfg, manifest, cfg.data.root);
  FitResult fr = trainer.fit();
  std::cout << "run complete: " << fr.last_checkpoint << "\n";
  if (!fr.epochs.empty()) {
    const auto& last = fr.epochs.back();
    std::cout << "final epoch " << last.epoch << ": train_top1 " << last.train_top1 << ", val_top1 "
              << last.val_top1 << " (best " << last.best_val_top1 << ")\n";
  }
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& data_root, const std::string& split,
             const std::string& out_dir, double tilt, const std::string& dump_decouple) {
  Evaluator ev(checkpoint);
  DatasetManifest manifest = load_manifest(data_root + "/manifest.jsonl");
  Split sp = split_from_string(split);
  MetricsReport r = tilt == 0.0 ? evaluate(ev, data_root, manifest, sp)
                                : homography_stress(ev, data_root, manifest, sp, tilt);
  fs::create_directories(out_dir);
  save_report(out_dir + "/report.json", out_dir + "/report.txt", r);
  std::cout << report_summary_text(r);

  if (!dump_decouple.empty()) {
    for (const auto& rec : manifest.records)
      if (rec.clip_id == dump_decouple) {
        SeqTensor<float> x = load_clip_tensor(data_root, rec, ev.config().model);
        write_png(out_dir + "/decouple_" + rec.clip_id + ".png", render_decouple_grid(ev, x));
        std::cout << "decoupling grid written for " << rec.clip_id << "\n";
        return 0;
      }
    throw DataError("eval: --dump-decouple clip not found: " + dump_decouple);
  }
  return 0;
}

int run_xmatrix(const std::string& config_path, const std::string& data_root, const std::string& run_dir,
                const std::string& individuals_csv, std::int64_t seed, int epochs) {
  Config base = load_or_default_config(config_path);
  if (!data_root.empty()) base.data.root = data_root;
  if (seed >= 0) base.run.seed = static_cast<std::uint64_t>(seed);
  if (epochs >= 0) base.optim.epochs = epochs;
  if (base.data.root.empty()) throw ConfigError("xmatrix: --data-root required");
  fs::create_directories(run_dir);

  std::vector<std::string> individuals;
  std::stringstream ss(individuals_csv);
  std::string item;
  while (std::getline(ss, item, ',')) individuals.push_back(item);
  if (individuals.size() < 2) throw ConfigError("xmatrix: need >= 2 individuals");

  DatasetManifest manifest = load_manifest(base.data.root + "/manifest.jsonl");
  std::vector<std::string> ckpts;
  for (const auto& ind : individuals) {
    DatasetManifest sub = manifest;
    sub.records.clear();
    for (const auto& r : manifest.records)
      if (r.individual_id == ind || r.split != Split::train) sub.records.push_back(r);
    Config cfg = base;
    // Per-individual models are the plain baseline: filtering one individual
    // thins the (scenario, session) groups below what the contrast loss needs.
    cfg.losses.use_sc = false;
    cfg.losses.use_mc = false;
    cfg.run.run_dir = run_dir + "/train_" + ind;
    Trainer trainer(cfg, sub, cfg.data.root);
    FitResult fr = trainer.fit();
    ckpts.push_back(fr.best_checkpoint);
    std::cout << "trained individual " << ind << "\n";
  }
  XMatrixResult xm = cross_individual_matrix(ckpts, base.data.root, manifest, individuals);
  save_xmatrix_csv(run_dir + "/xmatrix.csv", xm);
  write_png(run_dir + "/xmatrix.png", render_xmatrix_heatmap(xm));
  std::cout << "cross-individual matrix written to " << run_dir << "/xmatrix.csv\n";
  return 0;
}

int run_predict(const std::string& checkpoint, const std::string& data_root, const std::string& video_id,
                double stride, const std::string& out_dir) {
  Evaluator ev(checkpoint);
  TrajectoryPrediction pred = predict_long_term(ev, data_root, video_id, stride);
  fs::create_directories(out_dir);
  nlohmann::json j;
  j["video_id"] = pred.video_id;
  j["top1"] = pred.top1;
  j["stride"] = pred.stride;
  nlohmann::json ws = nlohmann::json::array();
  for (const auto& w : pred.windows) {
    nlohmann::json wj;
    wj["t_start"] = w.t_start;
    wj["predicted"] = to_string(w.predicted);
    wj["truth"] = to_string(w.truth);
    wj["probs"] = w.probs;
    ws.push_back(wj);
  }
  j["windows"] = ws;
  std::ofstream out(out_dir + "/prediction.json", std::ios::binary);
  out << j.dump(2) << "\n";
  std::cout << "windows: " << pred.windows.size() << ", top1 " << pred.top1 << "\n";
  return 0;
}

int run_plot(const std::string& checkpoint, const std::string& data_root, const std::string& video_id,
             double stride, const std::string& out_dir) {
  Evaluator ev(checkpoint);
  TrajectoryPrediction pred = predict_long_term(ev, data_root, video_id, stride);
  std::vector<TrajectoryPoint> traj = load_trajectory_csv(traj_path(data_root, video_id));
  ImageU8 background = read_png(frame_path(data_root, video_id, 0));
  fs::create_directories(out_dir);
  save_plot(out_dir + "/plot_" + video_id + ".png", out_dir + "/plot_" + video_id + ".json", traj, pred,
            background);
  std::cout << "plot written: " << out_dir << "/plot_" << video_id << ".png (" << pred.windows.size()
            << " windows)\n";
  return 0;
}

int run_stats(const std::string& data_root, const std::string& config_path) {
  Config cfg = load_or_default_config(config_path);
  DatasetManifest manifest = load_manifest(data_root + "/manifest.jsonl");
  MeasuredNorm n = measure_norm_stats(data_root, manifest, cfg.model);
  std::printf("norm_x_mean = %.6f,%.6f,%.6f\n", n.x_mean[0], n.x_mean[1], n.x_mean[2]);
  std::printf("norm_x_std = %.6f,%.6f,%.6f\n", n.x_std[0], n.x_std[1], n.x_std[2]);
  std::printf("norm_dx_mean = %.6f,%.6f,%.6f\n", n.dx_mean[0], n.dx_mean[1], n.dx_mean[2]);
  std::printf("norm_dx_std = %.6f,%.6f,%.6f\n", n.dx_std[0], n.dx_std[1], n.dx_std[2]);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-stream motion-scenario decoupling toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, data_root, run_dir, out_dir;
  std::int64_t seed = -1;
  app.add_option("--config", config_path, "structured config file");
  app.add_option("--seed", seed, "seed override");
  app.add_option("--run-dir", run_dir, "run output directory");
  app.add_option("--data-root", data_root, "dataset root directory");

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string task = "single";
  int per_class = 50, val_pc = 10, test_pc = 20;
  double long_video_s = 0;
  std::string gen_out;
  gen->add_option("--task", task, "single|multiple|challenging");
  gen->add_option("--per-class", per_class, "train clips per class");
  gen->add_option("--val-per-class", val_pc, "val clips per class");
  gen->add_option("--test-per-class", test_pc, "test clips per class");
  gen->add_option("--out", gen_out, "output dataset root (defaults to --data-root)");
  gen->add_option("--long-video-seconds", long_video_s, "also generate one long recording");

  auto* train = app.add_subcommand("train", "train a model");
  std::string ablation, finetune_from;
  int epochs = -1;
  bool resume = false;
  train->add_option("--ablation", ablation, "S1|S2|S3|full (loss toggles)");
  train->add_option("--epochs", epochs, "epoch override");
  train->add_option("--finetune-from", finetune_from, "base checkpoint to finetune");
  train->add_flag("--resume", resume, "continue a run from --finetune-from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string checkpoint, split = "test", dump_decouple;
  double tilt = 0.0;
  eval->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  eval->add_option("--split", split, "train|val|test");
  eval->add_option("--tilt", tilt, "perspective stress tilt in degrees");
  eval->add_option("--dump-decouple", dump_decouple, "clip id: dump u/v grids");

  auto* xmatrix = app.add_subcommand("xmatrix", "cross-individual train/test matrix");
  std::string individuals_csv;
  int xm_epochs = -1;
  xmatrix->add_option("--individuals", individuals_csv, "comma-separated ids")->required();
  xmatrix->add_option("--epochs", xm_epochs, "epochs per individual model");

  auto* predict = app.add_subcommand("predict", "long-video sliding-window prediction");
  std::string video_id = "long0", p_checkpoint;
  double stride = 3.0;
  predict->add_option("--checkpoint", p_checkpoint, "checkpoint path")->required();
  predict->add_option("--video", video_id, "long video id");
  predict->add_option("--stride", stride, "window stride in seconds");

  auto* plot = app.add_subcommand("plot", "render the trajectory prediction plot");
  std::string plot_video = "long0", plot_checkpoint;
  double plot_stride = 3.0;
  plot->add_option("--checkpoint", plot_checkpoint, "checkpoint path")->required();
  plot->add_option("--video", plot_video, "long video id");
  plot->add_option("--stride", plot_stride, "window stride in seconds");

  auto* stats = app.add_subcommand("stats", "measure normalization constants over the train split");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage problems exit 1, --help exits 0
  }
  if (out_dir.empty()) out_dir = run_dir.empty() ? "." : run_dir;

  try {
    if (gen->parsed()) {
      std::string out = gen_out.empty() ? data_root : gen_out;
      if (out.empty()) throw ConfigError("gen: --out or --data-root required");
      return run_gen(config_path, task, per_class, val_pc, test_pc,
                     seed < 0 ? 0 : static_cast<std::uint64_t>(seed), out, long_video_s);
    }
    if (train->parsed())
      return run_train(config_path, data_root, run_dir, seed, ablation, epochs, finetune_from, resume);
    if (eval->parsed()) return run_eval(checkpoint, data_root, split, out_dir, tilt, dump_decouple);
    if (xmatrix->parsed())
      return run_xmatrix(config_path, data_root, run_dir.empty() ? "." : run_dir, individuals_csv, seed,
                         xm_epochs);
    if (predict->parsed()) return run_predict(p_checkpoint, data_root, video_id, stride, out_dir);
    if (plot->parsed()) return run_plot(plot_checkpoint, data_root, plot_video, plot_stride, out_dir);
    if (stats->parsed()) return run_stats(data_root, config_path);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
