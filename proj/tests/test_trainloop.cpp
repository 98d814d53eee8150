#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "dmsd/synthgen.hpp"
#include "dmsd/trainloop.hpp"
#include "doctest.h"

using namespace dmsd;
namespace fs = std::filesystem;

namespace {

// Small single-scenario dataset shared by the training tests.
const std::string& data_root() {
  static std::string root = [] {
    std::string r = (fs::temp_directory_path() / "dmsd_tl_data").string();
    fs::remove_all(r);
    GenTaskOptions opt;
    opt.task = "single";
    opt.train_per_class = 3;
    opt.val_per_class = 1;
    opt.test_per_class = 1;
    opt.seed = 1234;
    build_dataset(opt, r);
    return r;
  }();
  return root;
}

Config tiny_train_config(std::uint64_t seed = 0) {
  Config cfg;
  cfg.data.root = data_root();
  cfg.model.input_size = 32;
  cfg.model.widths = {6, 8};
  cfg.model.feature_dim = 12;
  cfg.model.head_dim = 12;
  cfg.model.expand_factor = 2;
  cfg.optim.batch_size = 6;
  cfg.optim.epochs = 1;
  cfg.run.seed = seed;
  return cfg;
}

DatasetManifest fixture_manifest() { return load_manifest(data_root() + "/manifest.jsonl"); }

// In-memory manifest with explicit grouping, for batch-plan unit cases.
DatasetManifest synthetic_manifest(const std::vector<std::pair<std::string, std::string>>& groups) {
  DatasetManifest m;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    ClipRecord r;
    r.clip_id = "clip" + std::to_string(i);
    r.frame_dir = "frames/clip" + std::to_string(i);
    r.n_frames = 90;
    r.scenario_id = groups[i].first;
    r.session_id = groups[i].second;
    r.individual_id = "A";
    r.label = static_cast<MotionLabel>(i % kNumClasses);
    r.split = Split::train;
    m.records.push_back(r);
  }
  return m;
}

}  // namespace

TEST_CASE("sample_frame_indices implements the every-8th last-8 rule") {
  auto idx = sample_frame_indices(64, 8);
  CHECK(idx == std::vector<int>{7, 15, 23, 31, 39, 47, 55, 63});
  auto idx65 = sample_frame_indices(65, 8);
  for (int k = 0; k < 8; ++k) CHECK(idx65[static_cast<std::size_t>(k)] == idx[static_cast<std::size_t>(k)] + 1);
  auto idx90 = sample_frame_indices(90, 8);
  CHECK(idx90.back() == 89);
  CHECK(idx90.front() == 89 - 56);
  CHECK_THROWS_AS(sample_frame_indices(50, 8), DataError);
}

TEST_CASE("sample_clip_frames produces the normalized 8x3x224x224 tensor") {
  DatasetManifest m = fixture_manifest();
  ModelConfig mc;  // defaults: 224, 8 segments
  SeqTensor<float> x = sample_clip_frames(data_root(), m.records.front(), mc);
  CHECK(x.T == 8);
  CHECK(x.C == 3);
  CHECK(x.H == 224);
  CHECK(x.W == 224);
  CHECK(x.all_finite());
  // normalization: values centered near zero rather than in [0,1]
  CHECK(x.data.minCoeff() < -0.5f);

  ClipRecord short_clip = m.records.front();
  short_clip.n_frames = 30;
  CHECK_THROWS_WITH_AS(sample_clip_frames(data_root(), short_clip, mc),
                       doctest::Contains(short_clip.clip_id.c_str()), DataError);
}

TEST_CASE("make_batch_plan") {
  Config cfg = tiny_train_config();
  cfg.optim.batch_size = 4;

  SUBCASE("8 clips in 4 groups of 2 give 2 batches of intact pairs") {
    DatasetManifest m = synthetic_manifest(
        {{"s0", "a"}, {"s0", "a"}, {"s0", "b"}, {"s0", "b"}, {"s1", "a"}, {"s1", "a"}, {"s1", "b"}, {"s1", "b"}});
    BatchPlan plan = make_batch_plan(m, cfg, 7);
    REQUIRE(plan.batches.size() == 2);
    for (const auto& b : plan.batches) {
      CHECK(b.size() == 4);
      // every clip has a same-group companion
      for (int i : b) {
        int companions = 0;
        for (int j : b)
          if (j != i && m.records[static_cast<std::size_t>(i)].scenario_id == m.records[static_cast<std::size_t>(j)].scenario_id &&
              m.records[static_cast<std::size_t>(i)].session_id == m.records[static_cast<std::size_t>(j)].session_id)
            ++companions;
        CHECK(companions >= 1);
      }
    }
  }
  SUBCASE("px batching without the contrast loss is a plain shuffle") {
    cfg.losses.use_sc = false;
    DatasetManifest m = synthetic_manifest({{"s0", "a"}, {"s0", "a"}, {"s0", "a"}, {"s0", "a"}, {"s0", "a"}});
    BatchPlan plan = make_batch_plan(m, cfg, 3);
    CHECK(plan.batches.size() == 2);
    CHECK(plan.batches[0].size() == 4);
    CHECK(plan.batches[1].size() == 1);
  }
  SUBCASE("identical seeds give identical plans; different seeds differ") {
    DatasetManifest m = synthetic_manifest({{"s0", "a"}, {"s0", "a"}, {"s0", "b"}, {"s0", "b"},
                                            {"s1", "a"}, {"s1", "a"}, {"s1", "b"}, {"s1", "b"},
                                            {"s2", "a"}, {"s2", "a"}, {"s2", "b"}, {"s2", "b"}});
    BatchPlan a = make_batch_plan(m, cfg, 5);
    BatchPlan b = make_batch_plan(m, cfg, 5);
    CHECK(a.batches == b.batches);
    bool same = true;
    for (std::uint64_t s = 6; s < 12 && same; ++s) same = make_batch_plan(m, cfg, s).batches == a.batches;
    CHECK(!same);
  }
  SUBCASE("single-group dataset cannot provide negatives") {
    DatasetManifest m = synthetic_manifest({{"s0", "a"}, {"s0", "a"}, {"s0", "a"}, {"s0", "a"}});
    CHECK_THROWS_AS(make_batch_plan(m, cfg, 1), ConfigError);
  }
  SUBCASE("odd groups fold into a triple, nothing is split") {
    DatasetManifest m = synthetic_manifest(
        {{"s0", "a"}, {"s0", "a"}, {"s0", "a"}, {"s1", "a"}, {"s1", "a"}, {"s1", "a"}});
    cfg.optim.batch_size = 6;
    BatchPlan plan = make_batch_plan(m, cfg, 2);
    int total = 0;
    for (const auto& b : plan.batches) total += static_cast<int>(b.size());
    CHECK(total == 6);
  }
  SUBCASE("epoch covers the class distribution exactly") {
    DatasetManifest m = fixture_manifest();
    BatchPlan plan = make_batch_plan(m, cfg, 9);
    std::array<int, kNumClasses> seen{};
    for (const auto& b : plan.batches)
      for (int i : b) seen[static_cast<std::size_t>(m.records[static_cast<std::size_t>(i)].label)]++;
    for (int c = 0; c < kNumClasses; ++c) CHECK(seen[static_cast<std::size_t>(c)] == 3);
  }
}

TEST_CASE("alternation contract over training steps") {
  Config cfg = tiny_train_config(3);
  DatasetManifest m = fixture_manifest();
  Trainer trainer(cfg, m, data_root());
  auto& P = trainer.model().params();

  std::uint64_t omega_before = 0, r_after_a = 0;
  bool checked = false;
  int steps = 0;
  trainer.substep_hook = [&](int phase) {
    if (phase == 0) {
      CHECK(P.hash_group(nn::ParamGroup::head) == omega_before);  // A never touches omega
      r_after_a = P.hash_group(nn::ParamGroup::centers);
      checked = true;
    } else {
      CHECK(P.hash_group(nn::ParamGroup::centers) == r_after_a);  // B never touches centers
    }
  };
  BatchPlan plan = make_batch_plan(m, cfg, 11);
  std::uint64_t theta_start = P.hash_group(nn::ParamGroup::backbone);
  for (int s = 0; s < 10; ++s) {
    omega_before = P.hash_group(nn::ParamGroup::head);
    trainer.train_step(plan.batches[static_cast<std::size_t>(s) % plan.batches.size()]);
  }
  CHECK(checked);
  CHECK(P.hash_group(nn::ParamGroup::backbone) != theta_start);  // theta moves in both sub-steps
}

TEST_CASE("ablation S1 leaves the cluster bank bit-identical") {
  Config cfg = tiny_train_config(4);
  cfg.losses.use_sc = false;
  cfg.losses.use_mc = false;
  DatasetManifest m = fixture_manifest();
  Trainer trainer(cfg, m, data_root());
  auto& P = trainer.model().params();
  std::uint64_t centers0 = P.hash_group(nn::ParamGroup::centers);
  std::uint64_t omega0 = P.hash_group(nn::ParamGroup::head);
  BatchPlan plan = make_batch_plan(m, cfg, 12);
  for (int s = 0; s < 8; ++s)
    trainer.train_step(plan.batches[static_cast<std::size_t>(s) % plan.batches.size()]);
  CHECK(P.hash_group(nn::ParamGroup::centers) == centers0);
  CHECK(P.hash_group(nn::ParamGroup::head) != omega0);
  StepRecord r = trainer.train_step(plan.batches[0]);
  CHECK(r.l_sc == 0.0);
  CHECK(r.l_mc == 0.0);
  CHECK(r.l_f == 0.0);
  CHECK(r.l_cls > 0.0);
}

TEST_CASE("fixed seeds reproduce step losses exactly") {
  Config cfg = tiny_train_config(5);
  DatasetManifest m = fixture_manifest();
  std::vector<StepRecord> a, b;
  for (auto* out : {&a, &b}) {
    Trainer trainer(cfg, m, data_root());
    BatchPlan plan = make_batch_plan(m, cfg, 13);
    for (int s = 0; s < 5; ++s)
      out->push_back(trainer.train_step(plan.batches[static_cast<std::size_t>(s) % plan.batches.size()]));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].l_cls == doctest::Approx(b[i].l_cls).epsilon(1e-9));
    CHECK(a[i].l_f == doctest::Approx(b[i].l_f).epsilon(1e-9));
  }
}

TEST_CASE("fit writes run artifacts and supports zero epochs") {
  std::string run = (fs::temp_directory_path() / "dmsd_tl_run0").string();
  fs::remove_all(run);
  Config cfg = tiny_train_config(6);
  cfg.optim.epochs = 0;
  cfg.run.run_dir = run;
  Trainer trainer(cfg, fixture_manifest(), data_root());
  FitResult fr = trainer.fit();
  CHECK(fs::exists(run + "/config.resolved"));
  CHECK(fs::exists(run + "/metrics.log"));
  CHECK(fs::exists(fr.best_checkpoint));
  CHECK(fs::exists(fr.last_checkpoint));
  CHECK(!fs::exists(run + "/.lock"));  // released
  fs::remove_all(run);
}

TEST_CASE("DMSD_RUN_DIR overrides the configured run directory") {
  std::string cfg_dir = (fs::temp_directory_path() / "dmsd_tl_cfgdir").string();
  std::string env_dir = (fs::temp_directory_path() / "dmsd_tl_envdir").string();
  fs::remove_all(cfg_dir);
  fs::remove_all(env_dir);
  Config cfg = tiny_train_config(16);
  cfg.optim.epochs = 0;
  cfg.run.run_dir = cfg_dir;
  setenv("DMSD_RUN_DIR", env_dir.c_str(), 1);
  Trainer trainer(cfg, fixture_manifest(), data_root());
  trainer.fit();
  unsetenv("DMSD_RUN_DIR");
  CHECK(!fs::exists(cfg_dir + "/config.resolved"));
  CHECK(fs::exists(env_dir + "/config.resolved"));
  fs::remove_all(env_dir);
}

TEST_CASE("a second run on a locked run_dir is refused") {
  std::string run = (fs::temp_directory_path() / "dmsd_tl_locked").string();
  fs::remove_all(run);
  fs::create_directories(run);
  std::ofstream(run + "/.lock") << "";
  Config cfg = tiny_train_config(17);
  cfg.optim.epochs = 0;
  cfg.run.run_dir = run;
  Trainer trainer(cfg, fixture_manifest(), data_root());
  CHECK_THROWS_AS(trainer.fit(), DataError);
  fs::remove_all(run);
}

TEST_CASE("fit trains, logs and resumes deterministically") {
  std::string run_a = (fs::temp_directory_path() / "dmsd_tl_runA").string();
  std::string run_b = (fs::temp_directory_path() / "dmsd_tl_runB").string();
  std::string run_c = (fs::temp_directory_path() / "dmsd_tl_runC").string();
  for (const auto& r : {run_a, run_b, run_c}) fs::remove_all(r);

  // Run C: two epochs in one go.
  Config cfg = tiny_train_config(7);
  cfg.optim.epochs = 2;
  cfg.run.run_dir = run_c;
  Trainer tc(cfg, fixture_manifest(), data_root());
  tc.fit();

  // Run A: first epoch only.
  cfg.run.run_dir = run_a;
  cfg.optim.epochs = 1;
  Trainer ta(cfg, fixture_manifest(), data_root());
  ta.fit();

  // Run B: resume from A's checkpoint, finishing epoch 2.
  cfg.run.run_dir = run_b;
  cfg.optim.epochs = 2;
  cfg.run.finetune_from = run_a + "/checkpoint.last";
  cfg.run.resume = true;
  Trainer tb(cfg, fixture_manifest(), data_root());
  tb.fit();

  auto read_losses = [](const std::string& dir) {
    std::ifstream in(dir + "/metrics.log");
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::string> out;
    while (std::getline(in, line)) out.push_back(line);
    return out;
  };
  auto c_lines = read_losses(run_c);
  auto a_lines = read_losses(run_a);
  auto b_lines = read_losses(run_b);
  REQUIRE(c_lines.size() == a_lines.size() + b_lines.size());
  // B's first logged step must equal C's corresponding step, to the printed
  // six decimals (well inside the 1e-6 resume-determinism contract).
  for (std::size_t i = 0; i < b_lines.size(); ++i)
    CHECK(b_lines[i] == c_lines[a_lines.size() + i]);

  for (const auto& r : {run_a, run_b, run_c}) fs::remove_all(r);
}

TEST_CASE("finetune with zero effective learning rate is a no-op") {
  std::string base_run = (fs::temp_directory_path() / "dmsd_tl_base").string();
  std::string ft_run = (fs::temp_directory_path() / "dmsd_tl_ft").string();
  fs::remove_all(base_run);
  fs::remove_all(ft_run);

  Config cfg = tiny_train_config(8);
  cfg.optim.epochs = 1;
  cfg.run.run_dir = base_run;
  Trainer base(cfg, fixture_manifest(), data_root());
  FitResult fr = base.fit();

  Config ft = tiny_train_config(9);
  ft.optim.epochs = 1;
  ft.optim.finetune_lr_scale = 0.0;
  ft.run.run_dir = ft_run;
  ft.run.finetune_from = fr.last_checkpoint;
  Trainer ftt(ft, fixture_manifest(), data_root());
  VecX<float> before = ftt.model().params().values();
  FitResult fr2 = ftt.fit();
  CHECK((ftt.model().params().values() - before).cwiseAbs().maxCoeff() == 0.0f);

  // Checkpoint compatibility: a different architecture must be rejected.
  Config other = tiny_train_config(10);
  other.model.widths = {4, 4};
  other.run.finetune_from = fr.last_checkpoint;
  CHECK_THROWS_AS(Trainer(other, fixture_manifest(), data_root()), DataError);
  (void)fr2;
  fs::remove_all(base_run);
  fs::remove_all(ft_run);
}

TEST_CASE("a diverging run aborts with a numeric failure naming the batch") {
  Config cfg = tiny_train_config(11);
  cfg.optim.lr_backbone = 1e14;
  cfg.optim.lr_head = 1e14;
  cfg.optim.lr_centers = 1e14;
  cfg.optim.clip_norm = 0;  // disable the guard for the test
  DatasetManifest m = fixture_manifest();
  Trainer trainer(cfg, m, data_root());
  BatchPlan plan = make_batch_plan(m, cfg, 14);
  bool aborted = false;
  try {
    for (int s = 0; s < 12; ++s)
      trainer.train_step(plan.batches[static_cast<std::size_t>(s) % plan.batches.size()]);
  } catch (const NumericError& e) {
    aborted = true;
    CHECK(std::string(e.what()).find("single-tr-") != std::string::npos);  // names the batch clips
  }
  CHECK(aborted);
}

TEST_CASE("single-stream baseline refuses the auxiliary losses") {
  Config cfg = tiny_train_config(12);
  cfg.model.kind = "single";
  CHECK_THROWS_AS(Trainer(cfg, fixture_manifest(), data_root()), ConfigError);
  cfg.losses.use_sc = false;
  cfg.losses.use_mc = false;
  Trainer ok(cfg, fixture_manifest(), data_root());
  BatchPlan plan = make_batch_plan(fixture_manifest(), cfg, 15);
  StepRecord r = ok.train_step(plan.batches[0]);
  CHECK(r.l_cls > 0.0);
}
