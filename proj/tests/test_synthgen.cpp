#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <queue>

#include "dmsd/synthgen.hpp"
#include "dmsd/trainloop.hpp"
#include "doctest.h"

using namespace dmsd;
namespace fs = std::filesystem;

namespace {

ScenarioSpec spec_of(ScenarioKind kind, double fog = 0.0, std::uint64_t seed = 7, int size = 224) {
  ScenarioSpec s;
  s.kind = kind;
  s.fog_density = fog;
  s.palette_seed = seed;
  s.size = size;
  return s;
}

// Flood fill over the traversable mask from a start pixel.
std::vector<std::uint8_t> flood(const ScenarioLayout& layout, int sx, int sy) {
  const int S = layout.size;
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(S) * S, 0);
  std::queue<std::pair<int, int>> q;
  q.push({sx, sy});
  seen[static_cast<std::size_t>(sy) * S + sx] = 1;
  while (!q.empty()) {
    auto [x, y] = q.front();
    q.pop();
    for (auto [dx, dy] : {std::pair<int, int>{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
      int nx = x + dx, ny = y + dy;
      if (nx < 0 || ny < 0 || nx >= S || ny >= S) continue;
      std::size_t idx = static_cast<std::size_t>(ny) * S + nx;
      if (seen[idx] || !layout.traversable[idx]) continue;
      seen[idx] = 1;
      q.push({nx, ny});
    }
  }
  return seen;
}

double luminance_std(const ImageF& img) {
  double sum = 0, sumsq = 0;
  long long n = static_cast<long long>(img.w) * img.h;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double l = (img.at(0, x, y) + img.at(1, x, y) + img.at(2, x, y)) / 3.0;
      sum += l;
      sumsq += l * l;
    }
  double mean = sum / n;
  return std::sqrt(std::max(0.0, sumsq / n - mean * mean));
}

double local_contrast(const ImageF& img) {
  double acc = 0;
  long long n = 0;
  for (int y = 1; y < img.h - 1; ++y)
    for (int x = 1; x < img.w - 1; ++x) {
      double c = img.at(0, x, y);
      double m = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) m += img.at(0, x + dx, y + dy);
      acc += std::abs(c - m / 9.0);
      ++n;
    }
  return acc / n;
}

}  // namespace

TEST_CASE("background rendering is deterministic") {
  ImageF a = render_scenario_background(spec_of(ScenarioKind::openfield));
  ImageF b = render_scenario_background(spec_of(ScenarioKind::openfield));
  for (int c = 0; c < 3; ++c) CHECK(a.ch[c] == b.ch[c]);
  ImageF other = render_scenario_background(spec_of(ScenarioKind::openfield, 0.0, 8));
  bool differs = false;
  for (int c = 0; c < 3; ++c) differs |= a.ch[c] != other.ch[c];
  CHECK(differs);  // palette seed matters
}

TEST_CASE("maze8 has a connected region with eight arm tips") {
  ScenarioLayout layout = render_scenario(spec_of(ScenarioKind::maze8));
  const int S = layout.size;
  auto seen = flood(layout, S / 2, S / 2);
  long long trav = 0, reached = 0;
  for (std::size_t i = 0; i < seen.size(); ++i) {
    trav += layout.traversable[i] ? 1 : 0;
    reached += seen[i];
  }
  CHECK(trav == reached);  // single connected component from the center

  // Count traversable components on an annulus between the arms' midpoints:
  // walk a circle and count transitions into traversable spans.
  double radius = 0.3 * S, cx = 0.5 * (S - 1), cy = 0.5 * (S - 1);
  int transitions = 0;
  bool prev = false;
  const int steps = 4096;
  for (int i = 0; i <= steps; ++i) {
    double a = 2 * 3.14159265358979323846 * i / steps;
    int x = static_cast<int>(std::lround(cx + radius * std::cos(a)));
    int y = static_cast<int>(std::lround(cy + radius * std::sin(a)));
    bool t = layout.traversable[static_cast<std::size_t>(y) * S + x] != 0;
    if (t && !prev && i > 0) ++transitions;
    prev = t;
  }
  CHECK(transitions == 8);
}

TEST_CASE("fog overlays the same base and strictly reduces contrast") {
  ScenarioLayout clear = render_scenario(spec_of(ScenarioKind::openfield, 0.0));
  ScenarioLayout foggy = render_scenario(spec_of(ScenarioKind::openfield, 0.8));
  for (int c = 0; c < 3; ++c) CHECK(clear.base.ch[c] == foggy.base.ch[c]);
  CHECK(clear.fog_blend.empty());
  CHECK(!foggy.fog_blend.empty());
  CHECK(luminance_std(foggy.background) < luminance_std(clear.background));
  CHECK(local_contrast(foggy.background) < local_contrast(clear.background));
  for (float fb : foggy.fog_blend) {
    CHECK(fb > 0.0f);
    CHECK(fb <= 0.8f);
  }
}

TEST_CASE("render_scenario rejects bad inputs") {
  CHECK_THROWS_AS(render_scenario(spec_of(ScenarioKind::openfield, 1.5)), std::invalid_argument);
  ScenarioSpec tiny = spec_of(ScenarioKind::openfield);
  tiny.size = 32;
  CHECK_THROWS_AS(render_scenario(tiny), std::invalid_argument);
  CHECK_THROWS_AS(scenario_kind_from_string("cathedral"), std::invalid_argument);
}

TEST_CASE("trajectory simulation") {
  ScenarioSpec spec = spec_of(ScenarioKind::openfield);
  SUBCASE("dwell_prob 1 freezes the agent") {
    AgentMotionModel m;
    m.mode = MotionMode::dwell;
    m.dwell_prob = 1.0;
    auto traj = simulate_trajectory(m, spec, 5.0, 30.0, 3);
    for (const auto& p : traj) {
      CHECK(p.x == traj.front().x);
      CHECK(p.y == traj.front().y);
    }
  }
  SUBCASE("fixed seed reproduces the exact point list") {
    AgentMotionModel m;
    auto a = simulate_trajectory(m, spec, 6.0, 30.0, 11);
    auto b = simulate_trajectory(m, spec, 6.0, 30.0, 11);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].t == b[i].t);
      CHECK(a[i].x == b[i].x);
      CHECK(a[i].y == b[i].y);
    }
    auto c = simulate_trajectory(m, spec, 6.0, 30.0, 12);
    bool differs = false;
    for (std::size_t i = 0; i < a.size() && !differs; ++i) differs = a[i].x != c[i].x;
    CHECK(differs);
  }
  SUBCASE("path length respects the speed bound") {
    AgentMotionModel m;
    m.mode = MotionMode::waypoint;
    m.speed_px_per_s = 30.0;
    auto traj = simulate_trajectory(m, spec, 10.0, 30.0, 21);
    double len = 0;
    for (std::size_t i = 1; i < traj.size(); ++i) {
      double step = std::hypot(traj[i].x - traj[i - 1].x, traj[i].y - traj[i - 1].y);
      CHECK(step <= 30.0 / 30.0 + 1e-9);
      len += step;
    }
    CHECK(len <= 300.0 + 1e-6);
  }
  SUBCASE("every point stays inside the traversable region") {
    ScenarioSpec maze = spec_of(ScenarioKind::maze8);
    ScenarioLayout layout = render_scenario(maze);
    for (auto mode : {MotionMode::waypoint, MotionMode::random_walk}) {
      AgentMotionModel m;
      m.mode = mode;
      auto traj = simulate_trajectory(m, maze, 6.0, 30.0, 31);
      for (const auto& p : traj) CHECK(layout.traversable_at(p.x, p.y));
    }
  }
  SUBCASE("parameter validation") {
    AgentMotionModel m;
    CHECK_THROWS_AS(simulate_trajectory(m, spec, 2.0, 30.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(simulate_trajectory(m, spec, 5.0, 4.0, 1), std::invalid_argument);
    m.speed_px_per_s = 0;
    CHECK_THROWS_AS(simulate_trajectory(m, spec, 5.0, 30.0, 1), std::invalid_argument);
  }
}

TEST_CASE("clip rendering") {
  ScenarioSpec spec = spec_of(ScenarioKind::openfield);
  SUBCASE("stationary agent renders identical frames") {
    AgentMotionModel m;
    m.mode = MotionMode::dwell;
    m.dwell_prob = 1.0;
    auto traj = simulate_trajectory(m, spec, 3.0, 10.0, 5);
    auto frames = render_clip(spec, traj, 10.0);
    CHECK(frames.size() == 30);
    for (std::size_t i = 1; i < frames.size(); ++i) CHECK(frames[i].rgb == frames[0].rgb);
  }
  SUBCASE("frame count follows round(duration * fps)") {
    AgentMotionModel m;
    auto traj = simulate_trajectory(m, spec, 4.0, 30.0, 6);
    CHECK(render_clip(spec, traj, 15.0).size() == 60);
  }
  SUBCASE("blob centroid tracks the trajectory within a pixel") {
    AgentMotionModel m;
    m.mode = MotionMode::waypoint;
    auto traj = simulate_trajectory(m, spec, 4.0, 30.0, 7);
    ScenarioLayout layout = render_scenario(spec);
    ImageU8 clean = to_u8(layout.background);
    for (double t : {0.5, 2.0, 3.5}) {
      ImageU8 frame = render_frame(layout, spec, traj, t);
      double sx = 0, sy = 0;
      long long n = 0;
      for (int y = 0; y < frame.h; ++y)
        for (int x = 0; x < frame.w; ++x) {
          const auto* a = frame.px(x, y);
          const auto* b = clean.px(x, y);
          int diff = std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
          if (diff > 30) {
            sx += x;
            sy += y;
            ++n;
          }
        }
      REQUIRE(n > 20);
      // interpolate the expected position
      std::size_t i = static_cast<std::size_t>(t * 30.0);
      double expect_x = traj[i].x, expect_y = traj[i].y;
      CHECK(std::abs(sx / n - expect_x) < 1.0);
      CHECK(std::abs(sy / n - expect_y) < 1.0);
    }
  }
  SUBCASE("out-of-bounds trajectory point raises a render error") {
    std::vector<TrajectoryPoint> bad = {{0, -50, 10}, {1, -50, 10}};
    CHECK_THROWS_AS(render_clip(spec, bad, 10.0), GenerationError);
  }
}

namespace {

GenTaskOptions small_multiple_opt() {
  GenTaskOptions opt;
  opt.task = "multiple";
  opt.train_per_class = 2;
  opt.val_per_class = 1;
  opt.test_per_class = 1;
  opt.seed = 99;
  return opt;
}

// Generated once per binary run; subcases share it read-only.
const std::string& fixture_root() {
  static std::string root = [] {
    std::string r = (fs::temp_directory_path() / "dmsd_sg_a").string();
    fs::remove_all(r);
    build_dataset(small_multiple_opt(), r);
    return r;
  }();
  return root;
}

}  // namespace

TEST_CASE("build_dataset bookkeeping, balance and determinism") {
  GenTaskOptions opt = small_multiple_opt();
  std::string root_a = fixture_root();
  std::string root_b = (fs::temp_directory_path() / "dmsd_sg_b").string();
  DatasetManifest m = load_manifest(root_a + "/manifest.jsonl");

  SUBCASE("counts and balance") {
    int split_counts[3] = {0, 0, 0};
    std::array<std::array<int, kNumClasses>, 3> per_class{};
    for (const auto& r : m.records) {
      split_counts[static_cast<int>(r.split)]++;
      per_class[static_cast<std::size_t>(static_cast<int>(r.split))]
               [static_cast<std::size_t>(r.label)]++;
    }
    CHECK(split_counts[0] == 10);
    CHECK(split_counts[1] == 5);
    CHECK(split_counts[2] == 5);
    for (int s = 0; s < 3; ++s) {
      int mx = 0, mn = 1 << 20;
      for (int c = 0; c < kNumClasses; ++c) {
        mx = std::max(mx, per_class[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)]);
        mn = std::min(mn, per_class[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)]);
      }
      CHECK(mx - mn <= 1);
    }
    // multiple-task requirements
    std::vector<std::string> scen;
    for (const auto& r : m.records)
      if (std::find(scen.begin(), scen.end(), r.scenario_id) == scen.end()) scen.push_back(r.scenario_id);
    CHECK(scen.size() >= 3);
    CHECK(m.individuals().size() >= 2);
  }

  SUBCASE("label fidelity: relabeling the stored trajectory reproduces every manifest label") {
    LabelRuleConfig lcfg;
    double r = compute_r(opt.size, lcfg);
    for (const auto& rec : m.records) {
      auto traj = load_trajectory_csv(traj_path(root_a, rec.clip_id));
      double t0 = (rec.n_frames - 1) / rec.fps;
      MotionLabel again = assign_label(displacement(traj, t0, lcfg.horizon_t), r, lcfg);
      CHECK(to_string(again) == to_string(rec.label));
    }
  }

  SUBCASE("sessions pair every train clip") {
    std::map<std::string, int> group_size;
    for (const auto& r : m.records)
      if (r.split == Split::train) group_size[r.scenario_id + "/" + r.session_id]++;
    for (const auto& [k, n] : group_size) CHECK(n >= 2);
  }

  SUBCASE("regeneration reproduces manifest bytes and frame pixels") {
    fs::remove_all(root_b);
    DatasetManifest m2 = build_dataset(opt, root_b);
    CHECK(m2.config_hash == m.config_hash);
    std::ifstream fa(root_a + "/manifest.jsonl"), fb(root_b + "/manifest.jsonl");
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    CHECK(sa.str() == sb.str());
    const auto& clip = m.records.front().clip_id;
    ImageU8 pa = read_png(frame_path(root_a, clip, 0));
    ImageU8 pb = read_png(frame_path(root_b, clip, 0));
    CHECK(pa.rgb == pb.rgb);
  }

  SUBCASE("challenging task pins one training clip per class with session-static fog") {
    std::string root_c = (fs::temp_directory_path() / "dmsd_sg_c").string();
    fs::remove_all(root_c);
    GenTaskOptions ch = opt;
    ch.task = "challenging";
    ch.train_per_class = 10;  // ignored: the protocol forces 1 per class
    ch.val_per_class = 1;
    ch.test_per_class = 1;
    ch.session_size = 3;
    DatasetManifest mc = build_dataset(ch, root_c);
    int train = 0;
    for (const auto& r : mc.records)
      if (r.split == Split::train) ++train;
    CHECK(train == kNumClasses);

    // Clips in one session share the fog mask; other sessions get their own.
    // Compare a corner patch, far from any agent spawn.
    auto corner = [&](const ClipRecord& rec) {
      ImageU8 f = read_png(frame_path(root_c, rec.clip_id, 0));
      std::vector<std::uint8_t> patch;
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          for (int c = 0; c < 3; ++c) patch.push_back(f.px(x, y)[c]);
      return patch;
    };
    const ClipRecord* a = nullptr;
    const ClipRecord* same = nullptr;
    const ClipRecord* other = nullptr;
    for (const auto& r : mc.records) {
      if (!a) {
        a = &r;
        continue;
      }
      if (!same && r.session_id == a->session_id) same = &r;
      if (!other && r.session_id != a->session_id) other = &r;
    }
    REQUIRE(a);
    REQUIRE(same);
    REQUIRE(other);
    CHECK(corner(*a) == corner(*same));
    CHECK(corner(*a) != corner(*other));
    fs::remove_all(root_c);
  }

  SUBCASE("invalid counts raise a generation failure") {
    GenTaskOptions bad = opt;
    bad.train_per_class = 0;
    CHECK_THROWS_AS(build_dataset(bad, root_b + "_bad"), GenerationError);
    fs::remove_all(root_b);
  }
}

TEST_CASE("long video generation meets the prediction preconditions") {
  std::string root = (fs::temp_directory_path() / "dmsd_sg_lv").string();
  fs::remove_all(root);
  GenTaskOptions opt;
  opt.seed = 5;
  LongVideo lv = generate_long_video(root, "vid7", 10.0, 3.0, opt);
  CHECK(lv.n_frames == 300);
  auto traj = load_trajectory_csv(traj_path(root, "vid7"));
  CHECK(traj.back().t == doctest::Approx(13.0));
  CHECK(fs::exists(frame_path(root, "vid7", 299)));
  CHECK(!fs::exists(frame_path(root, "vid7", 300)));
  fs::remove_all(root);
}
