#include "dmsd/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "dmsd/core.hpp"
#include "json.hpp"

namespace dmsd {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Rgb {
  float r, g, b;
};

Rgb hsv(double h, double s, double v) {
  h = h - std::floor(h);
  double c = v * s;
  double hp = h * 6.0;
  double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  double m = v - c;
  return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

// Smooth lattice noise in [0,1], bilinear between seeded grid values.
std::vector<float> value_noise(int size, int cell, Rng& rng) {
  int n = size / cell + 2;
  std::vector<float> grid(static_cast<std::size_t>(n) * n);
  for (auto& g : grid) g = static_cast<float>(rng.uniform());
  std::vector<float> out(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    double fy = static_cast<double>(y) / cell;
    int y0 = static_cast<int>(fy);
    double wy = fy - y0;
    for (int x = 0; x < size; ++x) {
      double fx = static_cast<double>(x) / cell;
      int x0 = static_cast<int>(fx);
      double wx = fx - x0;
      double v00 = grid[y0 * n + x0], v10 = grid[y0 * n + x0 + 1];
      double v01 = grid[(y0 + 1) * n + x0], v11 = grid[(y0 + 1) * n + x0 + 1];
      out[static_cast<std::size_t>(y) * size + x] =
          static_cast<float>((1 - wy) * ((1 - wx) * v00 + wx * v10) + wy * ((1 - wx) * v01 + wx * v11));
    }
  }
  return out;
}

void paint(ImageF& img, int x, int y, Rgb c) {
  img.at(0, x, y) = c.r;
  img.at(1, x, y) = c.g;
  img.at(2, x, y) = c.b;
}

}  // namespace

std::string to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::openfield: return "openfield";
    case ScenarioKind::maze8: return "maze8";
    case ScenarioKind::labsim: return "labsim";
    case ScenarioKind::grass: return "grass";
    case ScenarioKind::barriers: return "barriers";
  }
  return "openfield";
}

ScenarioKind scenario_kind_from_string(const std::string& s) {
  if (s == "openfield") return ScenarioKind::openfield;
  if (s == "maze8") return ScenarioKind::maze8;
  if (s == "labsim") return ScenarioKind::labsim;
  if (s == "grass") return ScenarioKind::grass;
  if (s == "barriers") return ScenarioKind::barriers;
  throw std::invalid_argument("unknown scenario kind: " + s);
}

bool ScenarioLayout::traversable_at(double x, double y, double margin) const {
  auto ok = [&](double px, double py) {
    int ix = static_cast<int>(std::lround(px)), iy = static_cast<int>(std::lround(py));
    if (ix < 0 || iy < 0 || ix >= size || iy >= size) return false;
    return traversable[static_cast<std::size_t>(iy) * size + ix] != 0;
  };
  if (!ok(x, y)) return false;
  if (margin <= 0.0) return true;
  for (int k = 0; k < 8; ++k) {
    double a = 2.0 * kPi * k / 8;
    if (!ok(x + margin * std::cos(a), y + margin * std::sin(a))) return false;
  }
  return true;
}

ScenarioLayout render_scenario(const ScenarioSpec& spec) {
  if (spec.size < 64) throw std::invalid_argument("render_scenario: size must be >= 64");
  if (spec.fog_density < 0.0 || spec.fog_density > 1.0)
    throw std::invalid_argument("render_scenario: fog_density must be in [0,1]");

  const int S = spec.size;
  Rng rng(spec.palette_seed * 0x9e3779b97f4a7c15ULL + 0x1234567);
  ScenarioLayout out;
  out.size = S;
  out.base = ImageF(S, S);
  out.traversable.assign(static_cast<std::size_t>(S) * S, 0);

  double hue = rng.uniform();
  const double border = 0.055 * S;
  const double cx = 0.5 * (S - 1), cy = 0.5 * (S - 1);

  auto set_trav = [&](int x, int y, bool v) {
    out.traversable[static_cast<std::size_t>(y) * S + x] = v ? 1 : 0;
  };

  switch (spec.kind) {
    case ScenarioKind::openfield:
    case ScenarioKind::grass:
    case ScenarioKind::barriers: {
      Rgb floor = spec.kind == ScenarioKind::grass ? hsv(0.29 + 0.08 * rng.uniform(), 0.45, 0.52)
                                                   : hsv(hue, 0.18, 0.68);
      Rgb wall = hsv(hue + 0.45, 0.35, 0.33);
      std::vector<float> tex;
      if (spec.kind == ScenarioKind::grass) tex = value_noise(S, 9, rng);
      struct Toy {
        double x, y, r;
        Rgb c;
      };
      std::vector<Toy> toys;
      if (spec.kind == ScenarioKind::barriers) {
        int n = 4;
        for (int i = 0; i < n; ++i) {
          double a = 2.0 * kPi * (i + rng.uniform(0.1, 0.9)) / n;
          double rad = S * rng.uniform(0.22, 0.34);
          toys.push_back({cx + rad * std::cos(a), cy + rad * std::sin(a), S * rng.uniform(0.05, 0.075),
                          hsv(rng.uniform(), 0.7, 0.5 + 0.3 * rng.uniform())});
        }
      }
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          bool in_floor = x >= border && y >= border && x < S - border && y < S - border;
          double d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (cx * cx + cy * cy);
          float vig = static_cast<float>(1.0 - 0.18 * d2);
          Rgb c = in_floor ? floor : wall;
          if (in_floor && spec.kind == ScenarioKind::grass) {
            float t = tex[static_cast<std::size_t>(y) * S + x];
            c.r *= 0.8f + 0.4f * t;
            c.g *= 0.8f + 0.4f * t;
            c.b *= 0.8f + 0.4f * t;
          }
          bool trav = in_floor;
          for (const auto& toy : toys) {
            double dx = x - toy.x, dy = y - toy.y;
            if (dx * dx + dy * dy <= toy.r * toy.r) {
              c = toy.c;
              trav = false;
            }
          }
          paint(out.base, x, y, {c.r * vig, c.g * vig, c.b * vig});
          set_trav(x, y, trav);
        }
      break;
    }
    case ScenarioKind::maze8: {
      Rgb field = hsv(hue, 0.5, 0.28);
      Rgb arm_floor = hsv(hue + 0.5, 0.12, 0.75);
      const double center_r = 0.15 * S;
      const double arm_half = 0.075 * S;
      const double arm_len = 0.44 * S;
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          double dx = x - cx, dy = y - cy;
          double r = std::sqrt(dx * dx + dy * dy);
          bool trav = r <= center_r;
          if (!trav && r > 0) {
            double ang = std::atan2(dy, dx);
            double k = std::round(ang / (kPi / 4.0));
            double arm_ang = k * kPi / 4.0;
            double along = dx * std::cos(arm_ang) + dy * std::sin(arm_ang);
            double across = -dx * std::sin(arm_ang) + dy * std::cos(arm_ang);
            trav = along >= 0 && along <= arm_len && std::abs(across) <= arm_half;
          }
          paint(out.base, x, y, trav ? arm_floor : field);
          set_trav(x, y, trav);
        }
      break;
    }
    case ScenarioKind::labsim: {
      Rgb floor = hsv(hue, 0.10, 0.62);
      Rgb wall = hsv(hue + 0.3, 0.4, 0.30);
      struct Rect {
        double x0, y0, x1, y1;
        Rgb c;
      };
      std::vector<Rect> furniture;
      for (int i = 0; i < 4; ++i) {
        double w = S * rng.uniform(0.10, 0.20), h = S * rng.uniform(0.10, 0.20);
        double px = rng.uniform(border + 2, S - border - 2 - w);
        double py = rng.uniform(border + 2, S - border - 2 - h);
        // Keep the middle clear so an agent can always spawn.
        if (std::abs(px + w / 2 - cx) < 0.18 * S && std::abs(py + h / 2 - cy) < 0.18 * S) continue;
        furniture.push_back({px, py, px + w, py + h, hsv(rng.uniform(), 0.55, 0.45)});
      }
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          bool in_floor = x >= border && y >= border && x < S - border && y < S - border;
          Rgb c = in_floor ? floor : wall;
          bool trav = in_floor;
          for (const auto& f : furniture)
            if (x >= f.x0 && x <= f.x1 && y >= f.y0 && y <= f.y1) {
              c = f.c;
              trav = false;
            }
          paint(out.base, x, y, c);
          set_trav(x, y, trav);
        }
      break;
    }
  }

  out.background = out.base;
  if (spec.fog_density > 0.0) {
    std::uint64_t fog_seed = spec.fog_seed ? spec.fog_seed : spec.palette_seed;
    Rng fog_rng(fog_seed * 0x2545f4914f6cdd1dULL + 0xfedcba);
    std::vector<float> mask = value_noise(S, S / 8, fog_rng);
    out.fog_blend.assign(static_cast<std::size_t>(S) * S, 0.0f);
    const float fog_gray[3] = {0.84f, 0.84f, 0.86f};
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        float m = 0.6f + 0.4f * mask[static_cast<std::size_t>(y) * S + x];
        float fb = static_cast<float>(spec.fog_density) * m;
        out.fog_blend[static_cast<std::size_t>(y) * S + x] = fb;
        for (int c = 0; c < 3; ++c)
          out.background.at(c, x, y) = out.base.at(c, x, y) * (1 - fb) + fog_gray[c] * fb;
      }
  }
  return out;
}

ImageF render_scenario_background(const ScenarioSpec& spec) { return render_scenario(spec).background; }

namespace {

double wrap_angle(double a) {
  while (a > kPi) a -= 2 * kPi;
  while (a < -kPi) a += 2 * kPi;
  return a;
}

struct AgentGeometry {
  double a, b, head_r;  // ellipse semi-axes and head marker radius

  // Body may overhang obstacles slightly; the walkable test uses a tighter
  // radius than the full semi-major axis.
  double margin() const { return 0.6 * a; }
};

AgentGeometry agent_geometry(int size) {
  return {0.075 * size, 0.045 * size, 0.024 * size};
}

std::pair<double, double> spawn_point(const ScenarioLayout& layout, Rng& rng, double margin) {
  for (int tries = 0; tries < 400; ++tries) {
    double x = rng.uniform(0, layout.size - 1);
    double y = rng.uniform(0, layout.size - 1);
    if (layout.traversable_at(x, y, margin)) return {x, y};
  }
  throw GenerationError("simulate_trajectory: no traversable spawn found");
}

std::pair<double, double> pick_waypoint(const ScenarioLayout& layout, Rng& rng, double margin, double x,
                                        double y, double min_dist) {
  double bx = x, by = y, best = -1;
  for (int tries = 0; tries < 120; ++tries) {
    double wx = rng.uniform(0, layout.size - 1);
    double wy = rng.uniform(0, layout.size - 1);
    if (!layout.traversable_at(wx, wy, margin)) continue;
    double d = std::hypot(wx - x, wy - y);
    if (d >= min_dist) return {wx, wy};
    if (d > best) {
      best = d;
      bx = wx;
      by = wy;
    }
  }
  return {bx, by};
}

}  // namespace

std::vector<TrajectoryPoint> simulate_trajectory(const AgentMotionModel& model, const ScenarioSpec& spec,
                                                 double duration, double fps, std::uint64_t seed) {
  if (duration < 3.0) throw std::invalid_argument("simulate_trajectory: duration must be >= 3 s");
  if (fps < 8.0) throw std::invalid_argument("simulate_trajectory: fps must be >= 8");
  if (!(model.speed_px_per_s > 0)) throw std::invalid_argument("simulate_trajectory: speed must be > 0");
  if (model.dwell_prob < 0 || model.dwell_prob > 1)
    throw std::invalid_argument("simulate_trajectory: dwell_prob must be in [0,1]");

  ScenarioLayout layout = render_scenario(spec);
  AgentGeometry geo = agent_geometry(spec.size);
  double margin = geo.margin();
  Rng rng(seed ^ 0x5eedf00dULL);

  auto [x, y] = spawn_point(layout, rng, margin);
  double heading = rng.uniform(0, 2 * kPi);
  double dt = 1.0 / fps;
  int n_steps = static_cast<int>(std::lround(duration * fps));
  double step_len = model.speed_px_per_s * dt;

  std::vector<TrajectoryPoint> traj;
  traj.reserve(n_steps + 1);
  traj.push_back({0.0, x, y});

  double wx = x, wy = y;
  bool has_wp = false;
  double dwell_until = -1.0;

  for (int i = 1; i <= n_steps; ++i) {
    double t = i * dt;
    switch (model.mode) {
      case MotionMode::dwell: {
        if (rng.uniform() >= model.dwell_prob) {
          double a = rng.uniform(0, 2 * kPi);
          double nx = x + step_len * std::cos(a), ny = y + step_len * std::sin(a);
          if (layout.traversable_at(nx, ny, margin)) {
            x = nx;
            y = ny;
          }
        }
        break;
      }
      case MotionMode::random_walk: {
        heading += (rng.uniform() - 0.5) * 2.0 * model.turn_rate * dt;
        double nx = x + step_len * std::cos(heading), ny = y + step_len * std::sin(heading);
        if (layout.traversable_at(nx, ny, margin)) {
          x = nx;
          y = ny;
        } else {
          heading += kPi + (rng.uniform() - 0.5);
        }
        break;
      }
      case MotionMode::waypoint: {
        if (t < dwell_until) break;
        if (!has_wp) {
          std::tie(wx, wy) = pick_waypoint(layout, rng, margin, x, y, 0.25 * spec.size);
          has_wp = true;
        }
        double desired = std::atan2(wy - y, wx - x);
        double turn = wrap_angle(desired - heading);
        double max_turn = model.turn_rate * dt;
        heading += std::clamp(turn, -max_turn, max_turn);
        double nx = x + step_len * std::cos(heading), ny = y + step_len * std::sin(heading);
        if (layout.traversable_at(nx, ny, margin)) {
          x = nx;
          y = ny;
        } else {
          bool moved = false;
          for (double delta : {kPi / 4, -kPi / 4, kPi / 2, -kPi / 2, 3 * kPi / 4, -3 * kPi / 4, kPi}) {
            double hx = x + step_len * std::cos(heading + delta);
            double hy = y + step_len * std::sin(heading + delta);
            if (layout.traversable_at(hx, hy, margin)) {
              heading += delta;
              x = hx;
              y = hy;
              moved = true;
              break;
            }
          }
          if (!moved) has_wp = false;
        }
        if (std::hypot(wx - x, wy - y) < std::max(4.0, 1.5 * step_len)) {
          if (rng.uniform() < model.dwell_prob) dwell_until = t + rng.uniform(0.8, 2.4);
          has_wp = false;
        }
        break;
      }
    }
    traj.push_back({t, x, y});
  }
  return traj;
}

namespace {

void draw_agent(ImageF& img, const AgentGeometry& geo, double x, double y, double heading) {
  const Rgb body{0.97f, 0.95f, 0.90f};
  const Rgb head{0.12f, 0.10f, 0.09f};
  double ca = std::cos(heading), sa = std::sin(heading);
  int x0 = std::max(0, static_cast<int>(std::floor(x - geo.a - 1)));
  int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(x + geo.a + 1)));
  int y0 = std::max(0, static_cast<int>(std::floor(y - geo.a - 1)));
  int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(y + geo.a + 1)));
  double hx = x + ca * geo.a * 0.62, hy = y + sa * geo.a * 0.62;
  for (int py = y0; py <= y1; ++py)
    for (int px = x0; px <= x1; ++px) {
      double dx = px - x, dy = py - y;
      double u = dx * ca + dy * sa, v = -dx * sa + dy * ca;
      if ((u * u) / (geo.a * geo.a) + (v * v) / (geo.b * geo.b) <= 1.0) paint(img, px, py, body);
      double hdx = px - hx, hdy = py - hy;
      if (hdx * hdx + hdy * hdy <= geo.head_r * geo.head_r) paint(img, px, py, head);
    }
}

std::pair<double, double> traj_position(const std::vector<TrajectoryPoint>& traj, double t) {
  std::size_t lo = 0, hi = traj.size() - 1;
  while (hi - lo > 1) {
    std::size_t mid = (lo + hi) / 2;
    if (traj[mid].t <= t)
      lo = mid;
    else
      hi = mid;
  }
  const auto& a = traj[lo];
  const auto& b = traj[hi];
  if (t <= a.t) return {a.x, a.y};
  if (t >= b.t) return {b.x, b.y};
  double w = (t - a.t) / (b.t - a.t);
  return {a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)};
}

}  // namespace

ImageU8 render_frame(const ScenarioLayout& layout, const ScenarioSpec& spec,
                     const std::vector<TrajectoryPoint>& traj, double t) {
  auto [x, y] = traj_position(traj, t);
  if (x < 0 || y < 0 || x >= layout.size || y >= layout.size)
    throw GenerationError("render_frame: trajectory point outside image bounds");
  // Heading from the local velocity; falls back to +x when stationary.
  auto [x1, y1] = traj_position(traj, t + 0.1);
  auto [x0, y0] = traj_position(traj, std::max(0.0, t - 0.1));
  double heading = (std::abs(x1 - x0) + std::abs(y1 - y0)) > 1e-9 ? std::atan2(y1 - y0, x1 - x0) : 0.0;

  ImageF frame = layout.base;
  draw_agent(frame, agent_geometry(layout.size), x, y, heading);
  if (!layout.fog_blend.empty()) {
    const float fog_gray[3] = {0.84f, 0.84f, 0.86f};
    for (int py = 0; py < layout.size; ++py)
      for (int px = 0; px < layout.size; ++px) {
        float fb = layout.fog_blend[static_cast<std::size_t>(py) * layout.size + px];
        for (int c = 0; c < 3; ++c)
          frame.at(c, px, py) = frame.at(c, px, py) * (1 - fb) + fog_gray[c] * fb;
      }
  }
  return to_u8(frame);
}

std::vector<ImageU8> render_clip(const ScenarioSpec& spec, const std::vector<TrajectoryPoint>& traj,
                                 double fps) {
  if (traj.size() < 2) throw std::invalid_argument("render_clip: trajectory too short");
  ScenarioLayout layout = render_scenario(spec);
  double duration = traj.back().t - traj.front().t;
  int n = static_cast<int>(std::lround(duration * fps));
  std::vector<ImageU8> frames;
  frames.reserve(n);
  for (int i = 0; i < n; ++i) frames.push_back(render_frame(layout, spec, traj, traj.front().t + i / fps));
  return frames;
}

std::vector<ScenarioSpec> task_scenarios(const GenTaskOptions& opt) {
  std::vector<ScenarioSpec> out;
  auto mk = [&](ScenarioKind k, double fog, std::uint64_t salt) {
    ScenarioSpec s;
    s.kind = k;
    s.fog_density = fog;
    s.palette_seed = opt.seed * 1000003ULL + salt;
    s.size = opt.size;
    return s;
  };
  if (opt.task == "single") {
    out.push_back(mk(ScenarioKind::openfield, 0.0, 11));
  } else if (opt.task == "multiple") {
    out.push_back(mk(ScenarioKind::openfield, 0.0, 11));
    out.push_back(mk(ScenarioKind::maze8, 0.0, 22));
    out.push_back(mk(ScenarioKind::grass, 0.0, 33));
  } else if (opt.task == "challenging") {
    out.push_back(mk(ScenarioKind::openfield, 0.7, 44));
  } else {
    throw std::invalid_argument("unknown task: " + opt.task);
  }
  return out;
}

AgentMotionModel individual_model(int index) {
  static const char* names[] = {"A", "B", "C", "D", "E", "F"};
  AgentMotionModel m;
  m.individual_id = index < 6 ? names[index] : "X" + std::to_string(index);
  switch (index % 3) {
    case 0: m.speed_px_per_s = 55.0; m.turn_rate = 3.5; m.dwell_prob = 0.15; break;
    case 1: m.speed_px_per_s = 38.0; m.turn_rate = 2.2; m.dwell_prob = 0.30; break;
    case 2: m.speed_px_per_s = 72.0; m.turn_rate = 4.5; m.dwell_prob = 0.08; break;
  }
  m.speed_px_per_s += 2.0 * (index / 3);
  return m;
}

std::string gen_config_canonical(const GenTaskOptions& opt) {
  std::string s = "task=" + opt.task;
  s += ";train_pc=" + std::to_string(opt.train_per_class);
  s += ";val_pc=" + std::to_string(opt.val_per_class);
  s += ";test_pc=" + std::to_string(opt.test_per_class);
  s += ";seed=" + std::to_string(opt.seed);
  s += ";size=" + std::to_string(opt.size);
  char buf[64];
  std::snprintf(buf, sizeof(buf), ";fps=%.3f;obs=%.3f;horizon=%.3f", opt.fps, opt.obs_seconds,
                opt.horizon_seconds);
  s += buf;
  s += ";individuals=" + std::to_string(opt.n_individuals);
  s += ";session_size=" + std::to_string(opt.session_size);
  s += ";gen_version=1";
  return s;
}

std::string gen_config_hash(const GenTaskOptions& opt) { return hex64(fnv1a(gen_config_canonical(opt))); }

namespace {

struct PendingClip {
  std::string clip_id;
  Split split;
  int scenario_idx;
  int individual_idx;
  std::uint64_t sim_seed;
  std::vector<TrajectoryPoint> traj;
  MotionLabel label;
  std::string session_id;
};

}  // namespace

DatasetManifest build_dataset(const GenTaskOptions& opt, const std::string& root) {
  const int n_frames = static_cast<int>(std::lround(opt.obs_seconds * opt.fps));
  if (n_frames < 64)
    throw GenerationError("build_dataset: obs_seconds * fps must give >= 64 frames per clip");
  if (opt.train_per_class < 1 || opt.val_per_class < 1 || opt.test_per_class < 1)
    throw GenerationError("build_dataset: per-class counts must be >= 1");
  if (opt.n_individuals < 2) throw GenerationError("build_dataset: need >= 2 individuals");

  std::vector<ScenarioSpec> scenarios = task_scenarios(opt);
  const int n_scen = static_cast<int>(scenarios.size());
  const int n_ind = opt.n_individuals;
  const bool challenging = opt.task == "challenging";

  LabelRuleConfig label_cfg;
  label_cfg.horizon_t = opt.horizon_seconds;
  const double r = compute_r(opt.size, label_cfg);
  const double t_label = (n_frames - 1) / opt.fps;
  const double sim_duration = opt.obs_seconds + opt.horizon_seconds;

  // Per-split per-scenario per-class quotas; classes spread across scenarios
  // as evenly as possible.
  const Split splits[] = {Split::train, Split::val, Split::test};
  int per_class[3] = {challenging ? 1 : opt.train_per_class, opt.val_per_class, opt.test_per_class};
  std::vector<std::vector<std::vector<int>>> quota(3);
  for (int s = 0; s < 3; ++s) {
    quota[s].assign(n_scen, std::vector<int>(kNumClasses, 0));
    for (int c = 0; c < kNumClasses; ++c) {
      int base = per_class[s] / n_scen, rem = per_class[s] % n_scen;
      // Rotate the remainder by class so scenario totals stay balanced.
      for (int sc = 0; sc < n_scen; ++sc) quota[s][sc][c] = base + (((sc + c) % n_scen) < rem ? 1 : 0);
    }
  }

  Rng master(opt.seed * 0x6a09e667f3bcc909ULL + 0x42);
  std::vector<PendingClip> accepted;
  const int total_needed = kNumClasses * (per_class[0] + per_class[1] + per_class[2]);
  const long long candidate_cap = 600LL * total_needed + 4000;

  int split_idx = 0;
  int remaining = kNumClasses * per_class[0];
  long long k = 0;
  std::vector<int> split_counts(3, 0);
  for (; split_idx < 3; ++k) {
    if (k > candidate_cap)
      throw GenerationError("build_dataset: could not balance classes within the candidate budget; "
                            "infeasible balance for task " + opt.task);
    int scen = static_cast<int>(k % n_scen);
    bool scen_open = false;
    for (int c = 0; c < kNumClasses; ++c) scen_open |= quota[split_idx][scen][c] > 0;
    if (!scen_open) {
      bool any_open = false;
      for (int sc = 0; sc < n_scen && !any_open; ++sc)
        for (int c = 0; c < kNumClasses; ++c) any_open |= quota[split_idx][sc][c] > 0;
      if (!any_open) {
        ++split_idx;
        if (split_idx < 3) remaining = kNumClasses * per_class[split_idx];
        --k;
        continue;
      }
      continue;
    }

    Rng cand = master.fork(static_cast<std::uint64_t>(k));
    int ind = static_cast<int>((k / n_scen) % n_ind);
    AgentMotionModel model = individual_model(ind);
    double p = cand.uniform();
    if (p < 0.26)
      model.mode = MotionMode::dwell;
    else if (p < 0.40)
      model.mode = MotionMode::random_walk;
    else
      model.mode = MotionMode::waypoint;

    std::uint64_t sim_seed = cand.next_u64();
    std::vector<TrajectoryPoint> traj;
    try {
      traj = simulate_trajectory(model, scenarios[scen], sim_duration, opt.fps, sim_seed);
    } catch (const GenerationError&) {
      continue;
    }
    MotionVector mv = displacement(traj, t_label, opt.horizon_seconds);
    MotionLabel label = assign_label(mv, r, label_cfg);
    int c = static_cast<int>(label);
    if (quota[split_idx][scen][c] <= 0) continue;
    quota[split_idx][scen][c]--;

    PendingClip clip;
    char idbuf[64];
    const char* split_short[] = {"tr", "va", "te"};
    std::snprintf(idbuf, sizeof(idbuf), "%s-%s-%04d", opt.task.c_str(), split_short[split_idx],
                  split_counts[split_idx]++);
    clip.clip_id = idbuf;
    clip.split = splits[split_idx];
    clip.scenario_idx = scen;
    clip.individual_idx = ind;
    clip.sim_seed = sim_seed;
    clip.traj = std::move(traj);
    clip.label = label;
    accepted.push_back(std::move(clip));
    if (--remaining == 0) {
      ++split_idx;
      if (split_idx < 3) remaining = kNumClasses * per_class[split_idx];
    }
  }

  // Sessions: chunk acceptance order per (split, scenario); a trailing
  // singleton joins the previous session so every group can form positive
  // pairs.
  for (int s = 0; s < 3; ++s)
    for (int sc = 0; sc < n_scen; ++sc) {
      std::vector<PendingClip*> group;
      for (auto& c : accepted)
        if (c.split == splits[s] && c.scenario_idx == sc) group.push_back(&c);
      int sess_size = std::max(2, opt.session_size);
      for (std::size_t i = 0; i < group.size(); ++i) {
        int sess = static_cast<int>(i) / sess_size;
        if (group.size() % sess_size == 1 && i == group.size() - 1 && sess > 0) --sess;
        char sbuf[48];
        const char* split_short[] = {"tr", "va", "te"};
        std::snprintf(sbuf, sizeof(sbuf), "%s-%s-s%02d", split_short[s],
                      to_string(scenarios[sc].kind).c_str(), sess);
        group[i]->session_id = sbuf;
      }
    }

  fs::create_directories(root + "/frames");
  fs::create_directories(root + "/traj");

  // Frames are deterministic per clip, so rendering order is free.
  auto render_one = [&](const PendingClip& clip) {
    ScenarioSpec spec = scenarios[clip.scenario_idx];
    spec.fog_seed = fnv1a(clip.session_id, spec.palette_seed ^ 0x9e3779b97f4a7c15ULL);
    ScenarioLayout layout = render_scenario(spec);
    fs::create_directories(frames_dir(root, clip.clip_id));
    for (int i = 0; i < n_frames; ++i) {
      ImageU8 frame = render_frame(layout, spec, clip.traj, i / opt.fps);
      write_png(frame_path(root, clip.clip_id, i), frame);
    }
    save_trajectory_csv(traj_path(root, clip.clip_id), clip.traj);
  };
  unsigned n_workers = std::min(2u, std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::thread> workers;
  for (unsigned w = 0; w < n_workers; ++w)
    workers.emplace_back([&, w]() {
      for (std::size_t i = w; i < accepted.size(); i += n_workers) render_one(accepted[i]);
    });
  for (auto& t : workers) t.join();

  DatasetManifest manifest;
  manifest.generator_seed = opt.seed;
  manifest.config_hash = gen_config_hash(opt);
  for (const auto& c : accepted) {
    ClipRecord r2;
    r2.clip_id = c.clip_id;
    r2.frame_dir = "frames/" + c.clip_id;
    r2.n_frames = n_frames;
    r2.fps = opt.fps;
    r2.scenario_id = to_string(scenarios[c.scenario_idx].kind) + "-" + std::to_string(c.scenario_idx);
    r2.session_id = c.session_id;
    r2.individual_id = individual_model(c.individual_idx).individual_id;
    r2.label = c.label;
    r2.split = c.split;
    manifest.records.push_back(std::move(r2));
  }
  std::sort(manifest.records.begin(), manifest.records.end(),
            [](const ClipRecord& a, const ClipRecord& b) { return a.clip_id < b.clip_id; });

  save_manifest(root + "/manifest.jsonl", manifest);
  std::ofstream cfgout(root + "/genconfig.resolved", std::ios::binary);
  cfgout << gen_config_canonical(opt) << "\nconfig_hash=" << manifest.config_hash << "\n";
  return manifest;
}

LongVideo generate_long_video(const std::string& root, const std::string& video_id, double duration,
                              double horizon, const GenTaskOptions& opt) {
  std::vector<ScenarioSpec> scenarios = task_scenarios(opt);
  ScenarioSpec spec = scenarios.front();
  AgentMotionModel model = individual_model(0);
  model.mode = MotionMode::waypoint;
  model.dwell_prob = 0.3;

  std::vector<TrajectoryPoint> traj =
      simulate_trajectory(model, spec, duration + horizon, opt.fps, opt.seed * 77 + 5);
  int n = static_cast<int>(std::lround(duration * opt.fps));

  ScenarioLayout layout = render_scenario(spec);
  fs::create_directories(frames_dir(root, video_id));
  fs::create_directories(root + "/traj");
  for (int i = 0; i < n; ++i)
    write_png(frame_path(root, video_id, i), render_frame(layout, spec, traj, i / opt.fps));
  save_trajectory_csv(traj_path(root, video_id), traj);

  nlohmann::json meta = {{"video_id", video_id}, {"n_frames", n}, {"fps", opt.fps}, {"size", opt.size},
                         {"scenario", to_string(spec.kind)}};
  std::ofstream out(root + "/video_" + video_id + ".json", std::ios::binary);
  out << meta.dump(2) << "\n";

  LongVideo lv;
  lv.video_id = video_id;
  lv.n_frames = n;
  lv.fps = opt.fps;
  lv.spec = spec;
  return lv;
}

}  // namespace dmsd
