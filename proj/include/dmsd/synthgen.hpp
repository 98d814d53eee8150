#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmsd/image.hpp"
#include "dmsd/manifest.hpp"

namespace dmsd {

enum class ScenarioKind { openfield, maze8, labsim, grass, barriers };
std::string to_string(ScenarioKind k);
ScenarioKind scenario_kind_from_string(const std::string& s);

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::openfield;
  double fog_density = 0.0;          // 0 = none, 1 = opaque
  std::uint64_t palette_seed = 0;
  int size = 224;                    // square side, pixels
  std::uint64_t fog_seed = 0;        // per-session mask stream; 0 = use palette_seed
};

struct ScenarioLayout {
  int size = 0;
  ImageF base;                        // background before fog
  ImageF background;                  // fog applied; equals base at density 0
  std::vector<std::uint8_t> traversable;  // size*size, row-major
  std::vector<float> fog_blend;       // per-pixel blend factor; empty when fog-free

  bool traversable_at(double x, double y, double margin = 0.0) const;
};

ScenarioLayout render_scenario(const ScenarioSpec& spec);
ImageF render_scenario_background(const ScenarioSpec& spec);

enum class MotionMode { waypoint, random_walk, dwell };

struct AgentMotionModel {
  MotionMode mode = MotionMode::waypoint;
  double speed_px_per_s = 50.0;
  double turn_rate = 3.0;            // radians/s
  double dwell_prob = 0.2;
  std::string individual_id = "A";
};

// Deterministic trajectory inside the traversable region; points at t = i/fps
// for i = 0..round(duration*fps) inclusive.
std::vector<TrajectoryPoint> simulate_trajectory(const AgentMotionModel& model, const ScenarioSpec& spec,
                                                 double duration, double fps, std::uint64_t seed);

// One frame per 1/fps; the agent is an oriented ellipse with a darker head
// marker drawn over the background, fog composited last.
std::vector<ImageU8> render_clip(const ScenarioSpec& spec, const std::vector<TrajectoryPoint>& traj,
                                 double fps);
ImageU8 render_frame(const ScenarioLayout& layout, const ScenarioSpec& spec,
                     const std::vector<TrajectoryPoint>& traj, double t);

struct GenTaskOptions {
  std::string task = "single";       // single | multiple | challenging
  int train_per_class = 50;
  int val_per_class = 10;
  int test_per_class = 20;
  std::uint64_t seed = 0;
  int size = 224;
  double fps = 30.0;
  double obs_seconds = 3.0;          // rendered footage per clip
  double horizon_seconds = 3.0;      // label window after the last frame
  int n_individuals = 3;
  int session_size = 4;              // clips per (split, scenario, session)
};

std::string gen_config_canonical(const GenTaskOptions& opt);
std::string gen_config_hash(const GenTaskOptions& opt);

// Generates clips under root (frames/, traj/, manifest.jsonl, genconfig.resolved).
// Per-class counts are exact per split; labels derive from the ground-truth
// trajectory at the time of the last rendered frame.
DatasetManifest build_dataset(const GenTaskOptions& opt, const std::string& root);

// Scenario specs and agent models used by a task, exposed for evaluation tools.
std::vector<ScenarioSpec> task_scenarios(const GenTaskOptions& opt);
AgentMotionModel individual_model(int index);

struct LongVideo {
  std::string video_id;
  int n_frames = 0;
  double fps = 30.0;
  ScenarioSpec spec;
};

// A single long recording for sliding-window prediction; frames land under
// root/frames/<video_id> and the trajectory covers duration + horizon.
LongVideo generate_long_video(const std::string& root, const std::string& video_id, double duration,
                              double horizon, const GenTaskOptions& opt);

}  // namespace dmsd
