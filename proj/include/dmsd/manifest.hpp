#pragma once

#include <string>
#include <vector>

#include "dmsd/labelkit.hpp"

namespace dmsd {

enum class Split { train = 0, val = 1, test = 2 };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ClipRecord {
  std::string clip_id;
  std::string frame_dir;   // relative to dataset root
  int n_frames = 0;
  double fps = 30.0;
  std::string scenario_id;
  std::string session_id;
  std::string individual_id;
  MotionLabel label = MotionLabel::middle;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ClipRecord> records;
  std::uint64_t generator_seed = 0;
  std::string config_hash;

  std::vector<const ClipRecord*> split_records(Split s) const;
  std::vector<std::string> individuals() const;
};

// One JSON object per line; a leading meta line carries seed and config hash.
void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

// Paths inside a dataset root.
std::string frames_dir(const std::string& root, const std::string& clip_id);
std::string frame_path(const std::string& root, const std::string& clip_id, int index);
std::string traj_path(const std::string& root, const std::string& clip_id);

void save_trajectory_csv(const std::string& path, const std::vector<TrajectoryPoint>& traj);
std::vector<TrajectoryPoint> load_trajectory_csv(const std::string& path);

}  // namespace dmsd
