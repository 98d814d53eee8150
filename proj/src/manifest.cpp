#include "dmsd/manifest.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dmsd/core.hpp"
#include "json.hpp"

namespace dmsd {

using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("manifest: unknown split " + s);
}

std::vector<const ClipRecord*> DatasetManifest::split_records(Split s) const {
  std::vector<const ClipRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

std::vector<std::string> DatasetManifest::individuals() const {
  std::vector<std::string> out;
  for (const auto& r : records)
    if (std::find(out.begin(), out.end(), r.individual_id) == out.end()) out.push_back(r.individual_id);
  return out;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("manifest: cannot write " + path);
  json meta = {{"config_hash", m.config_hash}, {"generator_seed", m.generator_seed}, {"kind", "meta"}};
  out << meta.dump() << "\n";
  for (const auto& r : m.records) {
    json j = {{"clip_id", r.clip_id},
              {"fps", r.fps},
              {"frame_dir", r.frame_dir},
              {"individual_id", r.individual_id},
              {"label", to_string(r.label)},
              {"n_frames", r.n_frames},
              {"scenario_id", r.scenario_id},
              {"session_id", r.session_id},
              {"split", to_string(r.split)}};
    out << j.dump() << "\n";
  }
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("manifest: cannot open " + path);
  DatasetManifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (j.value("kind", "") == "meta") {
      m.config_hash = j.at("config_hash").get<std::string>();
      m.generator_seed = j.at("generator_seed").get<std::uint64_t>();
      continue;
    }
    ClipRecord r;
    r.clip_id = j.at("clip_id").get<std::string>();
    r.frame_dir = j.at("frame_dir").get<std::string>();
    r.n_frames = j.at("n_frames").get<int>();
    r.fps = j.at("fps").get<double>();
    r.scenario_id = j.at("scenario_id").get<std::string>();
    r.session_id = j.at("session_id").get<std::string>();
    r.individual_id = j.at("individual_id").get<std::string>();
    auto lbl = label_from_string(j.at("label").get<std::string>());
    if (!lbl) throw DataError("manifest: bad label in " + r.clip_id);
    r.label = *lbl;
    r.split = split_from_string(j.at("split").get<std::string>());
    m.records.push_back(std::move(r));
  }
  return m;
}

std::string frames_dir(const std::string& root, const std::string& clip_id) {
  return root + "/frames/" + clip_id;
}

std::string frame_path(const std::string& root, const std::string& clip_id, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06d.png", index);
  return frames_dir(root, clip_id) + "/" + buf;
}

std::string traj_path(const std::string& root, const std::string& clip_id) {
  return root + "/traj/" + clip_id + ".csv";
}

void save_trajectory_csv(const std::string& path, const std::vector<TrajectoryPoint>& traj) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("trajectory: cannot write " + path);
  out << "t,x,y\n";
  char buf[96];
  for (const auto& p : traj) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.4f,%.4f\n", p.t, p.x, p.y);
    out << buf;
  }
}

std::vector<TrajectoryPoint> load_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("trajectory: cannot open " + path);
  std::vector<TrajectoryPoint> out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TrajectoryPoint p;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &p.t, &p.x, &p.y) != 3)
      throw DataError("trajectory: malformed line in " + path + ": " + line);
    out.push_back(p);
  }
  return out;
}

}  // namespace dmsd
