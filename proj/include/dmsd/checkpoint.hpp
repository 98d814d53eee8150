#pragma once

#include <cstdio>
#include <map>
#include <string>

#include "dmsd/backbone.hpp"
#include "dmsd/config.hpp"

namespace dmsd {

// Single-archive checkpoint: version, meta (architecture signature, training
// counters, resolved config text), then named parameter arrays including the
// cluster centers and the optimizer velocity.
inline constexpr char kCheckpointMagic[8] = {'D', 'M', 'S', 'D', 'C', 'K', 'P', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string signature;
  long long step = 0;
  int epoch = 0;
  double best_val_top1 = -1.0;
  std::string config_text;
};

namespace detail {

inline void write_u32(std::FILE* f, std::uint32_t v) { std::fwrite(&v, sizeof(v), 1, f); }
inline void write_u64(std::FILE* f, std::uint64_t v) { std::fwrite(&v, sizeof(v), 1, f); }
inline void write_str(std::FILE* f, const std::string& s) {
  write_u32(f, static_cast<std::uint32_t>(s.size()));
  std::fwrite(s.data(), 1, s.size(), f);
}
inline std::uint32_t read_u32(std::FILE* f) {
  std::uint32_t v = 0;
  if (std::fread(&v, sizeof(v), 1, f) != 1) throw DataError("checkpoint: truncated file");
  return v;
}
inline std::uint64_t read_u64(std::FILE* f) {
  std::uint64_t v = 0;
  if (std::fread(&v, sizeof(v), 1, f) != 1) throw DataError("checkpoint: truncated file");
  return v;
}
inline std::string read_str(std::FILE* f) {
  std::uint32_t n = read_u32(f);
  std::string s(n, '\0');
  if (n && std::fread(s.data(), 1, n, f) != n) throw DataError("checkpoint: truncated string");
  return s;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const DmsdModel<S>& model, const VecX<S>& velocity,
                     const CheckpointMeta& meta) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("checkpoint: cannot write " + path);
  std::fwrite(kCheckpointMagic, 1, 8, f);
  detail::write_u32(f, kCheckpointVersion);
  detail::write_str(f, meta.signature);
  detail::write_u64(f, static_cast<std::uint64_t>(meta.step));
  detail::write_u32(f, static_cast<std::uint32_t>(meta.epoch));
  double bv = meta.best_val_top1;
  std::fwrite(&bv, sizeof(bv), 1, f);
  detail::write_str(f, meta.config_text);

  const auto& P = model.params();
  detail::write_u32(f, static_cast<std::uint32_t>(P.specs().size()) + 1);
  for (std::size_t i = 0; i < P.specs().size(); ++i) {
    const auto& sp = P.specs()[i];
    detail::write_str(f, sp.name);
    detail::write_u32(f, static_cast<std::uint32_t>(sp.rows));
    detail::write_u32(f, static_cast<std::uint32_t>(sp.cols));
    detail::write_u32(f, static_cast<std::uint32_t>(sizeof(S)));
    std::fwrite(P.values().data() + sp.offset, sizeof(S),
                static_cast<std::size_t>(sp.rows) * sp.cols, f);
  }
  detail::write_str(f, "__velocity__");
  detail::write_u32(f, static_cast<std::uint32_t>(velocity.size()));
  detail::write_u32(f, 1);
  detail::write_u32(f, static_cast<std::uint32_t>(sizeof(S)));
  std::fwrite(velocity.data(), sizeof(S), static_cast<std::size_t>(velocity.size()), f);
  std::fclose(f);
}

struct CheckpointFile {
  CheckpointMeta meta;
  std::map<std::string, std::pair<std::pair<int, int>, std::vector<double>>> arrays;
};

inline CheckpointFile load_checkpoint_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("checkpoint: cannot open " + path);
  char magic[8];
  if (std::fread(magic, 1, 8, f) != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    std::fclose(f);
    throw DataError("checkpoint: bad magic in " + path);
  }
  CheckpointFile out;
  std::uint32_t version = detail::read_u32(f);
  if (version != kCheckpointVersion) {
    std::fclose(f);
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  out.meta.signature = detail::read_str(f);
  out.meta.step = static_cast<long long>(detail::read_u64(f));
  out.meta.epoch = static_cast<int>(detail::read_u32(f));
  double bv = 0;
  if (std::fread(&bv, sizeof(bv), 1, f) != 1) throw DataError("checkpoint: truncated meta");
  out.meta.best_val_top1 = bv;
  out.meta.config_text = detail::read_str(f);
  std::uint32_t n = detail::read_u32(f);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = detail::read_str(f);
    int rows = static_cast<int>(detail::read_u32(f));
    int cols = static_cast<int>(detail::read_u32(f));
    std::uint32_t elem = detail::read_u32(f);
    std::size_t count = static_cast<std::size_t>(rows) * cols;
    std::vector<double> data(count);
    if (elem == 4) {
      std::vector<float> tmp(count);
      if (count && std::fread(tmp.data(), 4, count, f) != count)
        throw DataError("checkpoint: truncated array " + name);
      for (std::size_t j = 0; j < count; ++j) data[j] = tmp[j];
    } else if (elem == 8) {
      if (count && std::fread(data.data(), 8, count, f) != count)
        throw DataError("checkpoint: truncated array " + name);
    } else {
      throw DataError("checkpoint: unknown element size");
    }
    out.arrays[name] = {{rows, cols}, std::move(data)};
  }
  std::fclose(f);
  return out;
}

// Restores parameters by name; throws DataError on any shape or signature
// mismatch (incompatible checkpoint).
template <typename S>
void restore_params(DmsdModel<S>& model, const CheckpointFile& ck, bool check_signature = true) {
  if (check_signature && ck.meta.signature != model.signature())
    throw DataError("checkpoint: incompatible architecture: have '" + model.signature() +
                    "', checkpoint '" + ck.meta.signature + "'");
  auto& P = model.params();
  for (const auto& sp : P.specs()) {
    auto it = ck.arrays.find(sp.name);
    if (it == ck.arrays.end()) throw DataError("checkpoint: missing array " + sp.name);
    if (it->second.first.first != sp.rows || it->second.first.second != sp.cols)
      throw DataError("checkpoint: shape mismatch for " + sp.name);
    const auto& data = it->second.second;
    for (std::size_t j = 0; j < data.size(); ++j)
      P.values()(static_cast<Eigen::Index>(sp.offset + j)) = static_cast<S>(data[j]);
  }
}

template <typename S>
bool restore_velocity(VecX<S>& velocity, const CheckpointFile& ck) {
  auto it = ck.arrays.find("__velocity__");
  if (it == ck.arrays.end()) return false;
  const auto& data = it->second.second;
  velocity.resize(static_cast<Eigen::Index>(data.size()));
  for (std::size_t j = 0; j < data.size(); ++j) velocity(static_cast<Eigen::Index>(j)) = static_cast<S>(data[j]);
  return true;
}

}  // namespace dmsd
