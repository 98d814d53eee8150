#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmsd/labelkit.hpp"

namespace dmsd {

struct DataConfig {
  std::string root;                // dataset root directory
  std::string task = "single";     // single | multiple | challenging
};

struct ModelConfig {
  std::string kind = "dmsd";       // dmsd | single (single-stream ablation baseline)
  int segments = 8;
  int input_size = 224;
  std::vector<int> widths = {32, 64, 128, 256};
  int feature_dim = 256;
  int head_dim = 256;
  int expand_factor = 4;
  double shift_fraction = 0.125;   // per direction; 1/8 forward + 1/8 backward
  bool reweight = true;
  bool stem_pool = true;           // 2x2 average pool after the stride-2 stem conv
  // Frozen per-channel normalization constants for x and the frame-difference
  // stream, measured once over seeded synthetic training splits.
  std::array<double, 3> norm_x_mean = {0.43, 0.46, 0.42};
  std::array<double, 3> norm_x_std = {0.18, 0.15, 0.22};
  std::array<double, 3> norm_dx_mean = {0.0, 0.0, 0.0};
  std::array<double, 3> norm_dx_std = {0.062, 0.057, 0.058};
};

struct LossConfig {
  double lambda_s = 0.1;
  double lambda_m = 1.0;
  bool use_sc = true;
  bool use_mc = true;
  double temperature = 1.0;
  int num_centers = 4;                         // K centers per class
  double center_init_scale = 0.1;
  bool include_positive_in_denominator = false;  // Eq. written with negatives only
};

struct OptimConfig {
  double lr_backbone = 0.01;
  double lr_head = 0.01;
  double lr_centers = 0.1;
  double momentum = 0.9;
  double clip_norm = 10.0;
  int batch_size = 16;
  int epochs = 10;
  double finetune_lr_scale = 0.1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string run_dir;
  std::string finetune_from;  // optional checkpoint to initialize from
  bool resume = false;        // continue epochs/optimizer state from finetune_from
};

struct Config {
  DataConfig data;
  LabelRuleConfig label;
  ModelConfig model;
  LossConfig losses;
  OptimConfig optim;
  RunConfig run;
};

// Sectioned key=value text, sections [data] [label] [model] [losses] [optim] [run].
Config parse_config_text(const std::string& text);
Config load_config(const std::string& path);
std::string serialize_config(const Config& cfg);
void save_config(const std::string& path, const Config& cfg);

// Throws ConfigError when an invariant is violated.
void validate(const Config& cfg);

}  // namespace dmsd
