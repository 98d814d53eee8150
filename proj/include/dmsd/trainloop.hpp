#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dmsd/backbone.hpp"
#include "dmsd/checkpoint.hpp"
#include "dmsd/image.hpp"
#include "dmsd/losses.hpp"
#include "dmsd/manifest.hpp"

namespace dmsd {

// Sampling rule: of the every-8th-frame subsequence, take the last
// `segments` members; for n frames these are n-1-8k for k = segments-1..0.
std::vector<int> sample_frame_indices(int n_frames, int segments);

// Loads the sampled frames of a clip, resizes to the model input size and
// applies the frozen normalization.
SeqTensor<float> sample_clip_frames(const std::string& root, const ClipRecord& clip,
                                    const ModelConfig& mc);

// Builds a clip tensor from already-decoded frames (index order preserved).
SeqTensor<float> clip_tensor_from_frames(const std::vector<ImageU8>& frames, const ModelConfig& mc);

// Clip tensors keyed by manifest index, cached in RAM for small input sizes.
class ClipDataset {
 public:
  ClipDataset(std::string root, const DatasetManifest& manifest, const ModelConfig& mc);

  int size() const { return static_cast<int>(manifest_.records.size()); }
  const ClipRecord& record(int i) const { return manifest_.records[static_cast<std::size_t>(i)]; }
  const DatasetManifest& manifest() const { return manifest_; }
  std::vector<int> split_indices(Split s) const;
  ClipMeta meta(int i) const;
  SeqTensor<float> tensor(int i) const;
  void prefetch(const std::vector<int>& indices, int workers = 2) const;
  const std::string& root() const { return root_; }

 private:
  std::string root_;
  DatasetManifest manifest_;
  ModelConfig mc_;
  bool cache_enabled_ = true;
  mutable std::vector<SeqTensor<float>> cache_;
  mutable std::vector<char> cached_;
  mutable std::mutex mx_;
};

struct BatchPlan {
  std::vector<std::vector<int>> batches;  // manifest indices
};

// Deterministic epoch plan; with the contrast loss enabled, batches are built
// from intact same-(scenario, session) chunks so every clip has a positive
// and every batch spans at least two groups.
BatchPlan make_batch_plan(const DatasetManifest& manifest, const Config& cfg, std::uint64_t epoch_seed);

struct StepRecord {
  long long step = 0;
  double l_cls = 0, l_sc = 0, l_mc = 0, l_f = 0;
  int n_correct = 0, n_total = 0;  // pre-update predictions from sub-step B
};

struct EpochRecord {
  int epoch = 0;
  // train_top1 aggregates sub-step B predictions across the epoch (online,
  // pre-update); val_top1 is a fresh pass over the validation split.
  double train_top1 = 0, val_top1 = 0, best_val_top1 = 0, mean_l_cls = 0;
};

struct FitResult {
  std::string best_checkpoint, last_checkpoint;
  std::vector<EpochRecord> epochs;
  double best_val_top1 = -1;
};

// Alternating optimizer: sub-step A updates backbone parameters and cluster
// centers with L_f, sub-step B updates backbone and predictor with L_cls,
// both every iteration, in that order.
class Trainer {
 public:
  Trainer(const Config& cfg, const DatasetManifest& manifest, const std::string& data_root);

  StepRecord train_step(const std::vector<int>& batch);
  double evaluate_top1(Split s);
  FitResult fit();

  DmsdModel<float>& model() { return *model_; }
  const DmsdModel<float>& model() const { return *model_; }
  const ClipDataset& dataset() const { return *data_; }
  const Config& config() const { return cfg_; }
  long long step_count() const { return step_; }
  void save_checkpoint_to(const std::string& path, double best_val) const;

  // Called after sub-step A (phase 0) and after sub-step B (phase 1);
  // intended for read-only observation in tests.
  std::function<void(int phase)> substep_hook;

 private:
  void sgd_update(const std::vector<nn::ParamGroup>& groups);
  void check_finite(double loss, const char* what, const std::vector<int>& batch) const;

  Config cfg_;
  std::unique_ptr<ClipDataset> data_;
  std::unique_ptr<DmsdModel<float>> model_;
  VecX<float> velocity_;
  VecX<float> grad_;
  std::vector<VecX<float>> worker_grads_;
  long long step_ = 0;
  int start_epoch_ = 0;
  bool finetune_warned_ = false;
};

// Measured per-channel statistics (raw pixel scale) used to freeze the
// normalization constants in config defaults.
struct MeasuredNorm {
  std::array<double, 3> x_mean{}, x_std{}, dx_mean{}, dx_std{};
};
MeasuredNorm measure_norm_stats(const std::string& root, const DatasetManifest& manifest,
                                const ModelConfig& mc, int max_clips = 200);

}  // namespace dmsd
