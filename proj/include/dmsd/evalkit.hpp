#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dmsd/trainloop.hpp"

namespace dmsd {

struct MetricsReport {
  std::array<double, kNumClasses> per_class_acc{};  // NaN when the class is absent
  double mean_acc = 0, std_acc = 0, top1 = 0;
  long long n_samples = 0;
  std::array<std::array<long long, kNumClasses>, kNumClasses> confusion{};  // [true][pred]
  std::vector<std::string> warnings;
};

// Derives all metric fields from a confusion matrix; mean/std run over the
// classes that actually appear (population standard deviation).
MetricsReport metrics_from_confusion(const std::array<std::array<long long, kNumClasses>, kNumClasses>& cm);

std::string report_to_json(const MetricsReport& r);
std::string report_summary_text(const MetricsReport& r);
void save_report(const std::string& json_path, const std::string& txt_path, const MetricsReport& r);

// Model restored from a checkpoint, with the resolved config it was trained
// under.
class Evaluator {
 public:
  explicit Evaluator(const std::string& checkpoint_path);
  const Config& config() const { return cfg_; }
  const DmsdModel<float>& model() const { return *model_; }
  ModelForward<float> forward(const SeqTensor<float>& x) const { return model_->forward(x, nullptr); }
  double best_val_top1() const { return best_val_; }

 private:
  Config cfg_;
  std::unique_ptr<DmsdModel<float>> model_;
  double best_val_ = -1;
};

// Clip loader used by evaluation paths; optionally applies a perspective warp
// to each native frame before resizing.
SeqTensor<float> load_clip_tensor(const std::string& root, const ClipRecord& clip, const ModelConfig& mc,
                                  const Eigen::Matrix3d* src_to_out = nullptr);

MetricsReport evaluate(const Evaluator& ev, const std::string& root, const DatasetManifest& manifest,
                       Split split, const std::string& individual_filter = "");

// Fixed perspective warp applied to every frame (tilt about the horizontal
// image axis); tilt 0 reproduces evaluate exactly.
MetricsReport homography_stress(const Evaluator& ev, const std::string& root,
                                const DatasetManifest& manifest, Split split, double tilt_deg);

struct XMatrixResult {
  std::vector<std::string> individuals;
  MatX<double> top1;  // (i, j): model trained on i, tested on j
};

XMatrixResult cross_individual_matrix(const std::vector<std::string>& checkpoint_paths,
                                      const std::string& root, const DatasetManifest& manifest,
                                      const std::vector<std::string>& individuals);
void save_xmatrix_csv(const std::string& path, const XMatrixResult& xm);
XMatrixResult load_xmatrix_csv(const std::string& path);
ImageU8 render_xmatrix_heatmap(const XMatrixResult& xm);

struct WindowPrediction {
  double t_start = 0;
  MotionLabel predicted = MotionLabel::middle;
  MotionLabel truth = MotionLabel::middle;
  std::array<double, kNumClasses> probs{};
};

struct TrajectoryPrediction {
  std::string video_id;
  std::vector<WindowPrediction> windows;
  double top1 = 0;
  double stride = 3.0;
};

struct LongVideoMeta {
  std::string video_id;
  int n_frames = 0;
  double fps = 30.0;
  int size = 224;
};
LongVideoMeta load_long_video_meta(const std::string& root, const std::string& video_id);

// Sliding-window prediction every `stride` seconds for the following
// horizon; each window consumes the 64 frames preceding its start.
TrajectoryPrediction predict_long_term(const Evaluator& ev, const std::string& root,
                                       const std::string& video_id, double stride = 3.0);

// Closed-form number of prediction windows for a recording.
int long_term_window_count(int n_frames, double fps, double traj_end, double horizon, double stride);

ImageU8 render_trajectory_plot(const std::vector<TrajectoryPoint>& traj, const TrajectoryPrediction& pred,
                               const ImageU8& background);
void save_plot(const std::string& png_path, const std::string& meta_json_path,
               const std::vector<TrajectoryPoint>& traj, const TrajectoryPrediction& pred,
               const ImageU8& background);

// Count of pure-red cross pixels, used to audit rendered plots.
long long count_pure_red_pixels(const ImageU8& img);

// Side-by-side grids of the pre-decoupling terms u and v for one clip,
// min-max normalized per panel.
ImageU8 render_decouple_grid(const Evaluator& ev, const SeqTensor<float>& x);

// Aggregate of repeated runs (e.g. over seeds); keeps per-run top-1 values.
void save_multi_run_report(const std::string& path, const std::vector<MetricsReport>& runs,
                           const std::vector<std::uint64_t>& seeds);

}  // namespace dmsd
