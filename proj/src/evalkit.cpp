#include "dmsd/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "json.hpp"

namespace dmsd {

using nlohmann::json;

MetricsReport metrics_from_confusion(
    const std::array<std::array<long long, kNumClasses>, kNumClasses>& cm) {
  MetricsReport r;
  r.confusion = cm;
  long long total = 0, diag = 0;
  std::vector<double> present;
  for (int c = 0; c < kNumClasses; ++c) {
    long long row = 0;
    for (int p = 0; p < kNumClasses; ++p) row += cm[static_cast<std::size_t>(c)][static_cast<std::size_t>(p)];
    total += row;
    diag += cm[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    if (row > 0) {
      double acc = static_cast<double>(cm[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]) /
                   static_cast<double>(row);
      r.per_class_acc[static_cast<std::size_t>(c)] = acc;
      present.push_back(acc);
    } else {
      r.per_class_acc[static_cast<std::size_t>(c)] = std::numeric_limits<double>::quiet_NaN();
      r.warnings.push_back("class " + to_string(static_cast<MotionLabel>(c)) +
                           " absent from the split; excluded from mean/std");
    }
  }
  r.n_samples = total;
  r.top1 = total ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
  if (!present.empty()) {
    double mean = 0;
    for (double a : present) mean += a;
    mean /= static_cast<double>(present.size());
    double var = 0;
    for (double a : present) var += (a - mean) * (a - mean);
    var /= static_cast<double>(present.size());
    r.mean_acc = mean;
    r.std_acc = std::sqrt(var);
  }
  return r;
}

std::string report_to_json(const MetricsReport& r) {
  json j;
  json pca = json::array();
  for (double a : r.per_class_acc) {
    if (std::isnan(a))
      pca.push_back(nullptr);
    else
      pca.push_back(a);
  }
  j["per_class_acc"] = pca;
  j["class_order"] = {"up", "down", "left", "right", "middle"};
  j["mean_acc"] = r.mean_acc;
  j["std_acc"] = r.std_acc;
  j["std_semantics"] = "population std across per-class accuracies";
  j["top1"] = r.top1;
  j["n_samples"] = r.n_samples;
  json cm = json::array();
  for (const auto& row : r.confusion) cm.push_back(row);
  j["confusion"] = cm;
  j["warnings"] = r.warnings;
  return j.dump(2) + "\n";
}

std::string report_summary_text(const MetricsReport& r) {
  char buf[512];
  std::string out = "samples: " + std::to_string(r.n_samples) + "\n";
  std::snprintf(buf, sizeof(buf), "top1: %.4f\nmean class acc: %.4f\nstd class acc: %.4f\n", r.top1,
                r.mean_acc, r.std_acc);
  out += buf;
  static const char* names[] = {"up", "down", "left", "right", "middle"};
  for (int c = 0; c < kNumClasses; ++c) {
    double a = r.per_class_acc[static_cast<std::size_t>(c)];
    if (std::isnan(a))
      std::snprintf(buf, sizeof(buf), "  %-7s -\n", names[c]);
    else
      std::snprintf(buf, sizeof(buf), "  %-7s %.4f\n", names[c], a);
    out += buf;
  }
  for (const auto& w : r.warnings) out += "warning: " + w + "\n";
  return out;
}

void save_report(const std::string& json_path, const std::string& txt_path, const MetricsReport& r) {
  std::ofstream j(json_path, std::ios::binary);
  if (!j) throw DataError("save_report: cannot write " + json_path);
  j << report_to_json(r);
  std::ofstream t(txt_path, std::ios::binary);
  t << report_summary_text(r);
}

Evaluator::Evaluator(const std::string& checkpoint_path) {
  CheckpointFile ck = load_checkpoint_file(checkpoint_path);
  cfg_ = parse_config_text(ck.meta.config_text);
  model_ = std::make_unique<DmsdModel<float>>(cfg_.model, cfg_.losses.num_centers,
                                              cfg_.losses.center_init_scale, cfg_.run.seed);
  restore_params(*model_, ck);
  best_val_ = ck.meta.best_val_top1;
}

SeqTensor<float> load_clip_tensor(const std::string& root, const ClipRecord& clip, const ModelConfig& mc,
                                  const Eigen::Matrix3d* src_to_out) {
  std::vector<int> idx = sample_frame_indices(clip.n_frames, mc.segments);
  std::vector<ImageU8> frames;
  frames.reserve(idx.size());
  std::optional<Eigen::Matrix3d> inv;
  if (src_to_out) inv = src_to_out->inverse();
  for (int i : idx) {
    ImageU8 f = read_png(frame_path(root, clip.clip_id, i));
    if (inv) f = warp_homography(f, *inv);
    frames.push_back(std::move(f));
  }
  return clip_tensor_from_frames(frames, mc);
}

namespace {

MetricsReport evaluate_impl(const Evaluator& ev, const std::string& root, const DatasetManifest& manifest,
                            Split split, const std::string& individual_filter,
                            const Eigen::Matrix3d* warp) {
  std::vector<const ClipRecord*> clips;
  for (const auto& r : manifest.records)
    if (r.split == split && (individual_filter.empty() || r.individual_id == individual_filter))
      clips.push_back(&r);
  if (clips.empty()) throw DataError("evaluate: empty split");

  std::string missing;
  for (const auto* c : clips)
    if (!std::ifstream(frame_path(root, c->clip_id, c->n_frames - 1)).good())
      missing += c->clip_id + " ";
  if (!missing.empty()) throw DataError("evaluate: missing clip files: " + missing);

  std::array<std::array<std::array<long long, kNumClasses>, kNumClasses>, 2> cms{};
  parallel_for(static_cast<int>(clips.size()), 2, [&](int k, int w) {
    const ClipRecord& clip = *clips[static_cast<std::size_t>(k)];
    SeqTensor<float> x = load_clip_tensor(root, clip, ev.config().model, warp);
    auto out = ev.forward(x);
    int pred = 0;
    out.logits.maxCoeff(&pred);
    cms[static_cast<std::size_t>(w)][static_cast<std::size_t>(clip.label)][static_cast<std::size_t>(pred)]++;
  });
  std::array<std::array<long long, kNumClasses>, kNumClasses> cm{};
  for (int w = 0; w < 2; ++w)
    for (int a = 0; a < kNumClasses; ++a)
      for (int b = 0; b < kNumClasses; ++b)
        cm[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] +=
            cms[static_cast<std::size_t>(w)][static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
  return metrics_from_confusion(cm);
}

}  // namespace

MetricsReport evaluate(const Evaluator& ev, const std::string& root, const DatasetManifest& manifest,
                       Split split, const std::string& individual_filter) {
  return evaluate_impl(ev, root, manifest, split, individual_filter, nullptr);
}

MetricsReport homography_stress(const Evaluator& ev, const std::string& root,
                                const DatasetManifest& manifest, Split split, double tilt_deg) {
  if (std::abs(tilt_deg) > 30.0) throw std::invalid_argument("homography_stress: tilt within +-30 deg");
  if (tilt_deg == 0.0) return evaluate_impl(ev, root, manifest, split, "", nullptr);
  int size = 224;
  for (const auto& r : manifest.records)
    if (r.split == split) {
      ImageU8 probe = read_png(frame_path(root, r.clip_id, 0));
      size = probe.w;
      break;
    }
  Eigen::Matrix3d h = tilt_homography(size, size, tilt_deg);
  return evaluate_impl(ev, root, manifest, split, "", &h);
}

XMatrixResult cross_individual_matrix(const std::vector<std::string>& checkpoint_paths,
                                      const std::string& root, const DatasetManifest& manifest,
                                      const std::vector<std::string>& individuals) {
  if (individuals.size() < 2) throw ConfigError("cross_individual_matrix: need >= 2 individuals");
  if (checkpoint_paths.size() != individuals.size())
    throw ConfigError("cross_individual_matrix: one checkpoint per individual required");
  XMatrixResult xm;
  xm.individuals = individuals;
  const int k = static_cast<int>(individuals.size());
  xm.top1.resize(k, k);
  for (int i = 0; i < k; ++i) {
    Evaluator ev(checkpoint_paths[static_cast<std::size_t>(i)]);
    for (int j = 0; j < k; ++j) {
      MetricsReport r =
          evaluate(ev, root, manifest, Split::test, individuals[static_cast<std::size_t>(j)]);
      xm.top1(i, j) = r.top1;
    }
  }
  return xm;
}

void save_xmatrix_csv(const std::string& path, const XMatrixResult& xm) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_xmatrix_csv: cannot write " + path);
  out << "train\\test";
  for (const auto& id : xm.individuals) out << "," << id;
  out << "\n";
  char buf[32];
  for (Eigen::Index i = 0; i < xm.top1.rows(); ++i) {
    out << xm.individuals[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < xm.top1.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), ",%.6f", xm.top1(i, j));
      out << buf;
    }
    out << "\n";
  }
}

XMatrixResult load_xmatrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_xmatrix_csv: cannot open " + path);
  XMatrixResult xm;
  std::string line;
  if (!std::getline(in, line)) throw DataError("load_xmatrix_csv: empty file");
  std::size_t pos = line.find(',');
  while (pos != std::string::npos) {
    std::size_t next = line.find(',', pos + 1);
    xm.individuals.push_back(line.substr(pos + 1, next == std::string::npos ? next : next - pos - 1));
    pos = next;
  }
  const int k = static_cast<int>(xm.individuals.size());
  xm.top1.resize(k, k);
  for (int i = 0; i < k; ++i) {
    if (!std::getline(in, line)) throw DataError("load_xmatrix_csv: truncated");
    std::size_t p = line.find(',');
    for (int j = 0; j < k; ++j) {
      std::size_t next = line.find(',', p + 1);
      xm.top1(i, j) = std::stod(line.substr(p + 1, next == std::string::npos ? next : next - p - 1));
      p = next;
    }
  }
  return xm;
}

ImageU8 render_xmatrix_heatmap(const XMatrixResult& xm) {
  const int k = static_cast<int>(xm.individuals.size());
  const int cell = 64, margin = 28;
  ImageU8 img(margin + k * cell + 8, margin + k * cell + 8);
  fill(img, {245, 245, 245});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      double v = std::clamp(xm.top1(i, j), 0.0, 1.0);
      // blue (low) to red (high)
      Color c{static_cast<std::uint8_t>(40 + 200 * v), 60, static_cast<std::uint8_t>(240 - 200 * v)};
      for (int y = 0; y < cell - 2; ++y)
        for (int x = 0; x < cell - 2; ++x) {
          auto* p = img.px(margin + j * cell + x, margin + i * cell + y);
          p[0] = c.r;
          p[1] = c.g;
          p[2] = c.b;
        }
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%.2f", xm.top1(i, j));
      draw_text(img, margin + j * cell + 8, margin + i * cell + cell / 2 - 4, buf, {255, 255, 255});
    }
  for (int i = 0; i < k; ++i) {
    draw_text(img, margin + i * cell + cell / 2 - 3, 8, xm.individuals[static_cast<std::size_t>(i)],
              {20, 20, 20});
    draw_text(img, 8, margin + i * cell + cell / 2 - 4, xm.individuals[static_cast<std::size_t>(i)],
              {20, 20, 20});
  }
  return img;
}

LongVideoMeta load_long_video_meta(const std::string& root, const std::string& video_id) {
  std::ifstream in(root + "/video_" + video_id + ".json");
  if (!in) throw DataError("load_long_video_meta: no metadata for video " + video_id);
  json j = json::parse(in);
  LongVideoMeta m;
  m.video_id = j.at("video_id").get<std::string>();
  m.n_frames = j.at("n_frames").get<int>();
  m.fps = j.at("fps").get<double>();
  m.size = j.at("size").get<int>();
  return m;
}

int long_term_window_count(int n_frames, double fps, double traj_end, double horizon, double stride) {
  double t_min = 64.0 / fps;
  double t_first = std::ceil(t_min / stride - 1e-9) * stride;
  if (t_first + horizon > traj_end + 1e-9) return 0;
  return static_cast<int>(std::floor((traj_end - horizon - t_first + 1e-9) / stride)) + 1;
}

TrajectoryPrediction predict_long_term(const Evaluator& ev, const std::string& root,
                                       const std::string& video_id, double stride) {
  LongVideoMeta meta = load_long_video_meta(root, video_id);
  std::vector<TrajectoryPoint> traj = load_trajectory_csv(traj_path(root, video_id));
  const Config& cfg = ev.config();
  const double horizon = cfg.label.horizon_t;
  const double r = compute_r(meta.size, cfg.label);
  const double traj_end = traj.back().t;

  TrajectoryPrediction out;
  out.video_id = video_id;
  out.stride = stride;
  double t_min = 64.0 / meta.fps;
  if (t_min > stride * 1e-9 && std::fmod(t_min, stride) != 0.0)
    std::cerr << "[evalkit] notice: first " << static_cast<int>(t_min / stride) + 1
              << " stride boundary(ies) lack leading footage; skipped\n";
  int n = long_term_window_count(meta.n_frames, meta.fps, traj_end, horizon, stride);
  double t_first = std::ceil(t_min / stride - 1e-9) * stride;

  int correct = 0;
  for (int w = 0; w < n; ++w) {
    double t0 = t_first + w * stride;
    int n_t = static_cast<int>(std::floor(t0 * meta.fps + 1e-6));
    n_t = std::min(n_t, meta.n_frames);
    std::vector<int> rel = sample_frame_indices(64, cfg.model.segments);
    std::vector<ImageU8> frames;
    frames.reserve(rel.size());
    for (int i : rel) frames.push_back(read_png(frame_path(root, video_id, n_t - 64 + i)));
    SeqTensor<float> x = clip_tensor_from_frames(frames, cfg.model);
    auto fw = ev.forward(x);

    WindowPrediction wp;
    wp.t_start = t0;
    VecX<float> logits = fw.logits;
    float mx = logits.maxCoeff();
    VecX<float> e = (logits.array() - mx).exp();
    float zsum = e.sum();
    int pred = 0;
    logits.maxCoeff(&pred);
    wp.predicted = static_cast<MotionLabel>(pred);
    for (int c = 0; c < kNumClasses; ++c)
      wp.probs[static_cast<std::size_t>(c)] = static_cast<double>(e(c) / zsum);
    wp.truth = assign_label(displacement(traj, t0, horizon), r, cfg.label);
    if (wp.predicted == wp.truth) ++correct;
    out.windows.push_back(wp);
  }
  out.top1 = out.windows.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(out.windows.size());
  return out;
}

namespace {

std::pair<double, double> traj_at(const std::vector<TrajectoryPoint>& traj, double t) {
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

ImageU8 render_trajectory_plot(const std::vector<TrajectoryPoint>& traj, const TrajectoryPrediction& pred,
                               const ImageU8& background) {
  ImageU8 img = background;
  const Color gray{128, 128, 128};
  const Color marker{40, 70, 210};
  const Color red{255, 0, 0};
  const Color star{250, 215, 0};

  for (std::size_t i = 1; i < traj.size(); ++i)
    draw_line(img, traj[i - 1].x, traj[i - 1].y, traj[i].x, traj[i].y, gray, 1.0);

  if (!traj.empty()) draw_star(img, traj.front().x, traj.front().y, 7.0, star);

  for (const auto& w : pred.windows) {
    auto [x, y] = traj_at(traj, w.t_start);
    switch (w.predicted) {
      case MotionLabel::middle: draw_circle_outline(img, x, y, 5.0, marker); break;
      case MotionLabel::up: draw_triangle(img, x, y, 6.0, 1.5707963267948966, marker); break;
      case MotionLabel::down: draw_triangle(img, x, y, 6.0, -1.5707963267948966, marker); break;
      case MotionLabel::left: draw_triangle(img, x, y, 6.0, 3.141592653589793, marker); break;
      case MotionLabel::right: draw_triangle(img, x, y, 6.0, 0.0, marker); break;
    }
    if (w.predicted != w.truth) draw_cross(img, x, y, 6.0, red, 2.0);
  }

  char buf[48];
  std::snprintf(buf, sizeof(buf), "TOP1 %.1f%%", 100.0 * pred.top1);
  draw_text(img, 6, 6, buf, {20, 20, 20}, 1);
  return img;
}

long long count_pure_red_pixels(const ImageU8& img) {
  long long n = 0;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const auto* p = img.px(x, y);
      if (p[0] == 255 && p[1] == 0 && p[2] == 0) ++n;
    }
  return n;
}

void save_plot(const std::string& png_path, const std::string& meta_json_path,
               const std::vector<TrajectoryPoint>& traj, const TrajectoryPrediction& pred,
               const ImageU8& background) {
  ImageU8 img = render_trajectory_plot(traj, pred, background);
  write_png(png_path, img);
  json j;
  j["video_id"] = pred.video_id;
  j["top1"] = pred.top1;
  j["stride"] = pred.stride;
  j["n_windows"] = pred.windows.size();
  json ws = json::array();
  for (const auto& w : pred.windows) {
    auto [x, y] = traj_at(traj, w.t_start);
    ws.push_back({{"t_start", w.t_start},
                  {"x", x},
                  {"y", y},
                  {"predicted", to_string(w.predicted)},
                  {"truth", to_string(w.truth)},
                  {"correct", w.predicted == w.truth}});
  }
  j["windows"] = ws;
  std::ofstream out(meta_json_path, std::ios::binary);
  if (!out) throw DataError("save_plot: cannot write " + meta_json_path);
  out << j.dump(2) << "\n";
}

ImageU8 render_decouple_grid(const Evaluator& ev, const SeqTensor<float>& x) {
  const auto& model = ev.model();
  if (!model.dual()) throw ConfigError("render_decouple_grid: needs the dual-stream model");
  DecoupledPair<float> uv = model.pre_decouple().forward(model.params(), x, nullptr);
  const int T = x.T, H = x.H, W = x.W, pad = 2;
  ImageU8 grid(T * (W + pad) + pad, 2 * (H + pad) + pad);
  fill(grid, {16, 16, 16});
  auto blit = [&](const SeqTensor<float>& s, int rowpos) {
    float lo = s.data.minCoeff(), hi = s.data.maxCoeff();
    float scale = hi - lo > 1e-12f ? 1.0f / (hi - lo) : 1.0f;
    for (int t = 0; t < T; ++t)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          auto* p = grid.px(pad + t * (W + pad) + xx, pad + rowpos * (H + pad) + y);
          for (int c = 0; c < 3; ++c) {
            float v = (s.at(t, c, y, xx) - lo) * scale;
            p[c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
          }
        }
  };
  blit(uv.u, 0);
  blit(uv.v, 1);
  return grid;
}

void save_multi_run_report(const std::string& path, const std::vector<MetricsReport>& runs,
                           const std::vector<std::uint64_t>& seeds) {
  json j;
  json rs = json::array();
  double sum = 0, sumsq = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    json r;
    r["seed"] = i < seeds.size() ? seeds[i] : 0;
    r["top1"] = runs[i].top1;
    r["mean_acc"] = runs[i].mean_acc;
    r["std_acc"] = runs[i].std_acc;
    rs.push_back(r);
    sum += runs[i].top1;
    sumsq += runs[i].top1 * runs[i].top1;
  }
  j["runs"] = rs;
  if (!runs.empty()) {
    double mean = sum / static_cast<double>(runs.size());
    j["top1_mean_across_runs"] = mean;
    j["top1_std_across_runs"] = std::sqrt(std::max(0.0, sumsq / static_cast<double>(runs.size()) - mean * mean));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_multi_run_report: cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace dmsd
