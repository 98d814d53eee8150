#include "dmsd/trainloop.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

namespace dmsd {

namespace fs = std::filesystem;

std::vector<int> sample_frame_indices(int n_frames, int segments) {
  std::vector<int> idx(static_cast<std::size_t>(segments));
  for (int k = 0; k < segments; ++k) idx[static_cast<std::size_t>(k)] = n_frames - 1 - 8 * (segments - 1 - k);
  if (idx.front() < 0)
    throw DataError("sample_frame_indices: clip too short (" + std::to_string(n_frames) + " frames, need " +
                    std::to_string(8 * (segments - 1) + 1) + ")");
  return idx;
}

SeqTensor<float> clip_tensor_from_frames(const std::vector<ImageU8>& frames, const ModelConfig& mc) {
  if (static_cast<int>(frames.size()) != mc.segments)
    throw DataError("clip_tensor_from_frames: expected " + std::to_string(mc.segments) + " frames");
  const int S = mc.input_size;
  SeqTensor<float> x(mc.segments, 3, S, S);
  for (int t = 0; t < mc.segments; ++t) {
    ImageF f = to_float(frames[static_cast<std::size_t>(t)]);
    if (f.w != S || f.h != S) f = resize_bilinear(f, S, S);
    auto seg = x.segment(t);
    for (int c = 0; c < 3; ++c) {
      float mean = static_cast<float>(mc.norm_x_mean[static_cast<std::size_t>(c)]);
      float inv = 1.0f / static_cast<float>(mc.norm_x_std[static_cast<std::size_t>(c)]);
      for (int y = 0; y < S; ++y)
        for (int xx = 0; xx < S; ++xx)
          seg(c, static_cast<Eigen::Index>(y) * S + xx) = (f.at(c, xx, y) - mean) * inv;
    }
  }
  return x;
}

SeqTensor<float> sample_clip_frames(const std::string& root, const ClipRecord& clip,
                                    const ModelConfig& mc) {
  std::vector<int> idx;
  try {
    idx = sample_frame_indices(clip.n_frames, mc.segments);
  } catch (const DataError& e) {
    throw DataError(std::string(e.what()) + " (clip " + clip.clip_id + ")");
  }
  std::vector<ImageU8> frames;
  frames.reserve(idx.size());
  for (int i : idx) {
    std::string path = frame_path(root, clip.clip_id, i);
    try {
      frames.push_back(read_png(path));
    } catch (const DataError&) {
      throw DataError("sample_clip_frames: missing frame " + path + " (clip " + clip.clip_id + ")");
    }
  }
  return clip_tensor_from_frames(frames, mc);
}

ClipDataset::ClipDataset(std::string root, const DatasetManifest& manifest, const ModelConfig& mc)
    : root_(std::move(root)), manifest_(manifest), mc_(mc) {
  cache_enabled_ = mc.input_size <= 128;
  cache_.resize(manifest_.records.size());
  cached_.assign(manifest_.records.size(), 0);
}

std::vector<int> ClipDataset::split_indices(Split s) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (manifest_.records[static_cast<std::size_t>(i)].split == s) out.push_back(i);
  return out;
}

ClipMeta ClipDataset::meta(int i) const {
  const auto& r = record(i);
  return ClipMeta{r.scenario_id, r.session_id, static_cast<int>(r.label)};
}

SeqTensor<float> ClipDataset::tensor(int i) const {
  if (cache_enabled_) {
    {
      std::lock_guard<std::mutex> lk(mx_);
      if (cached_[static_cast<std::size_t>(i)]) return cache_[static_cast<std::size_t>(i)];
    }
    SeqTensor<float> t = sample_clip_frames(root_, record(i), mc_);
    std::lock_guard<std::mutex> lk(mx_);
    cache_[static_cast<std::size_t>(i)] = t;
    cached_[static_cast<std::size_t>(i)] = 1;
    return t;
  }
  return sample_clip_frames(root_, record(i), mc_);
}

void ClipDataset::prefetch(const std::vector<int>& indices, int workers) const {
  if (!cache_enabled_) return;
  parallel_for(static_cast<int>(indices.size()), workers,
               [&](int k, int) { (void)tensor(indices[static_cast<std::size_t>(k)]); });
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  Rng r(seed ^ (salt * 0x9e3779b97f4a7c15ULL + 0x243f6a8885a308d3ULL));
  return r.next_u64();
}

}  // namespace

BatchPlan make_batch_plan(const DatasetManifest& manifest, const Config& cfg, std::uint64_t epoch_seed) {
  BatchPlan plan;
  std::vector<int> train;
  for (int i = 0; i < static_cast<int>(manifest.records.size()); ++i)
    if (manifest.records[static_cast<std::size_t>(i)].split == Split::train) train.push_back(i);
  if (train.empty()) throw ConfigError("make_batch_plan: empty train split");
  Rng rng(epoch_seed ^ 0xb7e151628aed2a6bULL);
  const int bs = cfg.optim.batch_size;

  if (!cfg.losses.use_sc) {
    rng.shuffle(train);
    for (std::size_t i = 0; i < train.size(); i += static_cast<std::size_t>(bs)) {
      std::vector<int> b(train.begin() + static_cast<std::ptrdiff_t>(i),
                         train.begin() + static_cast<std::ptrdiff_t>(std::min(i + bs, train.size())));
      plan.batches.push_back(std::move(b));
    }
    return plan;
  }

  // Group by (scenario, session); map keeps deterministic key order.
  std::map<std::pair<std::string, std::string>, std::vector<int>> groups;
  for (int i : train) {
    const auto& r = manifest.records[static_cast<std::size_t>(i)];
    groups[{r.scenario_id, r.session_id}].push_back(i);
  }
  int dropped = 0;
  std::vector<std::vector<int>> chunks;
  for (auto& [key, members] : groups) {
    if (members.size() < 2) {
      ++dropped;
      continue;
    }
    rng.shuffle(members);
    std::size_t i = 0;
    while (i < members.size()) {
      std::size_t left = members.size() - i;
      std::size_t take = (left == 3 || left == 1) ? left : 2;  // left==1 cannot happen for size>=2
      chunks.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(i),
                          members.begin() + static_cast<std::ptrdiff_t>(i + take));
      i += take;
    }
  }
  if (dropped > 0)
    std::cerr << "[trainloop] warning: dropped " << dropped
              << " singleton (scenario, session) group(s) from the contrast-loss epoch\n";
  if (chunks.empty())
    throw ConfigError("make_batch_plan: no pairable (scenario, session) group; "
                      "regenerate the dataset with sessions (>=2 clips per group)");
  rng.shuffle(chunks);

  for (const auto& ch : chunks) {
    if (!plan.batches.empty() &&
        static_cast<int>(plan.batches.back().size() + ch.size()) <= bs) {
      plan.batches.back().insert(plan.batches.back().end(), ch.begin(), ch.end());
    } else {
      plan.batches.push_back(ch);
    }
  }

  // Every batch must span >= 2 groups so each anchor sees a negative; merge
  // offenders into a neighbor.
  auto group_key = [&](int idx) {
    const auto& r = manifest.records[static_cast<std::size_t>(idx)];
    return r.scenario_id + "\x1f" + r.session_id;
  };
  auto distinct_groups = [&](const std::vector<int>& b) {
    std::vector<std::string> keys;
    for (int i : b) {
      std::string k = group_key(i);
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
    return keys.size();
  };
  for (std::size_t i = 0; i < plan.batches.size();) {
    if (distinct_groups(plan.batches[i]) >= 2) {
      ++i;
      continue;
    }
    if (plan.batches.size() == 1)
      throw ConfigError("make_batch_plan: all train clips share one (scenario, session) group; "
                        "the contrast loss needs negatives - regenerate data with more sessions");
    std::size_t target = i == 0 ? 1 : i - 1;
    plan.batches[target].insert(plan.batches[target].end(), plan.batches[i].begin(),
                                plan.batches[i].end());
    plan.batches.erase(plan.batches.begin() + static_cast<std::ptrdiff_t>(i));
    if (target < i) i = target;
  }
  return plan;
}

Trainer::Trainer(const Config& cfg, const DatasetManifest& manifest, const std::string& data_root)
    : cfg_(cfg) {
  validate(cfg_);
  if (cfg_.model.kind == "single" && (cfg_.losses.use_sc || cfg_.losses.use_mc))
    throw ConfigError("Trainer: the single-stream baseline trains with the classification loss only");
  data_ = std::make_unique<ClipDataset>(data_root, manifest, cfg_.model);
  model_ = std::make_unique<DmsdModel<float>>(cfg_.model, cfg_.losses.num_centers,
                                              cfg_.losses.center_init_scale, cfg_.run.seed);
  velocity_ = VecX<float>::Zero(static_cast<Eigen::Index>(model_->params().size()));
  grad_ = velocity_;
  worker_grads_.assign(2, velocity_);

  if (!cfg_.run.finetune_from.empty()) {
    CheckpointFile ck = load_checkpoint_file(cfg_.run.finetune_from);
    restore_params(*model_, ck);
    if (cfg_.run.resume) {
      restore_velocity(velocity_, ck);
      step_ = ck.meta.step;
      start_epoch_ = ck.meta.epoch;
    } else {
      cfg_.optim.lr_backbone *= cfg_.optim.finetune_lr_scale;
      cfg_.optim.lr_head *= cfg_.optim.finetune_lr_scale;
      cfg_.optim.lr_centers *= cfg_.optim.finetune_lr_scale;
      auto train = data_->split_indices(Split::train);
      if (static_cast<int>(train.size()) != kNumClasses && !finetune_warned_) {
        std::cerr << "[trainloop] warning: finetune split has " << train.size()
                  << " clips; the challenging protocol expects one per class (" << kNumClasses << ")\n";
        finetune_warned_ = true;
      }
    }
  }
}

void Trainer::check_finite(double loss, const char* what, const std::vector<int>& batch) const {
  if (std::isfinite(loss)) return;
  std::string ids;
  for (int i : batch) ids += data_->record(i).clip_id + " ";
  throw NumericError(std::string("train_step: non-finite ") + what + " on batch [" + ids + "]");
}

void Trainer::sgd_update(const std::vector<nn::ParamGroup>& groups) {
  auto& P = model_->params();
  const float mom = static_cast<float>(cfg_.optim.momentum);
  // Global-norm clip over the updated groups only.
  double sq = 0;
  for (auto g : groups)
    P.for_group(g, [&](const nn::ParamStore<float>::Spec& sp) {
      sq += grad_.segment(static_cast<Eigen::Index>(sp.offset),
                          static_cast<Eigen::Index>(sp.rows) * sp.cols)
                .squaredNorm();
    });
  double norm = std::sqrt(sq);
  float scale = 1.0f;
  if (cfg_.optim.clip_norm > 0 && norm > cfg_.optim.clip_norm)
    scale = static_cast<float>(cfg_.optim.clip_norm / norm);
  if (std::getenv("DMSD_DEBUG_GRAD"))
    std::fprintf(stderr, "[grad] step %lld groups %zu norm %.4f scale %.4f\n", step_, groups.size(), norm,
                 scale);

  for (auto g : groups) {
    float lr = g == nn::ParamGroup::backbone ? static_cast<float>(cfg_.optim.lr_backbone)
               : g == nn::ParamGroup::head   ? static_cast<float>(cfg_.optim.lr_head)
                                             : static_cast<float>(cfg_.optim.lr_centers);
    P.for_group(g, [&](const nn::ParamStore<float>::Spec& sp) {
      Eigen::Index off = static_cast<Eigen::Index>(sp.offset);
      Eigen::Index len = static_cast<Eigen::Index>(sp.rows) * sp.cols;
      auto v = velocity_.segment(off, len);
      v = mom * v + scale * grad_.segment(off, len);
      P.values().segment(off, len) -= lr * v;
    });
  }
}

StepRecord Trainer::train_step(const std::vector<int>& batch) {
  const int B = static_cast<int>(batch.size());
  if (B == 0) throw ConfigError("train_step: empty batch");
  const auto& lc = cfg_.losses;
  const bool do_aux = model_->dual() && (lc.use_sc || lc.use_mc);
  StepRecord rec;
  rec.step = step_;

  std::vector<ClipMeta> metas(static_cast<std::size_t>(B));
  for (int i = 0; i < B; ++i) metas[static_cast<std::size_t>(i)] = data_->meta(batch[static_cast<std::size_t>(i)]);

  const int d = cfg_.model.feature_dim;
  const int K = model_->num_centers();

  // Sub-step A: feature decoupling loss updates backbone + centers. The
  // loss couples clips only through the pooled features, so clip tapes from
  // one forward pass can be replayed once its gradients are known; large
  // inputs fall back to a re-forward to bound memory.
  if (do_aux) {
    const bool keep_tapes = cfg_.model.input_size <= 96;
    std::vector<typename DmsdModel<float>::Tape> tapes(keep_tapes ? static_cast<std::size_t>(B) : 0);
    MatX<float> S(d, B), M(d, B);
    parallel_for(B, 2, [&](int i, int) {
      auto out = model_->forward(data_->tensor(batch[static_cast<std::size_t>(i)]),
                                 keep_tapes ? &tapes[static_cast<std::size_t>(i)] : nullptr);
      S.col(i) = out.s_pooled;
      M.col(i) = out.m_pooled;
    });
    auto centers = model_->params().view(model_->centers_id());
    auto f = feature_decoupling_loss<float>(S, M, metas, centers, K, lc, static_cast<int>(step_));
    rec.l_sc = f.l_sc;
    rec.l_mc = f.l_mc;
    rec.l_f = f.loss;
    check_finite(rec.l_f, "feature decoupling loss", batch);

    for (auto& g : worker_grads_) g.setZero();
    parallel_for(B, 2, [&](int i, int w) {
      typename DmsdModel<float>::Tape local;
      typename DmsdModel<float>::Tape* tape = keep_tapes ? &tapes[static_cast<std::size_t>(i)] : &local;
      if (!keep_tapes) (void)model_->forward(data_->tensor(batch[static_cast<std::size_t>(i)]), tape);
      VecX<float> ds, dm;
      if (lc.use_sc && lc.lambda_s != 0.0) ds = f.dS.col(i);
      if (lc.use_mc && lc.lambda_m != 0.0) dm = f.dM.col(i);
      (void)model_->backward(*tape, VecX<float>(), ds, dm, worker_grads_[static_cast<std::size_t>(w)]);
    });
    grad_ = worker_grads_[0] + worker_grads_[1];
    const auto& csp = model_->params().spec(model_->centers_id());
    Eigen::Map<MatX<float>>(grad_.data() + csp.offset, csp.rows, csp.cols) += f.dCenters;
    sgd_update({nn::ParamGroup::backbone, nn::ParamGroup::centers});
  }
  if (substep_hook) substep_hook(0);

  // Sub-step B: classification loss updates backbone + predictor.
  {
    for (auto& g : worker_grads_) g.setZero();
    std::array<double, 2> worker_loss{0.0, 0.0};
    std::array<int, 2> worker_correct{0, 0};
    parallel_for(B, 2, [&](int i, int w) {
      typename DmsdModel<float>::Tape tape;
      auto out = model_->forward(data_->tensor(batch[static_cast<std::size_t>(i)]), &tape);
      int z = metas[static_cast<std::size_t>(i)].label;
      VecX<float> col = out.logits;
      int pred = 0;
      col.maxCoeff(&pred);
      if (pred == z) ++worker_correct[static_cast<std::size_t>(w)];
      float mx = col.maxCoeff();
      VecX<float> e = (col.array() - mx).exp();
      float zsum = e.sum();
      worker_loss[static_cast<std::size_t>(w)] += -(col(z) - mx - std::log(zsum)) / B;
      VecX<float> dlogits = e / zsum / static_cast<float>(B);
      dlogits(z) -= 1.0f / static_cast<float>(B);
      (void)model_->backward(tape, dlogits, VecX<float>(), VecX<float>(),
                             worker_grads_[static_cast<std::size_t>(w)]);
    });
    rec.l_cls = worker_loss[0] + worker_loss[1];
    rec.n_correct = worker_correct[0] + worker_correct[1];
    rec.n_total = B;
    check_finite(rec.l_cls, "classification loss", batch);
    grad_ = worker_grads_[0] + worker_grads_[1];
    sgd_update({nn::ParamGroup::backbone, nn::ParamGroup::head});
  }
  if (substep_hook) substep_hook(1);

  ++step_;
  return rec;
}

double Trainer::evaluate_top1(Split s) {
  auto idx = data_->split_indices(s);
  if (idx.empty()) return 0.0;
  std::array<int, 2> correct{0, 0};
  parallel_for(static_cast<int>(idx.size()), 2, [&](int k, int w) {
    int i = idx[static_cast<std::size_t>(k)];
    auto out = model_->forward(data_->tensor(i), nullptr);
    int pred = 0;
    out.logits.maxCoeff(&pred);
    if (pred == static_cast<int>(data_->record(i).label)) ++correct[static_cast<std::size_t>(w)];
  });
  return static_cast<double>(correct[0] + correct[1]) / static_cast<double>(idx.size());
}

void Trainer::save_checkpoint_to(const std::string& path, double best_val) const {
  CheckpointMeta meta;
  meta.signature = model_->signature();
  meta.step = step_;
  meta.epoch = start_epoch_;
  meta.best_val_top1 = best_val;
  meta.config_text = serialize_config(cfg_);
  save_checkpoint(path, *model_, velocity_, meta);
}

namespace {

// Exclusive advisory lock on a run directory.
struct RunLock {
  std::string path;
  explicit RunLock(const std::string& dir) : path(dir + "/.lock") {
    std::FILE* f = std::fopen(path.c_str(), "wx");
    if (!f)
      throw DataError("run_dir is locked by another run (remove " + path + " if stale)");
    std::fclose(f);
  }
  ~RunLock() { std::remove(path.c_str()); }
};

}  // namespace

FitResult Trainer::fit() {
  std::string run_dir = cfg_.run.run_dir;
  if (const char* env = std::getenv("DMSD_RUN_DIR"); env && *env) run_dir = env;
  if (run_dir.empty()) throw ConfigError("fit: run_dir not set");
  fs::create_directories(run_dir);
  RunLock lock(run_dir);

  {
    Config resolved = cfg_;
    resolved.run.run_dir = run_dir;
    save_config(run_dir + "/config.resolved", resolved);
  }

  std::ofstream metrics(run_dir + "/metrics.log", std::ios::binary);
  metrics << "step,L_cls,L_sc,L_mc,L_f\n";
  std::ofstream epochs_log(run_dir + "/epochs.log", std::ios::binary);
  epochs_log << "epoch,mean_L_cls,train_top1,val_top1,best_val_top1\n";

  FitResult result;
  result.best_checkpoint = run_dir + "/checkpoint.best";
  result.last_checkpoint = run_dir + "/checkpoint.last";

  auto train_idx = data_->split_indices(Split::train);
  auto val_idx = data_->split_indices(Split::val);
  data_->prefetch(train_idx);
  data_->prefetch(val_idx);

  double best_val = -1.0;
  if (cfg_.optim.epochs == 0) {
    save_checkpoint_to(result.best_checkpoint, best_val);
    save_checkpoint_to(result.last_checkpoint, best_val);
    return result;
  }

  char line[256];
  for (int epoch = start_epoch_; epoch < cfg_.optim.epochs; ++epoch) {
    BatchPlan plan = make_batch_plan(data_->manifest(), cfg_, mix_seed(cfg_.run.seed, static_cast<std::uint64_t>(epoch)));
    double cls_sum = 0;
    int n_steps = 0, n_correct = 0, n_seen = 0;
    for (const auto& batch : plan.batches) {
      StepRecord r = train_step(batch);
      cls_sum += r.l_cls;
      ++n_steps;
      n_correct += r.n_correct;
      n_seen += r.n_total;
      std::snprintf(line, sizeof(line), "%lld,%.6f,%.6f,%.6f,%.6f\n", r.step, r.l_cls, r.l_sc, r.l_mc,
                    r.l_f);
      metrics << line;
    }
    metrics.flush();

    EpochRecord er;
    er.epoch = epoch;
    er.mean_l_cls = n_steps ? cls_sum / n_steps : 0.0;
    er.train_top1 = n_seen ? static_cast<double>(n_correct) / n_seen : 0.0;
    er.val_top1 = evaluate_top1(Split::val);
    start_epoch_ = epoch + 1;
    if (er.val_top1 > best_val) {
      best_val = er.val_top1;
      save_checkpoint_to(result.best_checkpoint, best_val);
    }
    er.best_val_top1 = best_val;
    result.epochs.push_back(er);
    std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.6f\n", er.epoch, er.mean_l_cls, er.train_top1,
                  er.val_top1, er.best_val_top1);
    epochs_log << line;
    epochs_log.flush();
    save_checkpoint_to(result.last_checkpoint, best_val);
  }
  result.best_val_top1 = best_val;
  if (!fs::exists(result.best_checkpoint)) save_checkpoint_to(result.best_checkpoint, best_val);
  return result;
}

MeasuredNorm measure_norm_stats(const std::string& root, const DatasetManifest& manifest,
                                const ModelConfig& mc, int max_clips) {
  ModelConfig raw = mc;
  raw.norm_x_mean = {0, 0, 0};
  raw.norm_x_std = {1, 1, 1};
  MeasuredNorm out;
  std::array<double, 3> sum{}, sumsq{}, dsum{}, dsumsq{};
  long long n = 0, dn = 0;
  int used = 0;
  for (const auto& r : manifest.records) {
    if (r.split != Split::train) continue;
    if (used >= max_clips) break;
    ++used;
    SeqTensor<float> x = sample_clip_frames(root, r, raw);
    const Eigen::Index plane = x.plane();
    for (int c = 0; c < 3; ++c) {
      for (int t = 0; t < x.T; ++t) {
        auto seg = x.data.row(c).segment(static_cast<Eigen::Index>(t) * plane, plane);
        sum[static_cast<std::size_t>(c)] += seg.sum();
        sumsq[static_cast<std::size_t>(c)] += seg.squaredNorm();
        if (t > 0) {
          auto d0 = x.data.row(c).head(plane);
          dsum[static_cast<std::size_t>(c)] += (seg - d0).sum();
          dsumsq[static_cast<std::size_t>(c)] += (seg - d0).squaredNorm();
        }
      }
    }
    n += static_cast<long long>(x.T) * plane;
    dn += static_cast<long long>(x.T - 1) * plane;
  }
  if (n == 0) throw DataError("measure_norm_stats: no train clips");
  for (int c = 0; c < 3; ++c) {
    double m = sum[static_cast<std::size_t>(c)] / static_cast<double>(n);
    out.x_mean[static_cast<std::size_t>(c)] = m;
    out.x_std[static_cast<std::size_t>(c)] =
        std::sqrt(std::max(1e-12, sumsq[static_cast<std::size_t>(c)] / static_cast<double>(n) - m * m));
    double dm = dsum[static_cast<std::size_t>(c)] / static_cast<double>(dn);
    out.dx_mean[static_cast<std::size_t>(c)] = dm;
    out.dx_std[static_cast<std::size_t>(c)] =
        std::sqrt(std::max(1e-12, dsumsq[static_cast<std::size_t>(c)] / static_cast<double>(dn) - dm * dm));
  }
  return out;
}

}  // namespace dmsd
