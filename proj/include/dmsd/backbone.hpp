#pragma once

#include "dmsd/decouple.hpp"

namespace dmsd {

// Residual unit with the temporal shift at the start of the branch; the skip
// path sees the unshifted input and is projected when shape changes.
template <typename S>
class ResidualBlock {
 public:
  struct Tape {
    typename nn::Conv2d<S>::Cache c1, c2, proj;
    typename nn::GroupNorm<S>::Cache n1, n2, nproj;
    nn::ReluCache<S> r1, r2;
  };

  ResidualBlock() = default;
  ResidualBlock(nn::ParamStore<S>& P, const std::string& name, int cin, int cout, int stride,
                double fraction, nn::ParamGroup g)
      : fraction_(fraction),
        has_proj_(cin != cout || stride != 1),
        conv1_(P, name + ".conv1", cin, cout, 3, stride, g),
        gn1_(P, name + ".gn1", cout, g),
        conv2_(P, name + ".conv2", cout, cout, 3, 1, g),
        gn2_(P, name + ".gn2", cout, g) {
    if (has_proj_) {
      proj_ = nn::Conv2d<S>(P, name + ".proj", cin, cout, 1, stride, g);
      gnp_ = nn::GroupNorm<S>(P, name + ".gnp", cout, g);
    }
  }

  SeqTensor<S> forward(const nn::ParamStore<S>& P, const SeqTensor<S>& x, Tape* tp) const {
    SeqTensor<S> h = nn::temporal_shift(x, fraction_);
    h = conv1_.forward(P, h, tp ? &tp->c1 : nullptr);
    h = gn1_.forward(P, h, tp ? &tp->n1 : nullptr);
    h = nn::relu(h, tp ? &tp->r1 : nullptr);
    h = conv2_.forward(P, h, tp ? &tp->c2 : nullptr);
    h = gn2_.forward(P, h, tp ? &tp->n2 : nullptr);
    SeqTensor<S> skip = x;
    if (has_proj_) {
      skip = proj_.forward(P, x, tp ? &tp->proj : nullptr);
      skip = gnp_.forward(P, skip, tp ? &tp->nproj : nullptr);
    }
    h.data = (h.data + skip.data) * kResidualScale;
    return nn::relu(h, tp ? &tp->r2 : nullptr);
  }

  SeqTensor<S> backward(const nn::ParamStore<S>& P, const SeqTensor<S>& dy, const Tape& tp,
                        VecX<S>& grad) const {
    SeqTensor<S> dpre = nn::relu_backward(dy, tp.r2);
    dpre.data *= kResidualScale;
    SeqTensor<S> db = gn2_.backward(P, dpre, tp.n2, grad);
    db = conv2_.backward(P, db, tp.c2, grad);
    db = nn::relu_backward(db, tp.r1);
    db = gn1_.backward(P, db, tp.n1, grad);
    SeqTensor<S> dh0 = conv1_.backward(P, db, tp.c1, grad);
    SeqTensor<S> dx = dh0;
    dx.data = nn::temporal_shift_mat_adjoint<S>(dh0.data, dh0.T, dh0.plane(),
                                                nn::shift_channels<S>(dh0.C, fraction_));
    if (has_proj_) {
      SeqTensor<S> dskip = gnp_.backward(P, dpre, tp.nproj, grad);
      dx.data += proj_.backward(P, dskip, tp.proj, grad).data;
    } else {
      dx.data += dpre.data;
    }
    return dx;
  }

  static constexpr S kResidualScale = S(0.7071067811865476);

 private:
  double fraction_ = 0.125;
  bool has_proj_ = false;
  nn::Conv2d<S> conv1_, conv2_, proj_;
  nn::GroupNorm<S> gn1_, gn2_, gnp_;
};

// Temporal-shift residual feature extractor: stride-2 stem (optionally
// average-pooled), one residual block per stage, spatial global average pool
// per segment, then a linear map to the feature dimension.
template <typename S>
class Extractor {
 public:
  struct Tape {
    typename nn::Conv2d<S>::Cache stem;
    typename nn::GroupNorm<S>::Cache stem_gn;
    nn::ReluCache<S> stem_relu;
    int pool_hin = 0, pool_win = 0;
    std::vector<typename ResidualBlock<S>::Tape> stages;
    int gap_t = 0, gap_c = 0, gap_h = 0, gap_w = 0;
    typename nn::Linear<S>::Cache feat;
  };

  Extractor() = default;
  Extractor(nn::ParamStore<S>& P, const std::string& name, const ModelConfig& cfg, nn::ParamGroup g)
      : pool_(cfg.stem_pool),
        stem_(P, name + ".stem", 3, cfg.widths.front(), 3, 2, g),
        stem_gn_(P, name + ".stem_gn", cfg.widths.front(), g),
        feat_(P, name + ".feat", cfg.widths.back(), cfg.feature_dim, g) {
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
      int cin = i == 0 ? cfg.widths.front() : cfg.widths[i - 1];
      int stride = i == 0 ? 1 : 2;
      stages_.emplace_back(P, name + ".stage" + std::to_string(i), cin, cfg.widths[i], stride,
                           cfg.shift_fraction, g);
    }
  }

  // Returns the per-segment feature sequence (feature_dim, T).
  MatX<S> forward(const nn::ParamStore<S>& P, const SeqTensor<S>& x, Tape* tp) const {
    if (tp) tp->stages.resize(stages_.size());
    SeqTensor<S> h = stem_.forward(P, x, tp ? &tp->stem : nullptr);
    h = stem_gn_.forward(P, h, tp ? &tp->stem_gn : nullptr);
    h = nn::relu(h, tp ? &tp->stem_relu : nullptr);
    if (pool_) {
      if (tp) {
        tp->pool_hin = h.H;
        tp->pool_win = h.W;
      }
      h = nn::avgpool2(h);
    }
    for (std::size_t i = 0; i < stages_.size(); ++i)
      h = stages_[i].forward(P, h, tp ? &tp->stages[i] : nullptr);
    if (tp) {
      tp->gap_t = h.T;
      tp->gap_c = h.C;
      tp->gap_h = h.H;
      tp->gap_w = h.W;
    }
    MatX<S> pooled = nn::global_avgpool(h);
    return feat_.forward(P, pooled, tp ? &tp->feat : nullptr);
  }

  SeqTensor<S> backward(const nn::ParamStore<S>& P, const MatX<S>& dseq, const Tape& tp,
                        VecX<S>& grad) const {
    MatX<S> dpooled = feat_.backward(P, dseq, tp.feat, grad);
    SeqTensor<S> dh = nn::global_avgpool_backward(dpooled, tp.gap_t, tp.gap_c, tp.gap_h, tp.gap_w);
    for (std::size_t i = stages_.size(); i-- > 0;) dh = stages_[i].backward(P, dh, tp.stages[i], grad);
    if (pool_) dh = nn::avgpool2_backward(dh, tp.pool_hin, tp.pool_win);
    dh = nn::relu_backward(dh, tp.stem_relu);
    dh = stem_gn_.backward(P, dh, tp.stem_gn, grad);
    return stem_.backward(P, dh, tp.stem, grad);
  }

 private:
  bool pool_ = true;
  nn::Conv2d<S> stem_;
  nn::GroupNorm<S> stem_gn_;
  std::vector<ResidualBlock<S>> stages_;
  nn::Linear<S> feat_;
};

// Future motion predictor: concatenated feature sequences pass a temporal
// shift, a pointwise linear + relu, a temporal mean, and the class head.
template <typename S>
class Predictor {
 public:
  struct Tape {
    typename nn::Linear<S>::Cache l1, l2;
    nn::ReluCache<S> rl;
    int T = 0;
  };

  Predictor() = default;
  Predictor(nn::ParamStore<S>& P, const std::string& name, int din, int hidden, double fraction,
            nn::ParamGroup g)
      : din_(din), fraction_(fraction), l1_(P, name + ".fuse", din, hidden, g),
        l2_(P, name + ".cls", hidden, kNumClasses, g) {}

  VecX<S> forward(const nn::ParamStore<S>& P, const MatX<S>& seq, Tape* tp) const {
    if (static_cast<int>(seq.rows()) != din_) throw ConfigError("Predictor: feature dim mismatch");
    int T = static_cast<int>(seq.cols());
    MatX<S> h = nn::temporal_shift_mat<S>(seq, T, 1, nn::shift_channels<S>(din_, fraction_));
    h = l1_.forward(P, h, tp ? &tp->l1 : nullptr);
    SeqTensor<S> hs(T, static_cast<int>(h.rows()), 1, 1);
    hs.data = h;
    hs = nn::relu(hs, tp ? &tp->rl : nullptr);
    MatX<S> mean = hs.data.rowwise().sum() / static_cast<S>(T);
    if (tp) tp->T = T;
    return l2_.forward(P, mean, tp ? &tp->l2 : nullptr).col(0);
  }

  MatX<S> backward(const nn::ParamStore<S>& P, const VecX<S>& dlogits, const Tape& tp,
                   VecX<S>& grad) const {
    MatX<S> dmean = l2_.backward(P, dlogits, tp.l2, grad);
    MatX<S> dh = dmean.replicate(1, tp.T) / static_cast<S>(tp.T);
    SeqTensor<S> dhs(tp.T, static_cast<int>(dh.rows()), 1, 1);
    dhs.data = dh;
    dhs = nn::relu_backward(dhs, tp.rl);
    MatX<S> dseq = l1_.backward(P, dhs.data, tp.l1, grad);
    return nn::temporal_shift_mat_adjoint<S>(dseq, tp.T, 1, nn::shift_channels<S>(din_, fraction_));
  }

 private:
  int din_ = 0;
  double fraction_ = 0.125;
  nn::Linear<S> l1_, l2_;
};

template <typename S>
struct ModelForward {
  VecX<S> logits;            // 5 pre-softmax class scores
  VecX<S> s_pooled, m_pooled;  // temporal means tapped for the losses
  MatX<S> s_seq, m_seq;        // (feature_dim, T)
};

// The full dual-stream network; kind "single" drops the pre-decoupling and
// the motion stream and feeds the raw normalized clip to one extractor.
template <typename S>
class DmsdModel {
 public:
  struct Tape {
    typename PreDecouple<S>::Tape pre;
    typename Extractor<S>::Tape ext_s, ext_m;
    typename Predictor<S>::Tape head;
    int T = 0;
  };

  DmsdModel(const ModelConfig& cfg, int num_centers, double center_init_scale, std::uint64_t seed)
      : cfg_(cfg), dual_(cfg.kind == "dmsd") {
    if (dual_) pre_ = PreDecouple<S>(P_, cfg, nn::ParamGroup::backbone);
    ext_s_ = Extractor<S>(P_, "ext_s", cfg, nn::ParamGroup::backbone);
    if (dual_) ext_m_ = Extractor<S>(P_, "ext_m", cfg, nn::ParamGroup::backbone);
    int din = dual_ ? 2 * cfg.feature_dim : cfg.feature_dim;
    head_ = Predictor<S>(P_, "head", din, cfg.head_dim, cfg.shift_fraction, nn::ParamGroup::head);
    centers_ = P_.add("centers", cfg.feature_dim, kNumClasses * num_centers, nn::ParamGroup::centers,
                      nn::InitKind::scaled_normal, center_init_scale);
    num_centers_ = num_centers;
    P_.initialize(seed);
  }

  ModelForward<S> forward(const SeqTensor<S>& x, Tape* tp) const {
    if (x.T != cfg_.segments) throw ConfigError("DmsdModel: segment count mismatch");
    ModelForward<S> out;
    if (dual_) {
      DecoupledPair<S> uv = pre_.forward(P_, x, tp ? &tp->pre : nullptr);
      out.s_seq = ext_s_.forward(P_, uv.u, tp ? &tp->ext_s : nullptr);
      out.m_seq = ext_m_.forward(P_, uv.v, tp ? &tp->ext_m : nullptr);
      MatX<S> fused(out.s_seq.rows() + out.m_seq.rows(), out.s_seq.cols());
      fused.topRows(out.s_seq.rows()) = out.s_seq;
      fused.bottomRows(out.m_seq.rows()) = out.m_seq;
      out.logits = head_.forward(P_, fused, tp ? &tp->head : nullptr);
    } else {
      out.s_seq = ext_s_.forward(P_, x, tp ? &tp->ext_s : nullptr);
      out.m_seq = out.s_seq;
      out.logits = head_.forward(P_, out.s_seq, tp ? &tp->head : nullptr);
    }
    out.s_pooled = out.s_seq.rowwise().sum() / static_cast<S>(out.s_seq.cols());
    out.m_pooled = out.m_seq.rowwise().sum() / static_cast<S>(out.m_seq.cols());
    if (tp) tp->T = x.T;
    return out;
  }

  // Backward from (dlogits, ds_pooled, dm_pooled); any of them may be empty.
  // Accumulates parameter gradients into grad and returns dL/dx.
  SeqTensor<S> backward(const Tape& tp, const VecX<S>& dlogits, const VecX<S>& ds_pooled,
                        const VecX<S>& dm_pooled, VecX<S>& grad) const {
    int T = tp.T;
    int d = cfg_.feature_dim;
    MatX<S> ds_seq = MatX<S>::Zero(d, T);
    MatX<S> dm_seq = MatX<S>::Zero(d, T);
    if (dlogits.size() > 0) {
      MatX<S> dfused = head_.backward(P_, dlogits, tp.head, grad);
      if (dual_) {
        ds_seq += dfused.topRows(d);
        dm_seq += dfused.bottomRows(d);
      } else {
        ds_seq += dfused;
      }
    }
    if (ds_pooled.size() > 0) ds_seq += (ds_pooled / static_cast<S>(T)).replicate(1, T);
    if (dm_pooled.size() > 0) {
      if (dual_)
        dm_seq += (dm_pooled / static_cast<S>(T)).replicate(1, T);
      else
        ds_seq += (dm_pooled / static_cast<S>(T)).replicate(1, T);
    }
    if (dual_) {
      SeqTensor<S> du = ext_s_.backward(P_, ds_seq, tp.ext_s, grad);
      SeqTensor<S> dv = ext_m_.backward(P_, dm_seq, tp.ext_m, grad);
      return pre_.backward(P_, du, dv, tp.pre, grad);
    }
    return ext_s_.backward(P_, ds_seq, tp.ext_s, grad);
  }

  nn::ParamStore<S>& params() { return P_; }
  const nn::ParamStore<S>& params() const { return P_; }
  const ModelConfig& config() const { return cfg_; }
  bool dual() const { return dual_; }
  int centers_id() const { return centers_; }
  int num_centers() const { return num_centers_; }
  const PreDecouple<S>& pre_decouple() const { return pre_; }
  const Extractor<S>& scenario_extractor() const { return ext_s_; }
  const Extractor<S>& motion_extractor() const { return ext_m_; }

  // Architecture fingerprint for checkpoint compatibility checks.
  std::string signature() const {
    std::string s = cfg_.kind + ";seg=" + std::to_string(cfg_.segments) + ";in=" +
                    std::to_string(cfg_.input_size) + ";w=";
    for (std::size_t i = 0; i < cfg_.widths.size(); ++i)
      s += (i ? "," : "") + std::to_string(cfg_.widths[i]);
    s += ";d=" + std::to_string(cfg_.feature_dim) + ";h=" + std::to_string(cfg_.head_dim);
    s += ";e=" + std::to_string(cfg_.expand_factor) + ";k=" + std::to_string(num_centers_);
    s += ";pool=" + std::string(cfg_.stem_pool ? "1" : "0");
    char buf[32];
    std::snprintf(buf, sizeof(buf), ";sf=%.6f", cfg_.shift_fraction);
    s += buf;
    s += cfg_.reweight ? ";rw=1" : ";rw=0";
    return s;
  }

 private:
  ModelConfig cfg_;
  bool dual_ = true;
  nn::ParamStore<S> P_;
  PreDecouple<S> pre_;
  Extractor<S> ext_s_, ext_m_;
  Predictor<S> head_;
  int centers_ = -1;
  int num_centers_ = 4;
};

}  // namespace dmsd
