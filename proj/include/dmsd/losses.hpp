#pragma once

#include <string>
#include <vector>

#include "dmsd/config.hpp"
#include "dmsd/core.hpp"

namespace dmsd {

// Trainable per-class representation centers; column c*K + k holds center k
// of class c.
template <typename S>
struct ClusterBank {
  int K = 4;
  MatX<S> centers;  // (feature_dim, 5*K)

  static ClusterBank make(int feature_dim, int K, double init_scale, std::uint64_t seed) {
    ClusterBank b;
    b.K = K;
    b.centers.resize(feature_dim, kNumClasses * K);
    Rng rng(seed ^ 0xc105732ULL);
    for (Eigen::Index j = 0; j < b.centers.cols(); ++j)
      for (Eigen::Index i = 0; i < b.centers.rows(); ++i)
        b.centers(i, j) = static_cast<S>(init_scale * rng.normal());
    return b;
  }
};

struct ClipMeta {
  std::string scenario_id;
  std::string session_id;
  int label = 0;
};

inline bool same_group(const ClipMeta& a, const ClipMeta& b) {
  return a.scenario_id == b.scenario_id && a.session_id == b.session_id;
}

template <typename S>
struct ScLossResult {
  S loss = S(0);
  MatX<S> dS;  // same shape as the input feature batch
  int anchors_used = 0;
};

// In-batch contrastive loss over scenario features. Positives share
// (scenario, session); the denominator runs over negatives only unless
// include_positive is set. One positive per anchor, rotated by rr_offset.
template <typename S>
ScLossResult<S> scenario_contrast_loss(const Eigen::Ref<const MatX<S>>& feats,
                                       const std::vector<ClipMeta>& meta, S temperature = S(1),
                                       bool include_positive = false, int rr_offset = 0) {
  const int B = static_cast<int>(feats.cols());
  if (static_cast<int>(meta.size()) != B)
    throw ConfigError("scenario_contrast_loss: meta size mismatch");
  if (!(temperature > S(0))) throw ConfigError("scenario_contrast_loss: temperature must be > 0");

  // Unit-normalized columns; cosine similarity is their Gram matrix.
  MatX<S> unit(feats.rows(), B);
  VecX<S> norms(B);
  for (int i = 0; i < B; ++i) {
    S n = feats.col(i).norm();
    norms(i) = n;
    if (n < S(1e-20)) throw NumericError("scenario_contrast_loss: zero-norm feature");
    unit.col(i) = feats.col(i) / n;
  }
  MatX<S> sim = unit.transpose() * unit;

  ScLossResult<S> out;
  out.dS = MatX<S>::Zero(feats.rows(), B);
  MatX<S> dsim = MatX<S>::Zero(B, B);
  S total = S(0);
  int used = 0;

  for (int i = 0; i < B; ++i) {
    std::vector<int> pos, neg;
    for (int j = 0; j < B; ++j) {
      if (j == i) continue;
      if (same_group(meta[i], meta[j]))
        pos.push_back(j);
      else
        neg.push_back(j);
    }
    if (pos.empty())
      throw ConfigError("scenario_contrast_loss: anchor " + std::to_string(i) +
                        " has no positive sample in the batch");
    if (neg.empty()) continue;  // degenerate anchor, skipped
    int p = pos[static_cast<std::size_t>(rr_offset) % pos.size()];

    std::vector<int> denom = neg;
    if (include_positive) denom.push_back(p);
    S mx = sim(denom[0], i);
    for (int j : denom) mx = std::max(mx, sim(j, i));
    S z = S(0);
    for (int j : denom) z += std::exp((sim(j, i) - mx) / temperature);
    S lse = mx / temperature + std::log(z);
    total += -sim(p, i) / temperature + lse;
    ++used;

    dsim(p, i) += S(-1) / temperature;
    for (int j : denom) {
      S w = std::exp((sim(j, i) - mx) / temperature) / z;
      dsim(j, i) += w / temperature;
    }
  }
  if (used == 0)
    throw ConfigError("scenario_contrast_loss: every anchor lacked a negative sample");
  out.loss = total / static_cast<S>(used);
  out.anchors_used = used;

  // d sim(j,i)/d s_i = (unit_j - sim*unit_i)/||s_i||, symmetric in the pair.
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < B; ++j) {
      S g = dsim(j, i);
      if (g == S(0)) continue;
      g /= static_cast<S>(used);
      out.dS.col(i) += g * (unit.col(j) - sim(j, i) * unit.col(i)) / norms(i);
      out.dS.col(j) += g * (unit.col(i) - sim(j, i) * unit.col(j)) / norms(j);
    }
  return out;
}

// Minimum L2 distance from a motion feature to the class's centers.
template <typename S>
S nearest_center_distance(const Eigen::Ref<const VecX<S>>& m, int cls,
                          const Eigen::Ref<const MatX<S>>& centers, int K, int* argmin = nullptr) {
  if (cls < 0 || cls >= kNumClasses) throw std::invalid_argument("nearest_center_distance: bad class");
  S best = std::numeric_limits<S>::max();
  int best_k = 0;
  for (int k = 0; k < K; ++k) {
    S d = (m - centers.col(static_cast<Eigen::Index>(cls) * K + k)).norm();
    if (d < best) {
      best = d;
      best_k = k;
    }
  }
  if (argmin) *argmin = best_k;
  return best;
}

template <typename S>
struct McLossResult {
  S loss = S(0);
  MatX<S> dM;
  MatX<S> dCenters;
};

// Cross-entropy over softmax of negative nearest-center distances. Ties in
// the min route their subgradient to the first attaining center.
template <typename S>
McLossResult<S> motion_clustering_loss(const Eigen::Ref<const MatX<S>>& feats, const std::vector<int>& z,
                                       const Eigen::Ref<const MatX<S>>& centers, int K) {
  const int B = static_cast<int>(feats.cols());
  if (static_cast<int>(z.size()) != B) throw ConfigError("motion_clustering_loss: label size mismatch");
  McLossResult<S> out;
  out.dM = MatX<S>::Zero(feats.rows(), B);
  out.dCenters = MatX<S>::Zero(centers.rows(), centers.cols());
  S total = S(0);
  for (int i = 0; i < B; ++i) {
    if (z[i] < 0 || z[i] >= kNumClasses) throw std::invalid_argument("motion_clustering_loss: bad label");
    VecX<S> dist(kNumClasses);
    std::vector<int> arg(kNumClasses);
    for (int c = 0; c < kNumClasses; ++c)
      dist(c) = nearest_center_distance<S>(feats.col(i), c, centers, K, &arg[c]);
    VecX<S> a = -dist;
    S mx = a.maxCoeff();
    VecX<S> e = (a.array() - mx).exp();
    S zsum = e.sum();
    VecX<S> p = e / zsum;
    total += -(a(z[i]) - mx - std::log(zsum));
    for (int c = 0; c < kNumClasses; ++c) {
      // dL/dD_c = 1[c=z] - p_c, through D_c = ||m - r*||.
      S gD = (c == z[i] ? S(1) : S(0)) - p(c);
      if (dist(c) > S(1e-12)) {
        VecX<S> dir = (feats.col(i) - centers.col(static_cast<Eigen::Index>(c) * K + arg[c])) / dist(c);
        out.dM.col(i) += gD / static_cast<S>(B) * dir;
        out.dCenters.col(static_cast<Eigen::Index>(c) * K + arg[c]) -= gD / static_cast<S>(B) * dir;
      }
    }
  }
  out.loss = total / static_cast<S>(B);
  return out;
}

template <typename S>
struct ClsLossResult {
  S loss = S(0);
  MatX<S> dLogits;
};

// Mean softmax cross-entropy over a (5, B) logit batch.
template <typename S>
ClsLossResult<S> classification_loss(const Eigen::Ref<const MatX<S>>& logits, const std::vector<int>& z) {
  const int B = static_cast<int>(logits.cols());
  if (static_cast<int>(z.size()) != B) throw ConfigError("classification_loss: label size mismatch");
  ClsLossResult<S> out;
  out.dLogits = MatX<S>::Zero(logits.rows(), B);
  S total = S(0);
  for (int i = 0; i < B; ++i) {
    VecX<S> col = logits.col(i);
    S mx = col.maxCoeff();
    VecX<S> e = (col.array() - mx).exp();
    S zsum = e.sum();
    total += -(col(z[i]) - mx - std::log(zsum));
    out.dLogits.col(i) = e / zsum / static_cast<S>(B);
    out.dLogits(z[i], i) -= S(1) / static_cast<S>(B);
  }
  out.loss = total / static_cast<S>(B);
  return out;
}

template <typename S>
struct FeatLossResult {
  S loss = S(0), l_sc = S(0), l_mc = S(0);
  MatX<S> dS, dM, dCenters;
  int sc_anchors = 0;
};

// L_f = lambda_s * L_sc + lambda_m * L_mc; disabled or zero-weighted terms
// are skipped entirely.
template <typename S>
FeatLossResult<S> feature_decoupling_loss(const Eigen::Ref<const MatX<S>>& s_feats,
                                          const Eigen::Ref<const MatX<S>>& m_feats,
                                          const std::vector<ClipMeta>& meta,
                                          const Eigen::Ref<const MatX<S>>& centers, int K,
                                          const LossConfig& cfg, int rr_offset = 0) {
  FeatLossResult<S> out;
  out.dS = MatX<S>::Zero(s_feats.rows(), s_feats.cols());
  out.dM = MatX<S>::Zero(m_feats.rows(), m_feats.cols());
  out.dCenters = MatX<S>::Zero(centers.rows(), centers.cols());
  const S ls = static_cast<S>(cfg.lambda_s), lm = static_cast<S>(cfg.lambda_m);
  if (cfg.use_sc && cfg.lambda_s != 0.0) {
    auto sc = scenario_contrast_loss<S>(s_feats, meta, static_cast<S>(cfg.temperature),
                                        cfg.include_positive_in_denominator, rr_offset);
    out.l_sc = sc.loss;
    out.dS = ls * sc.dS;
    out.sc_anchors = sc.anchors_used;
  }
  if (cfg.use_mc && cfg.lambda_m != 0.0) {
    std::vector<int> z(meta.size());
    for (std::size_t i = 0; i < meta.size(); ++i) z[i] = meta[i].label;
    auto mc = motion_clustering_loss<S>(m_feats, z, centers, K);
    out.l_mc = mc.loss;
    out.dM = lm * mc.dM;
    out.dCenters = lm * mc.dCenters;
  }
  out.loss = ls * out.l_sc + lm * out.l_mc;
  return out;
}

}  // namespace dmsd
