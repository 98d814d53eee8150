#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dmsd/core.hpp"

namespace dmsd::nn {

// Parameter groups driving the alternating-optimization partition.
enum class ParamGroup : int { backbone = 0, head = 1, centers = 2 };

enum class InitKind { zeros, ones, he_normal, small_normal, scaled_normal };

// All parameters of a model live in one flat vector; layers hold indices into
// the layout table. Optimizer steps, hashing, checkpointing and finite
// differences all operate on the flat storage.
template <typename S>
class ParamStore {
 public:
  struct Spec {
    std::string name;
    int rows = 0, cols = 0;
    std::size_t offset = 0;
    ParamGroup group = ParamGroup::backbone;
    InitKind init = InitKind::zeros;
    double init_arg = 0.0;  // fan-in for he_normal, std for scaled_normal
  };

  int add(const std::string& name, int rows, int cols, ParamGroup group, InitKind init,
          double init_arg = 0.0) {
    Spec sp;
    sp.name = name;
    sp.rows = rows;
    sp.cols = cols;
    sp.offset = total_;
    sp.group = group;
    sp.init = init;
    sp.init_arg = init_arg;
    total_ += static_cast<std::size_t>(rows) * cols;
    specs_.push_back(std::move(sp));
    return static_cast<int>(specs_.size()) - 1;
  }

  void initialize(std::uint64_t seed) {
    values_ = VecX<S>::Zero(static_cast<Eigen::Index>(total_));
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    for (const auto& sp : specs_) {
      auto v = view_spec(sp);
      switch (sp.init) {
        case InitKind::zeros: v.setZero(); break;
        case InitKind::ones: v.setOnes(); break;
        case InitKind::he_normal: {
          double stddev = std::sqrt(2.0 / std::max(1.0, sp.init_arg));
          for (Eigen::Index j = 0; j < v.cols(); ++j)
            for (Eigen::Index i = 0; i < v.rows(); ++i) v(i, j) = static_cast<S>(stddev * rng.normal());
          break;
        }
        case InitKind::small_normal:
        case InitKind::scaled_normal: {
          double stddev = sp.init == InitKind::small_normal ? 0.01 : sp.init_arg;
          for (Eigen::Index j = 0; j < v.cols(); ++j)
            for (Eigen::Index i = 0; i < v.rows(); ++i) v(i, j) = static_cast<S>(stddev * rng.normal());
          break;
        }
      }
    }
  }

  Eigen::Map<MatX<S>> view(int id) { return view_spec(specs_[static_cast<std::size_t>(id)]); }
  Eigen::Map<const MatX<S>> view(int id) const {
    const auto& sp = specs_[static_cast<std::size_t>(id)];
    return Eigen::Map<const MatX<S>>(values_.data() + sp.offset, sp.rows, sp.cols);
  }
  // Matching slice of an external flat vector (e.g. a gradient buffer).
  static Eigen::Map<MatX<S>> slice(VecX<S>& flat, const Spec& sp) {
    return Eigen::Map<MatX<S>>(flat.data() + sp.offset, sp.rows, sp.cols);
  }
  Eigen::Map<MatX<S>> slice_of(VecX<S>& flat, int id) const {
    return slice(flat, specs_[static_cast<std::size_t>(id)]);
  }

  const std::vector<Spec>& specs() const { return specs_; }
  const Spec& spec(int id) const { return specs_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return total_; }
  VecX<S>& values() { return values_; }
  const VecX<S>& values() const { return values_; }

  std::uint64_t hash_group(ParamGroup g) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& sp : specs_)
      if (sp.group == g)
        h = fnv1a(values_.data() + sp.offset, sizeof(S) * static_cast<std::size_t>(sp.rows) * sp.cols, h);
    return h;
  }

  template <typename F>
  void for_group(ParamGroup g, F&& f) const {
    for (const auto& sp : specs_)
      if (sp.group == g) f(sp);
  }

 private:
  Eigen::Map<MatX<S>> view_spec(const Spec& sp) {
    return Eigen::Map<MatX<S>>(values_.data() + sp.offset, sp.rows, sp.cols);
  }
  std::vector<Spec> specs_;
  VecX<S> values_;
  std::size_t total_ = 0;
};

// ---------------------------------------------------------------------------
// temporal shift: first n channels pull from t+1 (backward in time, last step
// zero-filled), next n channels pull from t-1 (first step zero-filled).
// plane is the number of columns per segment (H*W, or 1 for sequences).
// ---------------------------------------------------------------------------

template <typename S>
MatX<S> temporal_shift_mat(const MatX<S>& x, int T, int plane, int n_shift) {
  MatX<S> y = x;
  int c = static_cast<int>(x.rows());
  int n = std::min(n_shift, c / 2);
  if (n <= 0) return y;
  for (int t = 0; t < T; ++t) {
    auto dst = y.middleCols(static_cast<Eigen::Index>(t) * plane, plane);
    if (t + 1 < T)
      dst.topRows(n) = x.middleCols(static_cast<Eigen::Index>(t + 1) * plane, plane).topRows(n);
    else
      dst.topRows(n).setZero();
    if (t - 1 >= 0)
      dst.middleRows(n, n) = x.middleCols(static_cast<Eigen::Index>(t - 1) * plane, plane).middleRows(n, n);
    else
      dst.middleRows(n, n).setZero();
  }
  return y;
}

// Adjoint of temporal_shift_mat: the two channel groups move the opposite way.
template <typename S>
MatX<S> temporal_shift_mat_adjoint(const MatX<S>& dy, int T, int plane, int n_shift) {
  MatX<S> dx = dy;
  int c = static_cast<int>(dy.rows());
  int n = std::min(n_shift, c / 2);
  if (n <= 0) return dx;
  for (int t = 0; t < T; ++t) {
    auto dst = dx.middleCols(static_cast<Eigen::Index>(t) * plane, plane);
    if (t - 1 >= 0)
      dst.topRows(n) = dy.middleCols(static_cast<Eigen::Index>(t - 1) * plane, plane).topRows(n);
    else
      dst.topRows(n).setZero();
    if (t + 1 < T)
      dst.middleRows(n, n) = dy.middleCols(static_cast<Eigen::Index>(t + 1) * plane, plane).middleRows(n, n);
    else
      dst.middleRows(n, n).setZero();
  }
  return dx;
}

template <typename S>
int shift_channels(int channels, double fraction) {
  return static_cast<int>(std::floor(fraction * channels));
}

template <typename S>
SeqTensor<S> temporal_shift(const SeqTensor<S>& x, double fraction) {
  SeqTensor<S> y = x;
  y.data = temporal_shift_mat<S>(x.data, x.T, x.plane(), shift_channels<S>(x.C, fraction));
  return y;
}

// ---------------------------------------------------------------------------
// Conv2d over SeqTensor segments via im2col + GEMM.
// ---------------------------------------------------------------------------

template <typename S>
class Conv2d {
 public:
  struct Cache {
    SeqTensor<S> x;
    int Hout = 0, Wout = 0;
  };

  Conv2d() = default;
  Conv2d(ParamStore<S>& P, const std::string& name, int cin, int cout, int k, int stride,
         ParamGroup group, InitKind winit = InitKind::he_normal)
      : cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(k == 3 ? 1 : 0) {
    w_ = P.add(name + ".w", cout, cin * k * k, group, winit, static_cast<double>(cin) * k * k);
    b_ = P.add(name + ".b", cout, 1, group, InitKind::zeros);
  }

  int out_dim(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  SeqTensor<S> forward(const ParamStore<S>& P, const SeqTensor<S>& x, Cache* cache) const {
    if (x.C != cin_) throw ConfigError("Conv2d: channel mismatch");
    int Ho = out_dim(x.H), Wo = out_dim(x.W);
    SeqTensor<S> y(x.T, cout_, Ho, Wo);
    auto W = P.view(w_);
    auto b = P.view(b_);
    MatX<S> cols;
    for (int t = 0; t < x.T; ++t) {
      if (k_ == 1 && stride_ == 1) {
        y.segment(t).noalias() = W * x.segment(t);
      } else {
        im2col(x, t, cols);
        y.segment(t).noalias() = W * cols;
      }
      y.segment(t).colwise() += b.col(0);
    }
    if (cache) {
      cache->x = x;
      cache->Hout = Ho;
      cache->Wout = Wo;
    }
    return y;
  }

  SeqTensor<S> backward(const ParamStore<S>& P, const SeqTensor<S>& dy, const Cache& cache,
                        VecX<S>& grad) const {
    const SeqTensor<S>& x = cache.x;
    auto W = P.view(w_);
    auto dW = P.slice_of(grad, w_);
    auto db = P.slice_of(grad, b_);
    SeqTensor<S> dx(x.T, x.C, x.H, x.W);
    MatX<S> cols, dcols;
    for (int t = 0; t < x.T; ++t) {
      auto dyt = dy.segment(t);
      db.col(0) += dyt.rowwise().sum();
      if (k_ == 1 && stride_ == 1) {
        dW.noalias() += dyt * x.segment(t).transpose();
        dx.segment(t).noalias() = W.transpose() * dyt;
      } else {
        im2col(x, t, cols);
        dW.noalias() += dyt * cols.transpose();
        dcols.noalias() = W.transpose() * dyt;
        col2im(dcols, x, t, dx);
      }
    }
    return dx;
  }

  int weight_id() const { return w_; }
  int bias_id() const { return b_; }
  int cout() const { return cout_; }

 private:
  void im2col(const SeqTensor<S>& x, int t, MatX<S>& cols) const {
    int Ho = out_dim(x.H), Wo = out_dim(x.W);
    cols.resize(static_cast<Eigen::Index>(cin_) * k_ * k_, static_cast<Eigen::Index>(Ho) * Wo);
    auto seg = x.segment(t);
    for (int ky = 0; ky < k_; ++ky)
      for (int kx = 0; kx < k_; ++kx) {
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride_ + ky - pad_;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride_ + kx - pad_;
            Eigen::Index col = static_cast<Eigen::Index>(oy) * Wo + ox;
            Eigen::Index row0 = static_cast<Eigen::Index>(ky) * k_ + kx;
            if (iy < 0 || ix < 0 || iy >= x.H || ix >= x.W) {
              for (int c = 0; c < cin_; ++c) cols(static_cast<Eigen::Index>(c) * k_ * k_ + row0, col) = S(0);
            } else {
              Eigen::Index src = static_cast<Eigen::Index>(iy) * x.W + ix;
              for (int c = 0; c < cin_; ++c)
                cols(static_cast<Eigen::Index>(c) * k_ * k_ + row0, col) = seg(c, src);
            }
          }
        }
      }
  }

  void col2im(const MatX<S>& dcols, const SeqTensor<S>& x, int t, SeqTensor<S>& dx) const {
    int Ho = out_dim(x.H), Wo = out_dim(x.W);
    auto dseg = dx.segment(t);
    for (int ky = 0; ky < k_; ++ky)
      for (int kx = 0; kx < k_; ++kx) {
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride_ + ky - pad_;
          if (iy < 0 || iy >= x.H) continue;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride_ + kx - pad_;
            if (ix < 0 || ix >= x.W) continue;
            Eigen::Index col = static_cast<Eigen::Index>(oy) * Wo + ox;
            Eigen::Index row0 = static_cast<Eigen::Index>(ky) * k_ + kx;
            Eigen::Index dst = static_cast<Eigen::Index>(iy) * x.W + ix;
            for (int c = 0; c < cin_; ++c)
              dseg(c, dst) += dcols(static_cast<Eigen::Index>(c) * k_ * k_ + row0, col);
          }
        }
      }
  }

  int w_ = -1, b_ = -1;
  int cin_ = 0, cout_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
};

// Learnable per-channel scale (the shift blocks' feature reweighting).
template <typename S>
class ChannelScale {
 public:
  struct Cache {
    SeqTensor<S> x;
  };

  ChannelScale() = default;
  ChannelScale(ParamStore<S>& P, const std::string& name, int channels, ParamGroup group) {
    s_ = P.add(name + ".scale", channels, 1, group, InitKind::ones);
  }

  SeqTensor<S> forward(const ParamStore<S>& P, const SeqTensor<S>& x, Cache* cache) const {
    SeqTensor<S> y = x;
    auto sc = P.view(s_);
    y.data.array().colwise() *= sc.col(0).array();
    if (cache) cache->x = x;
    return y;
  }

  SeqTensor<S> backward(const ParamStore<S>& P, const SeqTensor<S>& dy, const Cache& cache,
                        VecX<S>& grad) const {
    auto sc = P.view(s_);
    auto dsc = P.slice_of(grad, s_);
    dsc.col(0) += (dy.data.array() * cache.x.data.array()).rowwise().sum().matrix();
    SeqTensor<S> dx = dy;
    dx.data.array().colwise() *= sc.col(0).array();
    return dx;
  }

 private:
  int s_ = -1;
};

template <typename S>
struct ReluCache {
  MatX<S> mask;  // 1 where the input was positive
};

template <typename S>
SeqTensor<S> relu(const SeqTensor<S>& x, ReluCache<S>* cache) {
  SeqTensor<S> y = x;
  y.data = x.data.cwiseMax(S(0));
  if (cache) cache->mask = (x.data.array() > S(0)).template cast<S>().matrix();
  return y;
}

template <typename S>
SeqTensor<S> relu_backward(const SeqTensor<S>& dy, const ReluCache<S>& cache) {
  SeqTensor<S> dx = dy;
  dx.data.array() *= cache.mask.array();
  return dx;
}

// 2x2 average pool, stride 2 (trailing odd row/column dropped).
template <typename S>
SeqTensor<S> avgpool2(const SeqTensor<S>& x) {
  int Ho = x.H / 2, Wo = x.W / 2;
  SeqTensor<S> y(x.T, x.C, Ho, Wo);
  for (int t = 0; t < x.T; ++t) {
    auto seg = x.segment(t);
    auto out = y.segment(t);
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        Eigen::Index p00 = static_cast<Eigen::Index>(2 * oy) * x.W + 2 * ox;
        Eigen::Index p01 = p00 + 1;
        Eigen::Index p10 = p00 + x.W;
        Eigen::Index p11 = p10 + 1;
        out.col(static_cast<Eigen::Index>(oy) * Wo + ox) =
            (seg.col(p00) + seg.col(p01) + seg.col(p10) + seg.col(p11)) * S(0.25);
      }
  }
  return y;
}

template <typename S>
SeqTensor<S> avgpool2_backward(const SeqTensor<S>& dy, int Hin, int Win) {
  SeqTensor<S> dx(dy.T, dy.C, Hin, Win);
  for (int t = 0; t < dy.T; ++t) {
    auto dseg = dy.segment(t);
    auto out = dx.segment(t);
    for (int oy = 0; oy < dy.H; ++oy)
      for (int ox = 0; ox < dy.W; ++ox) {
        auto g = dseg.col(static_cast<Eigen::Index>(oy) * dy.W + ox) * S(0.25);
        Eigen::Index p00 = static_cast<Eigen::Index>(2 * oy) * Win + 2 * ox;
        out.col(p00) += g;
        out.col(p00 + 1) += g;
        out.col(p00 + Win) += g;
        out.col(p00 + Win + 1) += g;
      }
  }
  return dx;
}

// Spatial global average pool per segment: SeqTensor -> (C, T).
template <typename S>
MatX<S> global_avgpool(const SeqTensor<S>& x) {
  MatX<S> out(x.C, x.T);
  S inv = S(1) / static_cast<S>(x.plane());
  for (int t = 0; t < x.T; ++t) out.col(t) = x.segment(t).rowwise().sum() * inv;
  return out;
}

template <typename S>
SeqTensor<S> global_avgpool_backward(const MatX<S>& dout, int T, int C, int H, int W) {
  SeqTensor<S> dx(T, C, H, W);
  S inv = S(1) / static_cast<S>(H * W);
  for (int t = 0; t < T; ++t) dx.segment(t) = (dout.col(t) * inv).replicate(1, H * W);
  return dx;
}

// Group normalization over (group channels x plane), per segment, with a
// per-channel affine. Per-sample statistics keep clips independent, standing
// in for the reference backbone's batch normalization.
template <typename S>
class GroupNorm {
 public:
  struct Cache {
    SeqTensor<S> xhat;
    MatX<S> inv_std;  // (groups, T)
  };

  GroupNorm() = default;
  GroupNorm(ParamStore<S>& P, const std::string& name, int channels, ParamGroup g, int groups = 0)
      : channels_(channels), groups_(groups > 0 ? groups : std::min(8, channels)) {
    while (channels_ % groups_ != 0) --groups_;
    gamma_ = P.add(name + ".gamma", channels, 1, g, InitKind::ones);
    beta_ = P.add(name + ".beta", channels, 1, g, InitKind::zeros);
  }

  SeqTensor<S> forward(const ParamStore<S>& P, const SeqTensor<S>& x, Cache* cache) const {
    const int gc = channels_ / groups_;
    const Eigen::Index plane = x.plane();
    SeqTensor<S> y(x.T, x.C, x.H, x.W);
    if (cache) {
      cache->xhat = SeqTensor<S>(x.T, x.C, x.H, x.W);
      cache->inv_std.resize(groups_, x.T);
    }
    auto gamma = P.view(gamma_);
    auto beta = P.view(beta_);
    const S n = static_cast<S>(gc * plane);
    for (int t = 0; t < x.T; ++t)
      for (int g = 0; g < groups_; ++g) {
        auto blk = x.data.block(static_cast<Eigen::Index>(g) * gc, static_cast<Eigen::Index>(t) * plane,
                                gc, plane);
        S mu = blk.sum() / n;
        S var = (blk.array() - mu).matrix().squaredNorm() / n;
        S inv = S(1) / std::sqrt(var + S(kEps));
        auto out = y.data.block(static_cast<Eigen::Index>(g) * gc,
                                static_cast<Eigen::Index>(t) * plane, gc, plane);
        out = (blk.array() - mu).matrix() * inv;
        if (cache) {
          cache->xhat.data.block(static_cast<Eigen::Index>(g) * gc,
                                 static_cast<Eigen::Index>(t) * plane, gc, plane) = out;
          cache->inv_std(g, t) = inv;
        }
        for (int c = 0; c < gc; ++c) {
          int ch = g * gc + c;
          out.row(c) = out.row(c) * gamma(ch, 0);
          out.row(c).array() += beta(ch, 0);
        }
      }
    return y;
  }

  SeqTensor<S> backward(const ParamStore<S>& P, const SeqTensor<S>& dy, const Cache& cache,
                        VecX<S>& grad) const {
    const int gc = channels_ / groups_;
    const Eigen::Index plane = dy.plane();
    auto gamma = P.view(gamma_);
    auto dgamma = P.slice_of(grad, gamma_);
    auto dbeta = P.slice_of(grad, beta_);
    SeqTensor<S> dx(dy.T, dy.C, dy.H, dy.W);
    const S n = static_cast<S>(gc * plane);
    for (int t = 0; t < dy.T; ++t)
      for (int g = 0; g < groups_; ++g) {
        auto dyb = dy.data.block(static_cast<Eigen::Index>(g) * gc,
                                 static_cast<Eigen::Index>(t) * plane, gc, plane);
        auto xh = cache.xhat.data.block(static_cast<Eigen::Index>(g) * gc,
                                        static_cast<Eigen::Index>(t) * plane, gc, plane);
        MatX<S> dxhat(gc, plane);
        for (int c = 0; c < gc; ++c) {
          int ch = g * gc + c;
          dgamma(ch, 0) += (dyb.row(c).array() * xh.row(c).array()).sum();
          dbeta(ch, 0) += dyb.row(c).sum();
          dxhat.row(c) = dyb.row(c) * gamma(ch, 0);
        }
        S mean_dxhat = dxhat.sum() / n;
        S mean_dxhat_xhat = (dxhat.array() * xh.array()).sum() / n;
        auto out = dx.data.block(static_cast<Eigen::Index>(g) * gc,
                                 static_cast<Eigen::Index>(t) * plane, gc, plane);
        out = ((dxhat.array() - mean_dxhat) - xh.array() * mean_dxhat_xhat).matrix() *
              cache.inv_std(g, t);
      }
    return dx;
  }

  static constexpr double kEps = 1e-5;

 private:
  int channels_ = 0, groups_ = 1;
  int gamma_ = -1, beta_ = -1;
};

// Dense map applied per column of a (din, n) matrix.
template <typename S>
class Linear {
 public:
  struct Cache {
    MatX<S> x;
  };

  Linear() = default;
  Linear(ParamStore<S>& P, const std::string& name, int din, int dout, ParamGroup group,
         InitKind winit = InitKind::he_normal) {
    double arg = winit == InitKind::he_normal ? static_cast<double>(din) : 0.01;
    w_ = P.add(name + ".w", dout, din, group, winit, arg);
    b_ = P.add(name + ".b", dout, 1, group, InitKind::zeros);
  }

  MatX<S> forward(const ParamStore<S>& P, const MatX<S>& x, Cache* cache) const {
    MatX<S> y = P.view(w_) * x;
    y.colwise() += P.view(b_).col(0);
    if (cache) cache->x = x;
    return y;
  }

  MatX<S> backward(const ParamStore<S>& P, const MatX<S>& dy, const Cache& cache, VecX<S>& grad) const {
    P.slice_of(grad, w_).noalias() += dy * cache.x.transpose();
    P.slice_of(grad, b_).col(0) += dy.rowwise().sum();
    return P.view(w_).transpose() * dy;
  }

 private:
  int w_ = -1, b_ = -1;
};

}  // namespace dmsd::nn
