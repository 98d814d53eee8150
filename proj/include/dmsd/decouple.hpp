#pragma once

#include "dmsd/config.hpp"
#include "dmsd/nn.hpp"

namespace dmsd {

// Frozen per-channel normalization used when building clip tensors; the
// frame-difference stream has its own constants.
template <typename S>
struct NormStats {
  Eigen::Matrix<S, 3, 1> x_mean, x_std, dx_mean, dx_std;

  static NormStats from(const ModelConfig& cfg) {
    NormStats ns;
    for (int c = 0; c < 3; ++c) {
      ns.x_mean(c) = static_cast<S>(cfg.norm_x_mean[c]);
      ns.x_std(c) = static_cast<S>(cfg.norm_x_std[c]);
      ns.dx_mean(c) = static_cast<S>(cfg.norm_dx_mean[c]);
      ns.dx_std(c) = static_cast<S>(cfg.norm_dx_std[c]);
    }
    return ns;
  }
};

// The raw-scale difference I_t - I_0 re-expressed through the normalized clip:
// raw_t - raw_0 = x_std .* (x_t - x_0), then normalized with the dx constants.
// The t = 0 slice is exactly zero on the raw scale by construction.
template <typename S>
SeqTensor<S> frame_difference(const SeqTensor<S>& x, const NormStats<S>& ns) {
  SeqTensor<S> dxn(x.T, x.C, x.H, x.W);
  for (int c = 0; c < x.C; ++c) {
    S k = ns.x_std(c) / ns.dx_std(c);
    S off = ns.dx_mean(c) / ns.dx_std(c);
    auto x0 = x.data.row(c).head(x.plane());
    for (int t = 0; t < x.T; ++t) {
      auto dst = dxn.data.row(c).segment(static_cast<Eigen::Index>(t) * x.plane(), x.plane());
      if (t == 0) {
        dst.setConstant(-off);
      } else {
        dst = (x.data.row(c).segment(static_cast<Eigen::Index>(t) * x.plane(), x.plane()) - x0) * k;
        dst.array() -= off;
      }
    }
  }
  return dxn;
}

template <typename S>
SeqTensor<S> frame_difference_backward(const SeqTensor<S>& d_dxn, const NormStats<S>& ns) {
  SeqTensor<S> dx(d_dxn.T, d_dxn.C, d_dxn.H, d_dxn.W);
  for (int c = 0; c < d_dxn.C; ++c) {
    S k = ns.x_std(c) / ns.dx_std(c);
    auto dx0 = dx.data.row(c).head(d_dxn.plane());
    for (int t = 1; t < d_dxn.T; ++t) {
      auto g = d_dxn.data.row(c).segment(static_cast<Eigen::Index>(t) * d_dxn.plane(), d_dxn.plane()) * k;
      dx.data.row(c).segment(static_cast<Eigen::Index>(t) * d_dxn.plane(), d_dxn.plane()) = g;
      dx0 -= g;
    }
  }
  return dx;
}

// temporal shift -> learnable channel reweight -> 3x3 conv -> relu
template <typename S>
class ShiftBlock {
 public:
  struct Tape {
    typename nn::ChannelScale<S>::Cache sc;
    typename nn::Conv2d<S>::Cache cv;
    nn::ReluCache<S> rl;
  };

  ShiftBlock() = default;
  ShiftBlock(nn::ParamStore<S>& P, const std::string& name, int channels, double fraction, bool reweight,
             nn::ParamGroup g)
      : fraction_(fraction),
        reweight_(reweight),
        scale_(P, name, channels, g),
        conv_(P, name + ".conv", channels, channels, 3, 1, g) {}

  SeqTensor<S> forward(const nn::ParamStore<S>& P, const SeqTensor<S>& x, Tape* tp) const {
    SeqTensor<S> h = nn::temporal_shift(x, fraction_);
    if (reweight_) h = scale_.forward(P, h, tp ? &tp->sc : nullptr);
    h = conv_.forward(P, h, tp ? &tp->cv : nullptr);
    return nn::relu(h, tp ? &tp->rl : nullptr);
  }

  SeqTensor<S> backward(const nn::ParamStore<S>& P, const SeqTensor<S>& dy, const Tape& tp,
                        VecX<S>& grad) const {
    SeqTensor<S> dh = nn::relu_backward(dy, tp.rl);
    dh = conv_.backward(P, dh, tp.cv, grad);
    if (reweight_) dh = scale_.backward(P, dh, tp.sc, grad);
    dh.data = nn::temporal_shift_mat_adjoint<S>(dh.data, dh.T, dh.plane(),
                                                nn::shift_channels<S>(dh.C, fraction_));
    return dh;
  }

 private:
  double fraction_ = 0.125;
  bool reweight_ = true;
  nn::ChannelScale<S> scale_;
  nn::Conv2d<S> conv_;
};

// MRM / SRM: 1x1 expand, two shift blocks, 1x1 reduce back to the input
// channel count. The reduce conv starts at zero so the residual subtraction
// is the identity at initialization.
template <typename S>
class RemovalModule {
 public:
  struct Tape {
    typename nn::Conv2d<S>::Cache expand;
    typename ShiftBlock<S>::Tape b1, b2;
    typename nn::Conv2d<S>::Cache reduce;
  };

  RemovalModule() = default;
  RemovalModule(nn::ParamStore<S>& P, const std::string& name, const ModelConfig& cfg, nn::ParamGroup g)
      : expand_(P, name + ".expand", 3, 3 * cfg.expand_factor, 1, 1, g),
        b1_(P, name + ".block1", 3 * cfg.expand_factor, cfg.shift_fraction, cfg.reweight, g),
        b2_(P, name + ".block2", 3 * cfg.expand_factor, cfg.shift_fraction, cfg.reweight, g),
        reduce_(P, name + ".reduce", 3 * cfg.expand_factor, 3, 1, 1, g, nn::InitKind::zeros) {}

  SeqTensor<S> forward(const nn::ParamStore<S>& P, const SeqTensor<S>& x, Tape* tp) const {
    SeqTensor<S> h = expand_.forward(P, x, tp ? &tp->expand : nullptr);
    h = b1_.forward(P, h, tp ? &tp->b1 : nullptr);
    h = b2_.forward(P, h, tp ? &tp->b2 : nullptr);
    return reduce_.forward(P, h, tp ? &tp->reduce : nullptr);
  }

  SeqTensor<S> backward(const nn::ParamStore<S>& P, const SeqTensor<S>& dy, const Tape& tp,
                        VecX<S>& grad) const {
    SeqTensor<S> dh = reduce_.backward(P, dy, tp.reduce, grad);
    dh = b2_.backward(P, dh, tp.b2, grad);
    dh = b1_.backward(P, dh, tp.b1, grad);
    return expand_.backward(P, dh, tp.expand, grad);
  }

 private:
  nn::Conv2d<S> expand_;
  ShiftBlock<S> b1_, b2_;
  nn::Conv2d<S> reduce_;
};

template <typename S>
struct DecoupledPair {
  SeqTensor<S> u;  // scenario-relative term, x - mrm(frame_difference(x))
  SeqTensor<S> v;  // motion-relative term, x - srm(x)
};

template <typename S>
class PreDecouple {
 public:
  struct Tape {
    typename RemovalModule<S>::Tape mrm, srm;
  };

  PreDecouple() = default;
  PreDecouple(nn::ParamStore<S>& P, const ModelConfig& cfg, nn::ParamGroup g)
      : mrm_(P, "mrm", cfg, g), srm_(P, "srm", cfg, g), ns_(NormStats<S>::from(cfg)) {}

  DecoupledPair<S> forward(const nn::ParamStore<S>& P, const SeqTensor<S>& x, Tape* tp) const {
    DecoupledPair<S> out;
    SeqTensor<S> dxn = frame_difference(x, ns_);
    SeqTensor<S> phi = mrm_.forward(P, dxn, tp ? &tp->mrm : nullptr);
    SeqTensor<S> psi = srm_.forward(P, x, tp ? &tp->srm : nullptr);
    out.u = x;
    out.u.data -= phi.data;
    out.v = x;
    out.v.data -= psi.data;
    return out;
  }

  // Returns dL/dx given the gradients flowing into u and v.
  SeqTensor<S> backward(const nn::ParamStore<S>& P, const SeqTensor<S>& du, const SeqTensor<S>& dv,
                        const Tape& tp, VecX<S>& grad) const {
    SeqTensor<S> dx = du;
    dx.data += dv.data;
    SeqTensor<S> neg_du = du;
    neg_du.data = -du.data;
    SeqTensor<S> d_dxn = mrm_.backward(P, neg_du, tp.mrm, grad);
    dx.data += frame_difference_backward(d_dxn, ns_).data;
    SeqTensor<S> neg_dv = dv;
    neg_dv.data = -dv.data;
    dx.data += srm_.backward(P, neg_dv, tp.srm, grad).data;
    return dx;
  }

  const RemovalModule<S>& mrm() const { return mrm_; }
  const RemovalModule<S>& srm() const { return srm_; }
  const NormStats<S>& norm_stats() const { return ns_; }

 private:
  RemovalModule<S> mrm_;
  RemovalModule<S> srm_;
  NormStats<S> ns_;
};

}  // namespace dmsd
