#pragma once

#include "mism/ops.hpp"
#include "mism/random.hpp"
#include "mism/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace mism {

enum class Variant { tiny, small, resnet_like, hrnet_like };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::tiny: return "tiny";
    case Variant::small: return "small";
    case Variant::resnet_like: return "resnet-like";
    case Variant::hrnet_like: return "hrnet-like";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "tiny") return Variant::tiny;
  if (s == "small") return Variant::small;
  if (s == "resnet-like" || s == "resnet_like") return Variant::resnet_like;
  if (s == "hrnet-like" || s == "hrnet_like") return Variant::hrnet_like;
  fail("unknown network variant: " + s);
}

struct NetworkConfig {
  int encoder_width = 8;
  int encoder_depth = 4;
  int num_scales = 1;        // S
  int feature_channels = 32; // C
  Variant variant = Variant::tiny;

  static NetworkConfig for_variant(Variant v) {
    NetworkConfig c;
    c.variant = v;
    switch (v) {
      case Variant::tiny:        c.encoder_width = 8;  c.num_scales = 1; break;
      case Variant::small:       c.encoder_width = 12; c.num_scales = 2; break;
      case Variant::resnet_like: c.encoder_width = 16; c.num_scales = 4; break;
      case Variant::hrnet_like:  c.encoder_width = 16; c.num_scales = 1; break;
    }
    return c;
  }

  void validate() const {
    MISM_CHECK(encoder_width > 0 && encoder_depth >= 2 && encoder_depth <= 5,
               "NetworkConfig: bad encoder size");
    MISM_CHECK(num_scales >= 1 && num_scales <= 4, "NetworkConfig: S must be in [1,4]");
    MISM_CHECK(feature_channels > 0, "NetworkConfig: bad feature channels");
  }
};

/// Ordered named-parameter list shared by the optimizer and checkpointing.
template <typename S>
struct ParamRegistry {
  std::vector<std::pair<std::string, Tensor<S>>> items;

  void add(const std::string& name, const Tensor<S>& t) { items.emplace_back(name, t); }
  Index total_params() const {
    Index n = 0;
    for (const auto& [k, t] : items) n += t.numel();
    return n;
  }
};

namespace nninit {

template <typename S>
Tensor<S> he_normal(Rng& rng, Shape shape, Index fan_in) {
  Vec<S> v(shape.numel());
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<S>(rng.normal() * std);
  auto t = Tensor<S>::from(shape, std::move(v));
  t.set_requires_grad(true);
  return t;
}

template <typename S>
Tensor<S> zeros_param(Shape shape) {
  auto t = Tensor<S>::zeros(shape);
  t.set_requires_grad(true);
  return t;
}

}  // namespace nninit

template <typename S>
struct Conv2dLayer {
  Tensor<S> weight;  // (Cout,Cin,k,k)
  Tensor<S> bias;    // (Cout)
  Index stride = 1, pad = 0;

  static Conv2dLayer make(Rng& rng, Index cin, Index cout, Index k, Index stride, Index pad,
                          bool zero_init = false) {
    Conv2dLayer l;
    l.weight = zero_init ? nninit::zeros_param<S>(Shape{cout, cin, k, k})
                         : nninit::he_normal<S>(rng, Shape{cout, cin, k, k}, cin * k * k);
    l.bias = nninit::zeros_param<S>(Shape{cout});
    l.stride = stride;
    l.pad = pad;
    return l;
  }
  Tensor<S> operator()(const Tensor<S>& x) const { return conv2d(x, weight, bias, stride, pad); }
  void register_params(ParamRegistry<S>& r, const std::string& p) const {
    r.add(p + ".weight", weight);
    r.add(p + ".bias", bias);
  }
};

template <typename S>
struct Conv3dLayer {
  Tensor<S> weight;  // (Cout, Cin*k^3)
  Tensor<S> bias;    // (Cout)
  Index k = 3, stride = 1, pad = 1;

  static Conv3dLayer make(Rng& rng, Index cin, Index cout, Index k, Index stride, Index pad) {
    Conv3dLayer l;
    l.weight = nninit::he_normal<S>(rng, Shape{cout, cin * k * k * k}, cin * k * k * k);
    l.bias = nninit::zeros_param<S>(Shape{cout});
    l.k = k;
    l.stride = stride;
    l.pad = pad;
    return l;
  }
  Tensor<S> operator()(const Tensor<S>& x) const {
    return conv3d(x, weight, bias, k, stride, pad);
  }
  void register_params(ParamRegistry<S>& r, const std::string& p) const {
    r.add(p + ".weight", weight);
    r.add(p + ".bias", bias);
  }
};

/// Sigmoid disparity to metric depth over [0.1, 100] m.
template <typename S>
Tensor<S> disparity_to_depth(const Tensor<S>& sigma) {
  const S inv_min = S(1) / S(100);     // 1/d_max
  const S inv_max = S(1) / S(0.1);     // 1/d_min
  return S(1) / (sigma * (inv_max - inv_min) + inv_min);
}

// ---------------------------------------------------------------------------
// S-DepthNet: UNet-style single-frame depth with up to 4 output scales.
// Every scale is returned upsampled to input resolution, already in meters.
// ---------------------------------------------------------------------------

template <typename S>
class SDepthNet {
 public:
  SDepthNet(const NetworkConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int d = cfg.encoder_depth;
    Index cin = 3;
    for (int i = 0; i < d; ++i) {
      const Index w = width(i);
      enc_.push_back(Conv2dLayer<S>::make(rng, cin, w, 3, 2, 1));
      cin = w;
    }
    for (int i = d - 2; i >= 0; --i)
      dec_.push_back(Conv2dLayer<S>::make(rng, width(i + 1) + width(i), width(i), 3, 1, 1));
    final_ = Conv2dLayer<S>::make(rng, width(0), width(0), 3, 1, 1);
    // heads: scale 0 at full res, then /2, /4, /8
    heads_.push_back(Conv2dLayer<S>::make(rng, width(0), 1, 3, 1, 1));
    for (int s = 1; s < cfg.num_scales; ++s)
      heads_.push_back(Conv2dLayer<S>::make(rng, width(s - 1), 1, 3, 1, 1));
  }

  /// S depth maps, finest first, all at the input resolution.
  std::vector<Tensor<S>> forward(const Tensor<S>& image) const {
    MISM_CHECK(image.rank() == 3 && image.shape()[0] == 3, "SDepthNet: expects (3,H,W)");
    const Index H = image.shape()[1], W = image.shape()[2];
    std::vector<Tensor<S>> skips;
    Tensor<S> x = image;
    for (const auto& l : enc_) {
      x = elu(l(x));
      skips.push_back(x);
    }
    // decoder with skip connections; collect per-resolution features
    std::vector<Tensor<S>> level_feats;  // index aligned with encoder level
    level_feats.resize(skips.size());
    level_feats[skips.size() - 1] = x;
    for (size_t di = 0; di < dec_.size(); ++di) {
      const size_t lvl = skips.size() - 2 - di;
      Tensor<S> up = resize_bilinear(x, skips[lvl].shape()[1], skips[lvl].shape()[2]);
      x = elu(dec_[di](concat0<S>({up, skips[lvl]})));
      level_feats[lvl] = x;
    }
    Tensor<S> full = elu(final_(resize_bilinear(x, H, W)));

    std::vector<Tensor<S>> depths;
    for (int s = 0; s < cfg_.num_scales; ++s) {
      Tensor<S> feat = (s == 0) ? full : level_feats[static_cast<size_t>(s - 1)];
      Tensor<S> disp = sigmoid(heads_[static_cast<size_t>(s)](feat));
      Tensor<S> depth = disparity_to_depth(disp);
      if (depth.shape()[1] != H || depth.shape()[2] != W)
        depth = resize_bilinear(depth, H, W);
      depths.push_back(depth);
    }
    return depths;
  }

  void register_params(ParamRegistry<S>& r, const std::string& p) const {
    for (size_t i = 0; i < enc_.size(); ++i) enc_[i].register_params(r, p + ".enc" + std::to_string(i));
    for (size_t i = 0; i < dec_.size(); ++i) dec_[i].register_params(r, p + ".dec" + std::to_string(i));
    final_.register_params(r, p + ".final");
    for (size_t i = 0; i < heads_.size(); ++i)
      heads_[i].register_params(r, p + ".head" + std::to_string(i));
  }

  int num_scales() const { return cfg_.num_scales; }

 private:
  Index width(int level) const { return cfg_.encoder_width * (level + 1); }

  NetworkConfig cfg_;
  std::vector<Conv2dLayer<S>> enc_;
  std::vector<Conv2dLayer<S>> dec_;  // top-down order
  Conv2dLayer<S> final_;
  std::vector<Conv2dLayer<S>> heads_;
};

// ---------------------------------------------------------------------------
// PoseNet: 6-channel image pair -> axis-angle+translation, scaled by 0.01.
// The final 1x1 conv is zero-initialized so training starts at identity.
// ---------------------------------------------------------------------------

template <typename S>
class PoseNet {
 public:
  PoseNet(const NetworkConfig& cfg, Rng& rng) {
    const Index w = cfg.encoder_width;
    Index cin = 6;
    for (int i = 0; i < cfg.encoder_depth; ++i) {
      const Index cout = w * (i + 1);
      convs_.push_back(Conv2dLayer<S>::make(rng, cin, cout, 3, 2, 1));
      cin = cout;
    }
    head_ = Conv2dLayer<S>::make(rng, cin, 6, 1, 1, 0, /*zero_init=*/true);
  }

  /// Pose of `later` relative to `earlier` (i.e. T_{later->earlier}) as a
  /// 6-vector (axis-angle, translation); feed to pose_matrix().
  Tensor<S> forward(const Tensor<S>& earlier, const Tensor<S>& later) const {
    MISM_CHECK(earlier.shape() == later.shape(), "PoseNet: image shape mismatch");
    Tensor<S> x = concat0<S>({earlier, later});
    for (const auto& l : convs_) x = elu(l(x));
    Tensor<S> logits = head_(x);  // (6,h',w')
    Tensor<S> pooled = mean_axis(reshape(logits, Shape{6, logits.numel() / 6}), 1);
    return reshape(pooled, Shape{6}) * S(0.01);
  }

  void register_params(ParamRegistry<S>& r, const std::string& p) const {
    for (size_t i = 0; i < convs_.size(); ++i)
      convs_[i].register_params(r, p + ".conv" + std::to_string(i));
    head_.register_params(r, p + ".head");
  }

 private:
  std::vector<Conv2dLayer<S>> convs_;
  Conv2dLayer<S> head_;
};

// ---------------------------------------------------------------------------
// Feat-Net: shared feature extractor to C channels at quarter resolution.
// ---------------------------------------------------------------------------

template <typename S>
class FeatNet {
 public:
  FeatNet(const NetworkConfig& cfg, Rng& rng) {
    const Index w = cfg.encoder_width, C = cfg.feature_channels;
    c0_ = Conv2dLayer<S>::make(rng, 3, w, 3, 2, 1);
    c1_ = Conv2dLayer<S>::make(rng, w, 2 * w, 3, 2, 1);
    c2_ = Conv2dLayer<S>::make(rng, 2 * w, C, 3, 1, 1);
    c3_ = Conv2dLayer<S>::make(rng, C, C, 3, 1, 1);
  }

  Tensor<S> forward(const Tensor<S>& image) const {
    MISM_CHECK(image.rank() == 3 && image.shape()[0] == 3, "FeatNet: expects (3,H,W)");
    return c3_(elu(c2_(elu(c1_(elu(c0_(image)))))));
  }

  void register_params(ParamRegistry<S>& r, const std::string& p) const {
    c0_.register_params(r, p + ".c0");
    c1_.register_params(r, p + ".c1");
    c2_.register_params(r, p + ".c2");
    c3_.register_params(r, p + ".c3");
  }

 private:
  Conv2dLayer<S> c0_, c1_, c2_, c3_;
};

// ---------------------------------------------------------------------------
// Cost-volume regularizer: 2-level 3D UNet over (channels=G, N, h, w),
// emitting one score per hypothesis (D11: size-configurable).
// ---------------------------------------------------------------------------

template <typename S>
class CostRegularizer {
 public:
  CostRegularizer(Index in_channels, Index base, Rng& rng) {
    e0_ = Conv3dLayer<S>::make(rng, in_channels, base, 3, 1, 1);
    e1_ = Conv3dLayer<S>::make(rng, base, base, 3, 1, 1);
    d0_ = Conv3dLayer<S>::make(rng, base, 2 * base, 3, 2, 1);
    d1_ = Conv3dLayer<S>::make(rng, 2 * base, 2 * base, 3, 1, 1);
    u0_ = Conv3dLayer<S>::make(rng, 3 * base, base, 3, 1, 1);
    out_ = Conv3dLayer<S>::make(rng, base, 1, 3, 1, 1);
  }

  /// (G,N,h,w) -> per-hypothesis scores (N,h,w), pre-normalization.
  Tensor<S> forward(const Tensor<S>& volume) const {
    MISM_CHECK(volume.rank() == 4, "CostRegularizer: expects (G,N,h,w)");
    const Index N = volume.shape()[1], h = volume.shape()[2], w = volume.shape()[3];
    Tensor<S> e0 = elu(e1_(elu(e0_(volume))));
    Tensor<S> d = elu(d1_(elu(d0_(e0))));
    Tensor<S> up = upsample_nearest3d(d, N, h, w);
    Tensor<S> u = elu(u0_(concat0<S>({up, e0})));
    return reshape(out_(u), Shape{N, h, w});
  }

  void register_params(ParamRegistry<S>& r, const std::string& p) const {
    e0_.register_params(r, p + ".e0");
    e1_.register_params(r, p + ".e1");
    d0_.register_params(r, p + ".d0");
    d1_.register_params(r, p + ".d1");
    u0_.register_params(r, p + ".u0");
    out_.register_params(r, p + ".out");
  }

 private:
  Conv3dLayer<S> e0_, e1_, d0_, d1_, u0_, out_;
};

// ---------------------------------------------------------------------------
// Convex-upsampling weight head: quarter-resolution target features to
// normalized 3x3-neighborhood weights for each of the 16 sub-pixels.
// ---------------------------------------------------------------------------

template <typename S>
class UpsampleHead {
 public:
  UpsampleHead(Index in_channels, Index mid, Rng& rng) {
    c0_ = Conv2dLayer<S>::make(rng, in_channels, mid, 3, 1, 1);
    c1_ = Conv2dLayer<S>::make(rng, mid, 9 * 16, 1, 1, 0);
  }

  /// (C,h,w) -> (9,16,h,w), softmax-normalized over the 9 neighbors.
  Tensor<S> forward(const Tensor<S>& feats) const {
    const Index h = feats.shape()[1], w = feats.shape()[2];
    Tensor<S> raw = c1_(elu(c0_(feats)));
    return softmax(reshape(raw, Shape{9, 16, h, w}), 0);
  }

  void register_params(ParamRegistry<S>& r, const std::string& p) const {
    c0_.register_params(r, p + ".c0");
    c1_.register_params(r, p + ".c1");
  }

 private:
  Conv2dLayer<S> c0_, c1_;
};

}  // namespace mism
