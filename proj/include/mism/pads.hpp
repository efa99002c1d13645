#pragma once

#include "mism/ops.hpp"
#include "mism/tensor.hpp"

namespace mism {

/// Pixel-wise relative half-width of the depth sampling range. A running
/// statistic, not an optimizer parameter: updated by EMA during teacher
/// training, frozen everywhere else, serialized with the teacher weights.
template <typename S>
struct UncertaintyMap {
  Tensor<S> delta;  // (1,h,w), >= 0

  static UncertaintyMap ones(Index h, Index w) { return {Tensor<S>::ones(Shape{1, h, w})}; }
  static UncertaintyMap fixed(Index h, Index w, S value) {
    MISM_CHECK(value >= S(0), "UncertaintyMap: negative value");
    return {Tensor<S>::filled(Shape{1, h, w}, value)};
  }

  Index h() const { return delta.shape()[1]; }
  Index w() const { return delta.shape()[2]; }
};

template <typename S>
struct DepthRange {
  Tensor<S> d_min;  // (1,h,w), > 0
  Tensor<S> d_max;  // (1,h,w), >= d_min
};

/// Bilinear 4x downsampling of a full-resolution depth map.
template <typename S>
Tensor<S> downsample_depth(const Tensor<S>& depth) {
  MISM_CHECK(depth.rank() == 3 && depth.shape()[0] == 1, "downsample_depth: expects (1,H,W)");
  const Index H = depth.shape()[1], W = depth.shape()[2];
  MISM_CHECK(H % 4 == 0 && W % 4 == 0, "downsample_depth: H and W must be divisible by 4");
  return resize_bilinear(depth, H / 4, W / 4);
}

/// Sampling range centered on the prior depth with relative width delta:
/// d_min = prior/(1+δ), d_max = prior·(1+δ).
template <typename S>
DepthRange<S> compute_range(const Tensor<S>& d_prior, const UncertaintyMap<S>& u) {
  MISM_CHECK(d_prior.shape() == u.delta.shape(), "compute_range: shape mismatch");
  Tensor<S> one_plus = u.delta + S(1);
  return {d_prior / one_plus, d_prior * one_plus};
}

/// N depth candidates per pixel, uniform in inverse depth;
/// index 0 is d_max, index N-1 is d_min.
template <typename S>
Tensor<S> sample_hypotheses(const DepthRange<S>& range, Index n) {
  MISM_CHECK(n >= 2, "sample_hypotheses: N must be >= 2");
  Tensor<S> inv_min = S(1) / range.d_max;
  Tensor<S> inv_span = S(1) / range.d_min - inv_min;
  std::vector<Tensor<S>> planes;
  planes.reserve(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const S frac = static_cast<S>(i) / static_cast<S>(n - 1);
    planes.push_back(S(1) / (inv_span * frac + inv_min));
  }
  return concat0(planes);
}

/// EMA update of δ from the single-/multi-frame depth disagreement:
/// δ' = β(max(ds/dm, dm/ds) − 1);  δ ← 0.99δ + 0.01δ'.
/// Runs outside the autodiff graph; call only from the teacher training loop.
template <typename S>
void update_uncertainty(UncertaintyMap<S>& u, const Tensor<S>& d_s, const Tensor<S>& d_m,
                        S beta = S(1.2)) {
  MISM_CHECK(d_s.shape() == u.delta.shape() && d_m.shape() == u.delta.shape(),
             "update_uncertainty: shape mismatch");
  MISM_CHECK((d_s.values() > S(0)).all() && (d_m.values() > S(0)).all(),
             "update_uncertainty: depths must be positive");
  const auto& s = d_s.values();
  const auto& m = d_m.values();
  Vec<S> ratio = (s / m).max(m / s);
  u.delta.values() = S(0.99) * u.delta.values() + S(0.01) * beta * (ratio - S(1));
}

}  // namespace mism
