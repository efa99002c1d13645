#pragma once

#include "mism/geometry.hpp"
#include "mism/networks.hpp"
#include "mism/ops.hpp"
#include "mism/tensor.hpp"

namespace mism {

/// Warp the context features onto every hypothesis plane.
/// F_c: (C,h,w), hypoth: (N,h,w), K_quarter: intrinsics at feature resolution.
/// Returns the feature volume (N,C,h,w).
template <typename S>
Tensor<S> build_feature_volume(const Tensor<S>& context_feats, const Tensor<S>& hypoth,
                               const Intrinsics<S>& K_quarter, const Tensor<S>& pose) {
  MISM_CHECK(context_feats.rank() == 3 && hypoth.rank() == 3, "build_feature_volume: bad ranks");
  MISM_CHECK(context_feats.shape()[1] == hypoth.shape()[1] &&
                 context_feats.shape()[2] == hypoth.shape()[2],
             "build_feature_volume: spatial mismatch");
  const Index N = hypoth.shape()[0], h = hypoth.shape()[1], w = hypoth.shape()[2];
  const Index C = context_feats.shape()[0];
  std::vector<Tensor<S>> planes;
  planes.reserve(static_cast<size_t>(N));
  for (Index i = 0; i < N; ++i) {
    Tensor<S> d = reshape(slice0(hypoth, i, 1), Shape{1, h, w});
    Tensor<S> warped = bilinear_sample(context_feats, project_pixels(d, K_quarter, pose).coords);
    planes.push_back(reshape(warped, Shape{1, C, h, w}));
  }
  return concat0(planes);
}

/// Group-wise correlation cost volume (N,G,h,w):
/// per group, the inner product normalized by channels-per-group.
template <typename S>
Tensor<S> groupwise_correlation(const Tensor<S>& target_feats, const Tensor<S>& feature_volume,
                                Index groups) {
  MISM_CHECK(target_feats.rank() == 3 && feature_volume.rank() == 4,
             "groupwise_correlation: bad ranks");
  const Index C = target_feats.shape()[0];
  const Index N = feature_volume.shape()[0];
  const Index h = target_feats.shape()[1], w = target_feats.shape()[2];
  MISM_CHECK(feature_volume.shape()[1] == C, "groupwise_correlation: channel mismatch");
  MISM_CHECK(groups >= 1 && C % groups == 0,
             "groupwise_correlation: C must be divisible by G");
  const Index cg = C / groups;
  Tensor<S> prod = feature_volume * reshape(target_feats, Shape{1, C, h, w});
  Tensor<S> grouped = reshape(prod, Shape{N, groups, cg, h, w});
  return reshape(sum_axis(grouped, 2), Shape{N, groups, h, w}) * (S(1) / static_cast<S>(cg));
}

/// Regularize the cost volume into a per-pixel probability distribution over
/// the N hypotheses (exponential normalization of the UNet scores).
template <typename S>
Tensor<S> regularize(const Tensor<S>& cost_volume, const CostRegularizer<S>& net) {
  MISM_CHECK(cost_volume.rank() == 4, "regularize: expects (N,G,h,w)");
  Tensor<S> scores = net.forward(swap01(cost_volume));
  return softmax(scores, 0);
}

/// Local-max depth regression (Eq-7 style): expectation over a window of
/// radius r around the per-pixel argmax. Ties break toward the smaller index.
/// Hypothesis depths act as constants; gradients flow through P only.
template <typename S>
Tensor<S> local_max_regress(const Tensor<S>& prob, const Tensor<S>& hypoth, Index r = 1) {
  MISM_CHECK(prob.shape() == hypoth.shape(), "local_max_regress: shape mismatch");
  const Index N = prob.shape()[0], h = prob.shape()[1], w = prob.shape()[2];
  MISM_CHECK(r >= 0 && r <= N - 1, "local_max_regress: radius out of range");
  std::vector<Index> arg = argmax0(prob);
  Vec<S> mask_v(N * h * w);
  for (Index i = 0; i < N; ++i)
    for (Index p = 0; p < h * w; ++p) {
      const Index x = arg[static_cast<size_t>(p)];
      mask_v[i * h * w + p] = (i >= x - r && i <= x + r) ? S(1) : S(0);
    }
  Tensor<S> mask = Tensor<S>::from(Shape{N, h, w}, std::move(mask_v));
  Tensor<S> pw = prob * mask;
  Tensor<S> num = sum_axis(hypoth.detach() * pw, 0);
  Tensor<S> den = sum_axis(pw, 0);
  return num / den;
}

/// Convex upsampling: each full-resolution pixel is a convex combination of
/// its 3x3 coarse neighborhood (replicate borders). weights: (9,16,h,w),
/// already normalized over the 9 axis.
template <typename S>
Tensor<S> convex_upsample(const Tensor<S>& d_low, const Tensor<S>& weights) {
  MISM_CHECK(d_low.rank() == 3 && d_low.shape()[0] == 1, "convex_upsample: depth must be (1,h,w)");
  const Index h = d_low.shape()[1], w = d_low.shape()[2];
  MISM_CHECK(weights.rank() == 4 && weights.shape()[0] == 9 && weights.shape()[1] == 16 &&
                 weights.shape()[2] == h && weights.shape()[3] == w,
             "convex_upsample: weights must be (9,16,h,w)");
  {
    Vec<S> colsum = Vec<S>::Zero(16 * h * w);
    for (Index k = 0; k < 9; ++k) colsum += weights.values().segment(k * 16 * h * w, 16 * h * w);
    MISM_CHECK((colsum - S(1)).abs().maxCoeff() < S(1e-3),
               "convex_upsample: weights not normalized over the 9 axis");
  }

  Tensor<S> padded = pad2d_replicate(d_low, 1);
  std::vector<Tensor<S>> shifts;  // k = dy*3+dx, offsets in [-1,1]^2
  shifts.reserve(9);
  for (Index dy = 0; dy < 3; ++dy)
    for (Index dx = 0; dx < 3; ++dx) shifts.push_back(crop2d(padded, dy, dx, h, w));

  Tensor<S> wr = reshape(weights, Shape{9 * 16, h, w});
  std::vector<Tensor<S>> subs;
  subs.reserve(16);
  for (Index sub = 0; sub < 16; ++sub) {
    Tensor<S> acc = slice0(wr, 0 * 16 + sub, 1) * shifts[0];
    for (Index k = 1; k < 9; ++k)
      acc = acc + slice0(wr, k * 16 + sub, 1) * shifts[static_cast<size_t>(k)];
    subs.push_back(acc);
  }
  return pixel_shuffle(concat0(subs), 4);
}

}  // namespace mism
