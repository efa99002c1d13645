#pragma once

#include "mism/geometry.hpp"
#include "mism/ops.hpp"
#include "mism/tensor.hpp"

#include <vector>

namespace mism {

template <typename S>
struct LossWeights {
  S alpha = S(0.15);
  S lambda_sm = S(1e-3);
  S lambda_si = S(0.1);
  S gamma = S(1.0);
  S ssim_c1 = S(1e-4);   // (0.01)² on [0,1] range
  S ssim_c2 = S(9e-4);   // (0.03)²
};

/// Per-pixel SSIM with a 3x3 mean filter, channel-averaged to (1,H,W).
template <typename S>
Tensor<S> ssim(const Tensor<S>& a, const Tensor<S>& b, const LossWeights<S>& w) {
  MISM_CHECK(a.shape() == b.shape(), "ssim: shape mismatch");
  Tensor<S> mu_a = box_filter3(a);
  Tensor<S> mu_b = box_filter3(b);
  Tensor<S> sigma_a = box_filter3(a * a) - mu_a * mu_a;
  Tensor<S> sigma_b = box_filter3(b * b) - mu_b * mu_b;
  Tensor<S> sigma_ab = box_filter3(a * b) - mu_a * mu_b;
  Tensor<S> num = (S(2) * mu_a * mu_b + w.ssim_c1) * (S(2) * sigma_ab + w.ssim_c2);
  Tensor<S> den = (mu_a * mu_a + mu_b * mu_b + w.ssim_c1) * (sigma_a + sigma_b + w.ssim_c2);
  return mean_axis(num / den, 0);
}

/// PE(a,b) = α·L1 + (1−α)·(1−SSIM)/2, both channel-averaged; (1,H,W), >= 0.
template <typename S>
Tensor<S> photometric_error(const Tensor<S>& a, const Tensor<S>& b, const LossWeights<S>& w) {
  MISM_CHECK(a.shape() == b.shape(), "photometric_error: shape mismatch");
  MISM_CHECK(all_finite(a) && all_finite(b), "photometric_error: non-finite input");
  Tensor<S> l1 = mean_axis(abs(a - b), 0);
  Tensor<S> dssim = (S(1) - ssim(a, b, w)) * S(0.5);
  return w.alpha * l1 + (S(1) - w.alpha) * dssim;
}

/// Per-pixel minimum of photometric errors over the synthesized candidates.
template <typename S>
Tensor<S> min_reprojection(const Tensor<S>& target, const std::vector<Tensor<S>>& synth,
                           const LossWeights<S>& w) {
  MISM_CHECK(!synth.empty(), "min_reprojection: no synthesized images");
  Tensor<S> out = photometric_error(target, synth[0], w);
  for (size_t i = 1; i < synth.size(); ++i)
    out = minimum(out, photometric_error(target, synth[i], w));
  return out;
}

/// Auto-mask μ: 1 where the best warped error strictly beats the best
/// unwarped (static) error. Constant binary (1,H,W); never carries gradient.
template <typename S>
Tensor<S> auto_mask(const Tensor<S>& target, const std::vector<Tensor<S>>& contexts,
                    const std::vector<Tensor<S>>& synth, const LossWeights<S>& w) {
  MISM_CHECK(contexts.size() == synth.size() && !synth.empty(),
             "auto_mask: contexts and synth must be index-aligned");
  std::vector<Tensor<S>> ctx_detached, syn_detached;
  for (const auto& c : contexts) ctx_detached.push_back(c.detach());
  for (const auto& s : synth) syn_detached.push_back(s.detach());
  Tensor<S> warped = min_reprojection(target.detach(), syn_detached, w);
  Tensor<S> unwarped = min_reprojection(target.detach(), ctx_detached, w);
  Vec<S> m = (warped.values() < unwarped.values()).template cast<S>();
  return Tensor<S>::from(warped.shape(), std::move(m));
}

/// Edge-aware smoothness on mean-normalized inverse depth, forward differences.
template <typename S>
Tensor<S> smoothness(const Tensor<S>& depth, const Tensor<S>& image) {
  MISM_CHECK(depth.rank() == 3 && depth.shape()[0] == 1, "smoothness: depth must be (1,H,W)");
  MISM_CHECK(depth.shape()[1] == image.shape()[1] && depth.shape()[2] == image.shape()[2],
             "smoothness: depth/image size mismatch");
  const Index H = depth.shape()[1], W = depth.shape()[2];
  Tensor<S> inv = S(1) / depth;
  Tensor<S> dstar = inv / reshape(mean(inv), Shape{1, 1, 1});

  Tensor<S> du = abs(crop2d(dstar, 0, 1, H, W - 1) - crop2d(dstar, 0, 0, H, W - 1));
  Tensor<S> dv = abs(crop2d(dstar, 1, 0, H - 1, W) - crop2d(dstar, 0, 0, H - 1, W));
  Tensor<S> gu = mean_axis(abs(crop2d(image, 0, 1, H, W - 1) - crop2d(image, 0, 0, H, W - 1)), 0);
  Tensor<S> gv = mean_axis(abs(crop2d(image, 1, 0, H - 1, W) - crop2d(image, 0, 0, H - 1, W)), 0);
  return mean(du * exp(-gu)) + mean(dv * exp(-gv));
}

namespace detail {

/// Mean of x over mask==1 pixels; zero when the mask is empty.
template <typename S>
Tensor<S> masked_mean(const Tensor<S>& x, const Tensor<S>& mask) {
  const S count = mask.values().sum();
  if (count <= S(0)) return Tensor<S>::scalar(S(0));
  return sum(x * mask) * (S(1) / count);
}

}  // namespace detail

/// Eq-6-style self-supervised loss for one depth prediction set:
/// mean over scales of [masked min-reprojection + λ_sm · smoothness].
/// `poses` are (3,4) tensors aligned with `contexts` (warp sense t → c).
template <typename S>
Tensor<S> self_supervised_loss(const std::vector<Tensor<S>>& depths, const Tensor<S>& target,
                               const std::vector<Tensor<S>>& contexts, const Intrinsics<S>& K,
                               const std::vector<Tensor<S>>& poses, const LossWeights<S>& w) {
  MISM_CHECK(!depths.empty(), "self_supervised_loss: no depth maps");
  MISM_CHECK(contexts.size() == poses.size() && !contexts.empty(),
             "self_supervised_loss: contexts/poses mismatch");
  const Index H = target.shape()[1], W = target.shape()[2];
  Tensor<S> total = Tensor<S>::scalar(S(0));
  for (const auto& d : depths) {
    Tensor<S> depth = (d.shape()[1] == H && d.shape()[2] == W) ? d : resize_bilinear(d, H, W);
    std::vector<Tensor<S>> synth;
    synth.reserve(contexts.size());
    for (size_t c = 0; c < contexts.size(); ++c)
      synth.push_back(warp_image(contexts[c], depth, K, poses[c]));
    Tensor<S> lp = min_reprojection(target, synth, w);
    Tensor<S> mu = auto_mask(target, contexts, synth, w);
    total = total + detail::masked_mean(lp, mu) + w.lambda_sm * smoothness(depth, target);
  }
  return total * (S(1) / static_cast<S>(depths.size()));
}

/// Distillation mask M: 1 where the teacher's synthesized view beats the
/// student's, strictly. Constant binary (1,H,W).
template <typename S>
Tensor<S> distill_mask(const Tensor<S>& target, const Tensor<S>& synth_teacher,
                       const Tensor<S>& synth_student, const LossWeights<S>& w) {
  Tensor<S> pe_m = photometric_error(target.detach(), synth_teacher.detach(), w);
  Tensor<S> pe_s = photometric_error(target.detach(), synth_student.detach(), w);
  Vec<S> m = (pe_m.values() < pe_s.values()).template cast<S>();
  return Tensor<S>::from(pe_m.shape(), std::move(m));
}

/// Masked scale-invariant log error:
/// d = (log d_student − log d_teacher)·M;  sqrt(Σd²/n − γ(Σd)²/n²).
/// Returns 0 when the mask is empty or the radicand collapses to zero.
template <typename S>
Tensor<S> scale_invariant_loss(const Tensor<S>& d_student, const Tensor<S>& d_teacher,
                               const Tensor<S>& mask, S gamma) {
  MISM_CHECK(d_student.shape() == d_teacher.shape() && d_student.shape() == mask.shape(),
             "scale_invariant_loss: shape mismatch");
  const S n = mask.values().sum();
  if (n <= S(0)) return Tensor<S>::scalar(S(0));
  Tensor<S> d = (log(d_student) - log(d_teacher)) * mask;
  Tensor<S> radicand =
      sum(square(d)) * (S(1) / n) - square(sum(d)) * (gamma / (n * n));
  Tensor<S> clamped = clamp_min(radicand, S(0));
  if (clamped.value() < S(1e-12)) return Tensor<S>::scalar(S(0));
  return sqrt(clamped);
}

template <typename S>
struct StudentOutputs {
  std::vector<Tensor<S>> depths;  // multi-scale student depth, full resolution
  std::vector<Tensor<S>> poses;   // (3,4) tensors aligned with contexts
};

/// Eq-15 distillation loss. `contexts[0]` must be the previous frame; the
/// mask is built from it. Teacher depth must arrive detached.
template <typename S>
Tensor<S> distillation_loss(const StudentOutputs<S>& student, const Tensor<S>& teacher_depth,
                            const Tensor<S>& target, const std::vector<Tensor<S>>& contexts,
                            const Intrinsics<S>& K, const LossWeights<S>& w,
                            bool min_reproj_mask_enabled = true) {
  MISM_CHECK(!teacher_depth.requires_grad(),
             "distillation_loss: teacher depth must be detached");
  Tensor<S> l_self = self_supervised_loss(student.depths, target, contexts, K, student.poses, w);
  if (w.lambda_si == S(0)) return l_self;

  const Tensor<S>& d_s = student.depths[0];
  Tensor<S> mask;
  if (min_reproj_mask_enabled) {
    Tensor<S> synth_m = warp_image(contexts[0], teacher_depth, K, student.poses[0]);
    Tensor<S> synth_s = warp_image(contexts[0], d_s, K, student.poses[0]);
    mask = distill_mask(target, synth_m, synth_s, w);
  } else {
    mask = Tensor<S>::ones(Shape{1, target.shape()[1], target.shape()[2]});
  }
  Tensor<S> l_si = scale_invariant_loss(d_s, teacher_depth, mask, w.gamma);
  return l_self + w.lambda_si * l_si;
}

}  // namespace mism
