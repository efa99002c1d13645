#pragma once

#include "mism/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace mism {

// ---------------------------------------------------------------------------
// conv2d: input (Cin,H,W), weight (Cout,Cin,kh,kw), optional bias (Cout).
// Zero padding, square stride. im2col + GEMM; the column buffer is rebuilt
// in the backward pass instead of being kept on the tape.
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void im2col(const Vec<S>& x, Index C, Index H, Index W, Index kh, Index kw, Index stride,
            Index pad, Index Ho, Index Wo, MatRM<S>& col) {
  col.resize(C * kh * kw, Ho * Wo);
  for (Index c = 0; c < C; ++c)
    for (Index dy = 0; dy < kh; ++dy)
      for (Index dx = 0; dx < kw; ++dx) {
        const Index r = (c * kh + dy) * kw + dx;
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * stride + dy - pad;
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * stride + dx - pad;
            col(r, oy * Wo + ox) = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                       ? x[(c * H + iy) * W + ix]
                                       : S(0);
          }
        }
      }
}

template <typename S>
void col2im_add(const MatRM<S>& col, Index C, Index H, Index W, Index kh, Index kw, Index stride,
                Index pad, Index Ho, Index Wo, Vec<S>& gx) {
  for (Index c = 0; c < C; ++c)
    for (Index dy = 0; dy < kh; ++dy)
      for (Index dx = 0; dx < kw; ++dx) {
        const Index r = (c * kh + dy) * kw + dx;
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * stride + dy - pad;
          if (iy < 0 || iy >= H) continue;
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * stride + dx - pad;
            if (ix < 0 || ix >= W) continue;
            gx[(c * H + iy) * W + ix] += col(r, oy * Wo + ox);
          }
        }
      }
}

}  // namespace detail

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, Index stride = 1,
                 Index pad = 0) {
  MISM_CHECK(x.rank() == 3 && w.rank() == 4, "conv2d: expects (C,H,W) and (Cout,Cin,kh,kw)");
  const Index C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const Index Cout = w.shape()[0], Cin = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
  MISM_CHECK(Cin == C, "conv2d: channel mismatch");
  const Index Ho = (H + 2 * pad - kh) / stride + 1;
  const Index Wo = (W + 2 * pad - kw) / stride + 1;
  MISM_CHECK(Ho >= 1 && Wo >= 1, "conv2d: output collapsed");

  std::vector<Tensor<S>> parents{x, w};
  const bool has_bias = b.defined();
  if (has_bias) {
    MISM_CHECK(b.rank() == 1 && b.shape()[0] == Cout, "conv2d: bias shape");
    parents.push_back(b);
  }
  auto n = detail::make_node<S>(Shape{Cout, Ho, Wo}, parents);

  MatRM<S> col;
  detail::im2col(x.values(), C, H, W, kh, kw, stride, pad, Ho, Wo, col);
  Eigen::Map<MatRM<S>> out(n->values.data(), Cout, Ho * Wo);
  out.noalias() = Eigen::Map<const MatRM<S>>(w.values().data(), Cout, Cin * kh * kw) * col;
  if (has_bias)
    for (Index co = 0; co < Cout; ++co) out.row(co).array() += b.values()[co];

  if (n->requires_grad) {
    auto xn = x.node(), wn = w.node();
    auto bn = has_bias ? b.node() : nullptr;
    n->backward_fn = [xn, wn, bn, C, H, W, kh, kw, stride, pad, Ho, Wo, Cout,
                      Cin](TensorNode<S>& self) {
      Eigen::Map<const MatRM<S>> g(self.grad.data(), Cout, Ho * Wo);
      if (wn->requires_grad || xn->requires_grad) {
        MatRM<S> col2;
        if (wn->requires_grad) {
          detail::im2col(xn->values, C, H, W, kh, kw, stride, pad, Ho, Wo, col2);
          wn->ensure_grad();
          Eigen::Map<MatRM<S>>(wn->grad.data(), Cout, Cin * kh * kw).noalias() +=
              g * col2.transpose();
        }
        if (xn->requires_grad) {
          MatRM<S> gcol =
              Eigen::Map<const MatRM<S>>(wn->values.data(), Cout, Cin * kh * kw).transpose() * g;
          xn->ensure_grad();
          detail::col2im_add(gcol, C, H, W, kh, kw, stride, pad, Ho, Wo, xn->grad);
        }
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (Index co = 0; co < Cout; ++co) bn->grad[co] += g.row(co).sum();
      }
    };
  }
  return Tensor<S>(std::move(n));
}

// ---------------------------------------------------------------------------
// conv3d: input (Cin,D,H,W), weight (Cout,Cin,kd,kh,kw) flattened as
// (Cout, Cin*kd*kh*kw) rank-2 to stay within rank 5. Bias (Cout).
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void vol2col(const Vec<S>& x, Index C, Index D, Index H, Index W, Index k, Index stride,
             Index pad, Index Do, Index Ho, Index Wo, MatRM<S>& col) {
  col.resize(C * k * k * k, Do * Ho * Wo);
  for (Index c = 0; c < C; ++c)
    for (Index dz = 0; dz < k; ++dz)
      for (Index dy = 0; dy < k; ++dy)
        for (Index dx = 0; dx < k; ++dx) {
          const Index r = ((c * k + dz) * k + dy) * k + dx;
          Index o = 0;
          for (Index oz = 0; oz < Do; ++oz) {
            const Index iz = oz * stride + dz - pad;
            for (Index oy = 0; oy < Ho; ++oy) {
              const Index iy = oy * stride + dy - pad;
              for (Index ox = 0; ox < Wo; ++ox, ++o) {
                const Index ix = ox * stride + dx - pad;
                col(r, o) = (iz >= 0 && iz < D && iy >= 0 && iy < H && ix >= 0 && ix < W)
                                ? x[((c * D + iz) * H + iy) * W + ix]
                                : S(0);
              }
            }
          }
        }
}

template <typename S>
void col2vol_add(const MatRM<S>& col, Index C, Index D, Index H, Index W, Index k, Index stride,
                 Index pad, Index Do, Index Ho, Index Wo, Vec<S>& gx) {
  for (Index c = 0; c < C; ++c)
    for (Index dz = 0; dz < k; ++dz)
      for (Index dy = 0; dy < k; ++dy)
        for (Index dx = 0; dx < k; ++dx) {
          const Index r = ((c * k + dz) * k + dy) * k + dx;
          Index o = 0;
          for (Index oz = 0; oz < Do; ++oz) {
            const Index iz = oz * stride + dz - pad;
            for (Index oy = 0; oy < Ho; ++oy) {
              const Index iy = oy * stride + dy - pad;
              for (Index ox = 0; ox < Wo; ++ox, ++o) {
                const Index ix = ox * stride + dx - pad;
                if (iz >= 0 && iz < D && iy >= 0 && iy < H && ix >= 0 && ix < W)
                  gx[((c * D + iz) * H + iy) * W + ix] += col(r, o);
              }
            }
          }
        }
}

}  // namespace detail

/// Cubic-kernel 3D convolution; `w` is (Cout, Cin*k^3) with k inferred.
template <typename S>
Tensor<S> conv3d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, Index k,
                 Index stride = 1, Index pad = 0) {
  MISM_CHECK(x.rank() == 4 && w.rank() == 2, "conv3d: expects (C,D,H,W) and (Cout, Cin*k^3)");
  const Index C = x.shape()[0], D = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const Index Cout = w.shape()[0];
  MISM_CHECK(w.shape()[1] == C * k * k * k, "conv3d: weight size mismatch");
  const Index Do = (D + 2 * pad - k) / stride + 1;
  const Index Ho = (H + 2 * pad - k) / stride + 1;
  const Index Wo = (W + 2 * pad - k) / stride + 1;
  MISM_CHECK(Do >= 1 && Ho >= 1 && Wo >= 1, "conv3d: output collapsed");

  std::vector<Tensor<S>> parents{x, w};
  const bool has_bias = b.defined();
  if (has_bias) parents.push_back(b);
  auto n = detail::make_node<S>(Shape{Cout, Do, Ho, Wo}, parents);

  MatRM<S> col;
  detail::vol2col(x.values(), C, D, H, W, k, stride, pad, Do, Ho, Wo, col);
  Eigen::Map<MatRM<S>> out(n->values.data(), Cout, Do * Ho * Wo);
  out.noalias() = Eigen::Map<const MatRM<S>>(w.values().data(), Cout, C * k * k * k) * col;
  if (has_bias)
    for (Index co = 0; co < Cout; ++co) out.row(co).array() += b.values()[co];

  if (n->requires_grad) {
    auto xn = x.node(), wn = w.node();
    auto bn = has_bias ? b.node() : nullptr;
    n->backward_fn = [xn, wn, bn, C, D, H, W, k, stride, pad, Do, Ho, Wo,
                      Cout](TensorNode<S>& self) {
      Eigen::Map<const MatRM<S>> g(self.grad.data(), Cout, Do * Ho * Wo);
      if (wn->requires_grad) {
        MatRM<S> col2;
        detail::vol2col(xn->values, C, D, H, W, k, stride, pad, Do, Ho, Wo, col2);
        wn->ensure_grad();
        Eigen::Map<MatRM<S>>(wn->grad.data(), Cout, C * k * k * k).noalias() +=
            g * col2.transpose();
      }
      if (xn->requires_grad) {
        MatRM<S> gcol =
            Eigen::Map<const MatRM<S>>(wn->values.data(), Cout, C * k * k * k).transpose() * g;
        xn->ensure_grad();
        detail::col2vol_add(gcol, C, D, H, W, k, stride, pad, Do, Ho, Wo, xn->grad);
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (Index co = 0; co < Cout; ++co) bn->grad[co] += g.row(co).sum();
      }
    };
  }
  return Tensor<S>(std::move(n));
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Bilinear resize on (C,H,W), half-pixel centers, border clamp.
template <typename S>
Tensor<S> resize_bilinear(const Tensor<S>& x, Index Ho, Index Wo) {
  MISM_CHECK(x.rank() == 3, "resize_bilinear: expects (C,H,W)");
  const Index C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  if (Ho == H && Wo == W) return x * S(1);
  auto n = detail::make_node<S>(Shape{C, Ho, Wo}, {x});

  const S sy = static_cast<S>(H) / static_cast<S>(Ho);
  const S sx = static_cast<S>(W) / static_cast<S>(Wo);
  // per output pixel: corner indices and weights, shared across channels
  std::vector<Index> x0s(static_cast<size_t>(Wo)), y0s(static_cast<size_t>(Ho));
  std::vector<S> wxs(static_cast<size_t>(Wo)), wys(static_cast<size_t>(Ho));
  for (Index ox = 0; ox < Wo; ++ox) {
    S fx = (static_cast<S>(ox) + S(0.5)) * sx - S(0.5);
    fx = std::min(std::max(fx, S(0)), static_cast<S>(W - 1));
    Index x0 = std::min(static_cast<Index>(std::floor(fx)), W - 1);
    x0s[static_cast<size_t>(ox)] = x0;
    wxs[static_cast<size_t>(ox)] = fx - static_cast<S>(x0);
  }
  for (Index oy = 0; oy < Ho; ++oy) {
    S fy = (static_cast<S>(oy) + S(0.5)) * sy - S(0.5);
    fy = std::min(std::max(fy, S(0)), static_cast<S>(H - 1));
    Index y0 = std::min(static_cast<Index>(std::floor(fy)), H - 1);
    y0s[static_cast<size_t>(oy)] = y0;
    wys[static_cast<size_t>(oy)] = fy - static_cast<S>(y0);
  }
  const auto& v = x.values();
  for (Index c = 0; c < C; ++c)
    for (Index oy = 0; oy < Ho; ++oy) {
      const Index y0 = y0s[static_cast<size_t>(oy)], y1 = std::min(y0 + 1, H - 1);
      const S wy = wys[static_cast<size_t>(oy)];
      for (Index ox = 0; ox < Wo; ++ox) {
        const Index x0 = x0s[static_cast<size_t>(ox)], x1 = std::min(x0 + 1, W - 1);
        const S wx = wxs[static_cast<size_t>(ox)];
        const S v00 = v[(c * H + y0) * W + x0], v01 = v[(c * H + y0) * W + x1];
        const S v10 = v[(c * H + y1) * W + x0], v11 = v[(c * H + y1) * W + x1];
        n->values[(c * Ho + oy) * Wo + ox] =
            (S(1) - wy) * ((S(1) - wx) * v00 + wx * v01) + wy * ((S(1) - wx) * v10 + wx * v11);
      }
    }
  if (n->requires_grad) {
    auto xn = x.node();
    n->backward_fn = [xn, C, H, W, Ho, Wo, x0s, y0s, wxs, wys](TensorNode<S>& self) {
      xn->ensure_grad();
      for (Index c = 0; c < C; ++c)
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index y0 = y0s[static_cast<size_t>(oy)], y1 = std::min(y0 + 1, H - 1);
          const S wy = wys[static_cast<size_t>(oy)];
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index x0 = x0s[static_cast<size_t>(ox)], x1 = std::min(x0 + 1, W - 1);
            const S wx = wxs[static_cast<size_t>(ox)];
            const S g = self.grad[(c * Ho + oy) * Wo + ox];
            xn->grad[(c * H + y0) * W + x0] += g * (S(1) - wy) * (S(1) - wx);
            xn->grad[(c * H + y0) * W + x1] += g * (S(1) - wy) * wx;
            xn->grad[(c * H + y1) * W + x0] += g * wy * (S(1) - wx);
            xn->grad[(c * H + y1) * W + x1] += g * wy * wx;
          }
        }
    };
  }
  return Tensor<S>(std::move(n));
}

/// Nearest-neighbor upsample of (C,D,H,W) volumes to a target size.
template <typename S>
Tensor<S> upsample_nearest3d(const Tensor<S>& x, Index Do, Index Ho, Index Wo) {
  MISM_CHECK(x.rank() == 4, "upsample_nearest3d: expects (C,D,H,W)");
  const Index C = x.shape()[0], D = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  auto n = detail::make_node<S>(Shape{C, Do, Ho, Wo}, {x});
  auto src = [&](Index o, Index Out, Index In) { return std::min(o * In / Out, In - 1); };
  for (Index c = 0; c < C; ++c)
    for (Index oz = 0; oz < Do; ++oz)
      for (Index oy = 0; oy < Ho; ++oy)
        for (Index ox = 0; ox < Wo; ++ox)
          n->values[((c * Do + oz) * Ho + oy) * Wo + ox] =
              x.values()[((c * D + src(oz, Do, D)) * H + src(oy, Ho, H)) * W + src(ox, Wo, W)];
  if (n->requires_grad) {
    auto xn = x.node();
    n->backward_fn = [xn, C, D, H, W, Do, Ho, Wo, src](TensorNode<S>& self) {
      xn->ensure_grad();
      for (Index c = 0; c < C; ++c)
        for (Index oz = 0; oz < Do; ++oz)
          for (Index oy = 0; oy < Ho; ++oy)
            for (Index ox = 0; ox < Wo; ++ox)
              xn->grad[((c * D + src(oz, Do, D)) * H + src(oy, Ho, H)) * W + src(ox, Wo, W)] +=
                  self.grad[((c * Do + oz) * Ho + oy) * Wo + ox];
    };
  }
  return Tensor<S>(std::move(n));
}

// ---------------------------------------------------------------------------
// Differentiable bilinear sampling with border clamp.
// coords: (2,Hc,Wc) with channel 0 = u (column), channel 1 = v (row).
// Gradients flow into both the source and the coordinates; the coordinate
// gradient is zero where the sample is clamped to the border.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> bilinear_sample(const Tensor<S>& src, const Tensor<S>& coords) {
  MISM_CHECK(src.rank() == 3 && coords.rank() == 3 && coords.shape()[0] == 2,
             "bilinear_sample: expects (C,H,W) and (2,Hc,Wc)");
  MISM_CHECK(all_finite(coords), "bilinear_sample: non-finite coordinates");
  const Index C = src.shape()[0], H = src.shape()[1], W = src.shape()[2];
  const Index Hc = coords.shape()[1], Wc = coords.shape()[2];
  const Index P = Hc * Wc;
  auto n = detail::make_node<S>(Shape{C, Hc, Wc}, {src, coords});

  const auto& sv = src.values();
  const auto& cv = coords.values();
  for (Index p = 0; p < P; ++p) {
    S u = cv[p], v = cv[P + p];
    const S uc = std::min(std::max(u, S(0)), static_cast<S>(W - 1));
    const S vc = std::min(std::max(v, S(0)), static_cast<S>(H - 1));
    const Index x0 = std::min(static_cast<Index>(std::floor(uc)), W - 1);
    const Index y0 = std::min(static_cast<Index>(std::floor(vc)), H - 1);
    const Index x1 = std::min(x0 + 1, W - 1);
    const Index y1 = std::min(y0 + 1, H - 1);
    const S wx = uc - static_cast<S>(x0);
    const S wy = vc - static_cast<S>(y0);
    for (Index c = 0; c < C; ++c) {
      const S v00 = sv[(c * H + y0) * W + x0], v01 = sv[(c * H + y0) * W + x1];
      const S v10 = sv[(c * H + y1) * W + x0], v11 = sv[(c * H + y1) * W + x1];
      n->values[c * P + p] =
          (S(1) - wy) * ((S(1) - wx) * v00 + wx * v01) + wy * ((S(1) - wx) * v10 + wx * v11);
    }
  }

  if (n->requires_grad) {
    auto sn = src.node(), cn = coords.node();
    n->backward_fn = [sn, cn, C, H, W, P](TensorNode<S>& self) {
      if (sn->requires_grad) sn->ensure_grad();
      if (cn->requires_grad) cn->ensure_grad();
      const auto& sv2 = sn->values;
      const auto& cv2 = cn->values;
      for (Index p = 0; p < P; ++p) {
        S u = cv2[p], v = cv2[P + p];
        const bool in_u = (u > S(0) && u < static_cast<S>(W - 1));
        const bool in_v = (v > S(0) && v < static_cast<S>(H - 1));
        const S uc = std::min(std::max(u, S(0)), static_cast<S>(W - 1));
        const S vc = std::min(std::max(v, S(0)), static_cast<S>(H - 1));
        const Index x0 = std::min(static_cast<Index>(std::floor(uc)), W - 1);
        const Index y0 = std::min(static_cast<Index>(std::floor(vc)), H - 1);
        const Index x1 = std::min(x0 + 1, W - 1);
        const Index y1 = std::min(y0 + 1, H - 1);
        const S wx = uc - static_cast<S>(x0);
        const S wy = vc - static_cast<S>(y0);
        S du = 0, dv = 0;
        for (Index c = 0; c < C; ++c) {
          const S g = self.grad[c * P + p];
          if (g == S(0)) continue;
          const S v00 = sv2[(c * H + y0) * W + x0], v01 = sv2[(c * H + y0) * W + x1];
          const S v10 = sv2[(c * H + y1) * W + x0], v11 = sv2[(c * H + y1) * W + x1];
          if (sn->requires_grad) {
            sn->grad[(c * H + y0) * W + x0] += g * (S(1) - wy) * (S(1) - wx);
            sn->grad[(c * H + y0) * W + x1] += g * (S(1) - wy) * wx;
            sn->grad[(c * H + y1) * W + x0] += g * wy * (S(1) - wx);
            sn->grad[(c * H + y1) * W + x1] += g * wy * wx;
          }
          du += g * ((S(1) - wy) * (v01 - v00) + wy * (v11 - v10));
          dv += g * ((S(1) - wx) * (v10 - v00) + wx * (v11 - v01));
        }
        if (cn->requires_grad) {
          if (in_u) cn->grad[p] += du;
          if (in_v) cn->grad[P + p] += dv;
        }
      }
    };
  }
  return Tensor<S>(std::move(n));
}

// ---------------------------------------------------------------------------
// Spatial crop / replicate pad on (C,H,W)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> crop2d(const Tensor<S>& x, Index y0, Index x0, Index h, Index w) {
  MISM_CHECK(x.rank() == 3, "crop2d: expects (C,H,W)");
  const Index C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  MISM_CHECK(y0 >= 0 && x0 >= 0 && y0 + h <= H && x0 + w <= W, "crop2d: out of range");
  auto n = detail::make_node<S>(Shape{C, h, w}, {x});
  for (Index c = 0; c < C; ++c)
    for (Index y = 0; y < h; ++y)
      n->values.segment((c * h + y) * w, w) =
          x.values().segment((c * H + y0 + y) * W + x0, w);
  if (n->requires_grad) {
    auto xn = x.node();
    n->backward_fn = [xn, C, H, W, y0, x0, h, w](TensorNode<S>& self) {
      xn->ensure_grad();
      for (Index c = 0; c < C; ++c)
        for (Index y = 0; y < h; ++y)
          xn->grad.segment((c * H + y0 + y) * W + x0, w) +=
              self.grad.segment((c * h + y) * w, w);
    };
  }
  return Tensor<S>(std::move(n));
}

template <typename S>
Tensor<S> pad2d_replicate(const Tensor<S>& x, Index p) {
  MISM_CHECK(x.rank() == 3, "pad2d_replicate: expects (C,H,W)");
  const Index C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const Index Ho = H + 2 * p, Wo = W + 2 * p;
  auto n = detail::make_node<S>(Shape{C, Ho, Wo}, {x});
  auto cl = [](Index v, Index n_) { return std::min(std::max(v, Index(0)), n_ - 1); };
  for (Index c = 0; c < C; ++c)
    for (Index y = 0; y < Ho; ++y)
      for (Index xx = 0; xx < Wo; ++xx)
        n->values[(c * Ho + y) * Wo + xx] = x.values()[(c * H + cl(y - p, H)) * W + cl(xx - p, W)];
  if (n->requires_grad) {
    auto xn = x.node();
    n->backward_fn = [xn, C, H, W, Ho, Wo, p, cl](TensorNode<S>& self) {
      xn->ensure_grad();
      for (Index c = 0; c < C; ++c)
        for (Index y = 0; y < Ho; ++y)
          for (Index xx = 0; xx < Wo; ++xx)
            xn->grad[(c * H + cl(y - p, H)) * W + cl(xx - p, W)] +=
                self.grad[(c * Ho + y) * Wo + xx];
    };
  }
  return Tensor<S>(std::move(n));
}

/// 3x3 box filter with replicate borders (per channel).
template <typename S>
Tensor<S> box_filter3(const Tensor<S>& x) {
  MISM_CHECK(x.rank() == 3, "box_filter3: expects (C,H,W)");
  const Index C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  auto n = detail::make_node<S>(Shape{C, H, W}, {x});
  auto cl = [](Index v, Index n_) { return std::min(std::max(v, Index(0)), n_ - 1); };
  const auto& v = x.values();
  for (Index c = 0; c < C; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index xx = 0; xx < W; ++xx) {
        S acc = 0;
        for (Index dy = -1; dy <= 1; ++dy)
          for (Index dx = -1; dx <= 1; ++dx)
            acc += v[(c * H + cl(y + dy, H)) * W + cl(xx + dx, W)];
        n->values[(c * H + y) * W + xx] = acc / S(9);
      }
  if (n->requires_grad) {
    auto xn = x.node();
    n->backward_fn = [xn, C, H, W, cl](TensorNode<S>& self) {
      xn->ensure_grad();
      for (Index c = 0; c < C; ++c)
        for (Index y = 0; y < H; ++y)
          for (Index xx = 0; xx < W; ++xx) {
            const S g = self.grad[(c * H + y) * W + xx] / S(9);
            for (Index dy = -1; dy <= 1; ++dy)
              for (Index dx = -1; dx <= 1; ++dx)
                xn->grad[(c * H + cl(y + dy, H)) * W + cl(xx + dx, W)] += g;
          }
    };
  }
  return Tensor<S>(std::move(n));
}

/// Swap the first two dims of a rank-4 tensor.
template <typename S>
Tensor<S> swap01(const Tensor<S>& x) {
  MISM_CHECK(x.rank() == 4, "swap01: expects rank 4");
  const Index A = x.shape()[0], B = x.shape()[1];
  const Index inner = x.shape()[2] * x.shape()[3];
  auto n = detail::make_node<S>(Shape{B, A, x.shape()[2], x.shape()[3]}, {x});
  for (Index a = 0; a < A; ++a)
    for (Index b = 0; b < B; ++b)
      n->values.segment((b * A + a) * inner, inner) =
          x.values().segment((a * B + b) * inner, inner);
  if (n->requires_grad) {
    auto xn = x.node();
    n->backward_fn = [xn, A, B, inner](TensorNode<S>& self) {
      xn->ensure_grad();
      for (Index a = 0; a < A; ++a)
        for (Index b = 0; b < B; ++b)
          xn->grad.segment((a * B + b) * inner, inner) +=
              self.grad.segment((b * A + a) * inner, inner);
    };
  }
  return Tensor<S>(std::move(n));
}

/// (C*r*r, h, w) -> (C, r*h, r*w); sub-pixel order row-major (dy*r+dx).
template <typename S>
Tensor<S> pixel_shuffle(const Tensor<S>& x, Index r) {
  MISM_CHECK(x.rank() == 3 && x.shape()[0] % (r * r) == 0, "pixel_shuffle: bad shape");
  const Index C = x.shape()[0] / (r * r), h = x.shape()[1], w = x.shape()[2];
  auto n = detail::make_node<S>(Shape{C, h * r, w * r}, {x});
  for (Index c = 0; c < C; ++c)
    for (Index dy = 0; dy < r; ++dy)
      for (Index dx = 0; dx < r; ++dx) {
        const Index ci = c * r * r + dy * r + dx;
        for (Index y = 0; y < h; ++y)
          for (Index xx = 0; xx < w; ++xx)
            n->values[(c * h * r + y * r + dy) * w * r + xx * r + dx] =
                x.values()[(ci * h + y) * w + xx];
      }
  if (n->requires_grad) {
    auto xn = x.node();
    n->backward_fn = [xn, C, h, w, r](TensorNode<S>& self) {
      xn->ensure_grad();
      for (Index c = 0; c < C; ++c)
        for (Index dy = 0; dy < r; ++dy)
          for (Index dx = 0; dx < r; ++dx) {
            const Index ci = c * r * r + dy * r + dx;
            for (Index y = 0; y < h; ++y)
              for (Index xx = 0; xx < w; ++xx)
                xn->grad[(ci * h + y) * w + xx] +=
                    self.grad[(c * h * r + y * r + dy) * w * r + xx * r + dx];
          }
    };
  }
  return Tensor<S>(std::move(n));
}

}  // namespace mism
