#pragma once

#include "mism/ops.hpp"
#include "mism/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>

namespace mism {

template <typename S>
using Mat3 = Eigen::Matrix<S, 3, 3>;
template <typename S>
using Vec3 = Eigen::Matrix<S, 3, 1>;

inline constexpr double kZEpsilon = 1e-4;  // meters; smaller z counts as behind the camera

/// Pinhole intrinsics with cached inverse. Pixel convention: (u,v) =
/// (column,row), origin at the top-left pixel center.
template <typename S>
class Intrinsics {
 public:
  Intrinsics() : K_(Mat3<S>::Identity()), Kinv_(Mat3<S>::Identity()) {}
  explicit Intrinsics(const Mat3<S>& K) : K_(K), Kinv_(K.inverse()) { validate(); }

  static Intrinsics from_focal(S fx, S fy, S cx, S cy) {
    Mat3<S> K = Mat3<S>::Identity();
    K(0, 0) = fx;
    K(1, 1) = fy;
    K(0, 2) = cx;
    K(1, 2) = cy;
    return Intrinsics(K);
  }
  static Intrinsics identity() { return Intrinsics(Mat3<S>::Identity()); }

  const Mat3<S>& matrix() const { return K_; }
  const Mat3<S>& inverse() const { return Kinv_; }
  S fx() const { return K_(0, 0); }
  S fy() const { return K_(1, 1); }
  S cx() const { return K_(0, 2); }
  S cy() const { return K_(1, 2); }

  /// Rescale to another resolution: fx,cx by sx and fy,cy by sy.
  Intrinsics scaled(S sx, S sy) const {
    return from_focal(fx() * sx, fy() * sy, cx() * sx, cy() * sy);
  }

 private:
  void validate() const {
    MISM_CHECK(K_.allFinite(), "Intrinsics: non-finite matrix");
    MISM_CHECK(fx() > S(0) && fy() > S(0), "Intrinsics: focal lengths must be positive");
    MISM_CHECK(K_(2, 0) == S(0) && K_(2, 1) == S(0) && K_(2, 2) == S(1),
               "Intrinsics: last row must be (0,0,1)");
    MISM_CHECK(((K_ * Kinv_ - Mat3<S>::Identity()).template lpNorm<Eigen::Infinity>() < S(1e-5)),
               "Intrinsics: inverse check failed");
  }

  Mat3<S> K_;
  Mat3<S> Kinv_;
};

/// SE(3) camera motion.
template <typename S>
struct RigidTransform {
  Mat3<S> rotation = Mat3<S>::Identity();
  Vec3<S> translation = Vec3<S>::Zero();

  static RigidTransform identity() { return {}; }

  RigidTransform inverse() const {
    RigidTransform out;
    out.rotation = rotation.transpose();
    out.translation = -(rotation.transpose() * translation);
    return out;
  }

  /// this ∘ other (apply `other` first).
  RigidTransform operator*(const RigidTransform& other) const {
    RigidTransform out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }

  Vec3<S> apply(const Vec3<S>& p) const { return rotation * p + translation; }

  void validate(S tol = S(1e-6)) const {
    MISM_CHECK(rotation.allFinite() && translation.allFinite(), "RigidTransform: non-finite");
    MISM_CHECK(((rotation.transpose() * rotation - Mat3<S>::Identity())
                    .template lpNorm<Eigen::Infinity>() < tol),
               "RigidTransform: rotation not orthonormal");
    MISM_CHECK(std::abs(rotation.determinant() - S(1)) < tol,
               "RigidTransform: determinant != +1");
  }
};

/// Axis-angle + translation, the 6-dof parameterization emitted by PoseNet.
template <typename S>
struct PoseParams {
  Vec3<S> axis_angle = Vec3<S>::Zero();
  Vec3<S> translation = Vec3<S>::Zero();
};

/// Rodrigues exponential map (plain, non-autodiff).
template <typename S>
Mat3<S> rodrigues(const Vec3<S>& w) {
  const S theta_sq = w.squaredNorm();
  Mat3<S> K;
  K << S(0), -w.z(), w.y(), w.z(), S(0), -w.x(), -w.y(), w.x(), S(0);
  S a, b;
  if (theta_sq < S(1e-14)) {
    a = S(1) - theta_sq / S(6);
    b = S(0.5) - theta_sq / S(24);
  } else {
    const S theta = std::sqrt(theta_sq);
    a = std::sin(theta) / theta;
    b = (S(1) - std::cos(theta)) / theta_sq;
  }
  return Mat3<S>::Identity() + a * K + b * (K * K);
}

template <typename S>
RigidTransform<S> pose_from_params(const PoseParams<S>& p, bool invert = false) {
  MISM_CHECK(p.axis_angle.allFinite() && p.translation.allFinite(),
             "pose_from_params: non-finite params");
  RigidTransform<S> T;
  T.rotation = rodrigues<S>(p.axis_angle);
  T.translation = p.translation;
  return invert ? T.inverse() : T;
}

// ---------------------------------------------------------------------------
// Differentiable pose path: a 6-vector tensor (axis-angle, translation) is
// turned into a (3,4) [R|t] tensor so gradients reach PoseNet outputs.
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
Tensor<S> dcolcat(const Tensor<S>& left, const Tensor<S>& right) {
  // concat rank-2 tensors along columns
  return transpose2(concat0<S>({transpose2(left), transpose2(right)}));
}

}  // namespace detail

/// Differentiable Rodrigues: params (6) -> rigid transform as a (3,4) tensor.
/// `invert` returns the inverse transform (Rᵀ, -Rᵀt).
template <typename S>
Tensor<S> pose_matrix(const Tensor<S>& params, bool invert = false) {
  MISM_CHECK(params.rank() == 1 && params.shape()[0] == 6, "pose_matrix: expects (6)");
  MISM_CHECK(all_finite(params), "pose_matrix: non-finite params");
  Tensor<S> w = reshape(slice0(params, 0, 3), Shape{3, 1});
  Tensor<S> t = reshape(slice0(params, 3, 3), Shape{3, 1});

  Tensor<S> theta_sq = reshape(sum(square(w)), Shape{1, 1});
  Tensor<S> a, b;  // sin(θ)/θ and (1-cos(θ))/θ²
  if (theta_sq.value() < S(1e-14)) {
    a = S(1) - theta_sq * (S(1) / S(6));
    b = S(0.5) - theta_sq * (S(1) / S(24));
  } else {
    Tensor<S> theta = sqrt(theta_sq);
    a = sin(theta) / theta;
    b = (S(1) - cos(theta)) / theta_sq;
  }

  Tensor<S> wx = slice0(w, 0, 1), wy = slice0(w, 1, 1), wz = slice0(w, 2, 1);
  Tensor<S> zero = Tensor<S>::zeros(Shape{1, 1});
  Tensor<S> skew = reshape(
      concat0<S>({zero, -wz, wy, wz, zero, -wx, -wy, wx, zero}), Shape{3, 3});
  Tensor<S> eye = Tensor<S>::from(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<S> R = eye + skew * a + matmul(skew, skew) * b;

  if (invert) {
    Tensor<S> Rt = transpose2(R);
    return detail::dcolcat(Rt, -matmul(Rt, t));
  }
  return detail::dcolcat(R, t);
}

/// Constant (non-learnable) pose tensor from a RigidTransform.
template <typename S>
Tensor<S> pose_tensor(const RigidTransform<S>& T) {
  std::vector<S> v(12);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) v[static_cast<size_t>(r * 4 + c)] = T.rotation(r, c);
    v[static_cast<size_t>(r * 4 + 3)] = T.translation(r);
  }
  return Tensor<S>::from(Shape{3, 4}, v);
}

template <typename S>
RigidTransform<S> transform_from_tensor(const Tensor<S>& pose) {
  MISM_CHECK(pose.rank() == 2 && pose.shape()[0] == 3 && pose.shape()[1] == 4,
             "transform_from_tensor: expects (3,4)");
  RigidTransform<S> T;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) T.rotation(r, c) = pose.at(r, c);
    T.translation(r) = pose.at(r, 3);
  }
  return T;
}

/// Continuous target-view pixel coordinates plus a per-pixel validity flag
/// (false where the transformed depth fell behind the camera).
template <typename S>
struct Projection {
  Tensor<S> coords;  // (2,H,W); u then v
  Eigen::Array<bool, Eigen::Dynamic, 1> valid;
};

/// Project every pixel of the depth map into the context view:
/// backproject with K⁻¹, move by T, reproject with K, divide by z.
/// Differentiable w.r.t. depth and the pose tensor.
template <typename S>
Projection<S> project_pixels(const Tensor<S>& depth, const Intrinsics<S>& K,
                             const Tensor<S>& pose) {
  MISM_CHECK(depth.rank() == 3 && depth.shape()[0] == 1, "project_pixels: depth must be (1,H,W)");
  MISM_CHECK(all_finite(depth), "project_pixels: non-finite depth");
  MISM_CHECK(all_finite(pose), "project_pixels: non-finite pose");
  const Index H = depth.shape()[1], W = depth.shape()[2];
  const Index P = H * W;

  // constant K⁻¹·(u,v,1) ray grid
  Vec<S> rays(3 * P);
  const Mat3<S>& Ki = K.inverse();
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      const Index p = y * W + x;
      const Vec3<S> h(static_cast<S>(x), static_cast<S>(y), S(1));
      const Vec3<S> r = Ki * h;
      rays[p] = r.x();
      rays[P + p] = r.y();
      rays[2 * P + p] = r.z();
    }
  Tensor<S> ray_grid = Tensor<S>::from(Shape{3, P}, std::move(rays));

  Tensor<S> d = reshape(depth, Shape{1, P});
  Tensor<S> X = ray_grid * d;  // camera-frame points, broadcast over rows

  Tensor<S> poseT = transpose2(pose);                       // (4,3)
  Tensor<S> Rm = transpose2(slice0(poseT, 0, 3));           // (3,3)
  Tensor<S> tm = transpose2(slice0(poseT, 3, 1));           // (3,1)
  Tensor<S> Y = matmul(Rm, X) + tm;                         // (3,P)

  Tensor<S> z = slice0(Y, 2, 1);                            // (1,P)
  Eigen::Array<bool, Eigen::Dynamic, 1> valid = z.values() > static_cast<S>(kZEpsilon);

  std::vector<S> kv(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) kv[static_cast<size_t>(r * 3 + c)] = K.matrix()(r, c);
  Tensor<S> Kt = Tensor<S>::from(Shape{3, 3}, kv);
  Tensor<S> uvh = slice0(matmul(Kt, Y), 0, 2);              // (2,P)
  Tensor<S> zc = clamp_min(z, static_cast<S>(kZEpsilon));
  Tensor<S> coords = reshape(uvh / zc, Shape{2, H, W});
  return {coords, std::move(valid)};
}

/// Synthesize the target view from the context image: project then sample.
template <typename S>
Tensor<S> warp_image(const Tensor<S>& context, const Tensor<S>& depth, const Intrinsics<S>& K,
                     const Tensor<S>& pose) {
  MISM_CHECK(context.rank() == 3, "warp_image: context must be (C,H,W)");
  MISM_CHECK(context.shape()[1] == depth.shape()[1] && context.shape()[2] == depth.shape()[2],
             "warp_image: context/depth shape mismatch");
  return bilinear_sample(context, project_pixels(depth, K, pose).coords);
}

}  // namespace mism
