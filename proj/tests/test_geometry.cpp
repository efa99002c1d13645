#include "mism/geometry.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <thread>

#include <Eigen/Dense>

using namespace mism;
using mism::testing::max_grad_rel_err;
using mism::testing::random_tensor;

namespace {

// Independent per-pixel oracle: 4x4 homogeneous matrix route.
Eigen::Vector2d project_oracle(double u, double v, double depth, const Eigen::Matrix3d& K,
                               const Eigen::Matrix3d& R, const Eigen::Vector3d& t) {
  Eigen::Matrix4d Kinv4 = Eigen::Matrix4d::Identity();
  Kinv4.topLeftCorner<3, 3>() = K.inverse();
  Eigen::Matrix4d T4 = Eigen::Matrix4d::Identity();
  T4.topLeftCorner<3, 3>() = R;
  T4.topRightCorner<3, 1>() = t;
  Eigen::Matrix4d K4 = Eigen::Matrix4d::Identity();
  K4.topLeftCorner<3, 3>() = K;

  Eigen::Vector4d p(u, v, 1.0, 1.0);
  Eigen::Vector4d X = Kinv4 * p;
  X.head<3>() *= depth;
  Eigen::Vector4d q = K4 * (T4 * X);
  return {q.x() / q.z(), q.y() / q.z()};
}

RigidTransform<double> random_transform(Rng& rng, double rot_mag, double trans_mag) {
  Vec3<double> axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  PoseParams<double> p;
  p.axis_angle = axis * rng.uniform(0.0, rot_mag);
  p.translation = Vec3<double>(rng.uniform(-trans_mag, trans_mag),
                               rng.uniform(-trans_mag, trans_mag),
                               rng.uniform(-trans_mag, trans_mag));
  return pose_from_params(p);
}

}  // namespace

TEST_CASE("intrinsics invariants") {
  auto K = Intrinsics<double>::from_focal(100, 120, 50, 40);
  CHECK(K.fx() == 100.0);
  CHECK((K.matrix() * K.inverse() - Mat3<double>::Identity()).lpNorm<Eigen::Infinity>() < 1e-12);
  auto Kq = K.scaled(0.25, 0.25);
  CHECK(Kq.fx() == doctest::Approx(25.0));
  CHECK(Kq.cy() == doctest::Approx(10.0));
  Mat3<double> bad = Mat3<double>::Identity();
  bad(0, 0) = -1.0;
  CHECK_THROWS(Intrinsics<double>(bad));
}

TEST_CASE("project_pixels: identity K and pose maps pixels to themselves") {
  auto depth = Tensor<double>::filled(Shape{1, 3, 4}, 5.0);
  auto proj = project_pixels(depth, Intrinsics<double>::identity(),
                             pose_tensor(RigidTransform<double>::identity()));
  for (Index y = 0; y < 3; ++y)
    for (Index x = 0; x < 4; ++x) {
      CHECK(proj.coords.at(0, y, x) == doctest::Approx(double(x)).epsilon(1e-12));
      CHECK(proj.coords.at(1, y, x) == doctest::Approx(double(y)).epsilon(1e-12));
    }
  CHECK(proj.valid.all());
}

TEST_CASE("project_pixels: identity pose cancels K·K⁻¹ for any intrinsics") {
  auto K = Intrinsics<double>::from_focal(100, 100, 50, 50);
  auto depth = Tensor<double>::filled(Shape{1, 4, 4}, 3.0);
  auto proj = project_pixels(depth, K, pose_tensor(RigidTransform<double>::identity()));
  for (Index y = 0; y < 4; ++y)
    for (Index x = 0; x < 4; ++x) {
      CHECK(proj.coords.at(0, y, x) == doctest::Approx(double(x)).epsilon(1e-10));
      CHECK(proj.coords.at(1, y, x) == doctest::Approx(double(y)).epsilon(1e-10));
    }
}

TEST_CASE("project_pixels: unit x-translation at depth 2 shifts u by 0.5") {
  RigidTransform<double> T;
  T.translation = Vec3<double>(1.0, 0.0, 0.0);
  auto depth = Tensor<double>::filled(Shape{1, 3, 3}, 2.0);
  auto proj = project_pixels(depth, Intrinsics<double>::identity(), pose_tensor(T));
  for (Index y = 0; y < 3; ++y)
    for (Index x = 0; x < 3; ++x) {
      CHECK(proj.coords.at(0, y, x) == doctest::Approx(double(x) + 0.5));
      CHECK(proj.coords.at(1, y, x) == doctest::Approx(double(y)));
      // cross-check the same pixel against the homogeneous oracle
      auto ref = project_oracle(double(x), double(y), 2.0, Eigen::Matrix3d::Identity(),
                                T.rotation, T.translation);
      CHECK(proj.coords.at(0, y, x) == doctest::Approx(ref.x()).epsilon(1e-12));
      CHECK(proj.coords.at(1, y, x) == doctest::Approx(ref.y()).epsilon(1e-12));
    }
}

TEST_CASE("project_pixels matches the homogeneous oracle on random instances") {
  Rng rng(101);
  for (int inst = 0; inst < 20; ++inst) {
    const Index H = 5, W = 7;
    auto K = Intrinsics<double>::from_focal(rng.uniform(50, 200), rng.uniform(50, 200),
                                            rng.uniform(2, 5), rng.uniform(1, 4));
    auto T = random_transform(rng, 0.2, 0.5);
    auto depth = random_tensor(rng, Shape{1, H, W}, 2.0, 10.0);
    auto proj = project_pixels(depth, K, pose_tensor(T));
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        auto ref = project_oracle(double(x), double(y), depth.at(0, y, x), K.matrix(),
                                  T.rotation, T.translation);
        CHECK(std::abs(proj.coords.at(0, y, x) - ref.x()) < 1e-5);
        CHECK(std::abs(proj.coords.at(1, y, x) - ref.y()) < 1e-5);
      }
  }
}

TEST_CASE("project_pixels: z behind the camera flags invalid, no throw") {
  RigidTransform<double> T;
  T.translation = Vec3<double>(0.0, 0.0, -10.0);  // pushes all points behind
  auto depth = Tensor<double>::filled(Shape{1, 2, 2}, 1.0);
  auto proj = project_pixels(depth, Intrinsics<double>::identity(), pose_tensor(T));
  CHECK(!proj.valid.any());
  CHECK(all_finite(proj.coords));
}

TEST_CASE("project_pixels rejects non-finite input") {
  auto depth = Tensor<double>::filled(Shape{1, 2, 2}, 1.0);
  depth.values()[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(project_pixels(depth, Intrinsics<double>::identity(),
                              pose_tensor(RigidTransform<double>::identity())));
}

TEST_CASE("warp_image: identity pose reproduces the context image") {
  Rng rng(103);
  auto img = random_tensor(rng, Shape{3, 6, 8}, 0.0, 1.0);
  auto depth = random_tensor(rng, Shape{1, 6, 8}, 1.0, 9.0);
  auto out = warp_image(img, depth, Intrinsics<double>::identity(),
                        pose_tensor(RigidTransform<double>::identity()));
  CHECK((out.values() - img.values()).abs().maxCoeff() < 1e-6);
}

TEST_CASE("warp_image: constant-color context stays constant under any motion") {
  Rng rng(107);
  auto img = Tensor<double>::filled(Shape{3, 5, 6}, 0.42);
  auto depth = random_tensor(rng, Shape{1, 5, 6}, 1.0, 8.0);
  auto T = random_transform(rng, 0.3, 1.0);
  auto out = warp_image(img, depth, Intrinsics<double>::from_focal(40, 40, 3, 2), pose_tensor(T));
  CHECK((out.values() - 0.42).abs().maxCoeff() < 1e-12);
}

TEST_CASE("pose_from_params: zero params give identity") {
  PoseParams<double> p;
  auto T = pose_from_params(p);
  CHECK((T.rotation - Mat3<double>::Identity()).lpNorm<Eigen::Infinity>() < 1e-15);
  CHECK(T.translation.norm() == 0.0);
}

TEST_CASE("pose_from_params: quarter turn about z matches the closed form") {
  PoseParams<double> p;
  p.axis_angle = Vec3<double>(0, 0, M_PI / 2);
  auto T = pose_from_params(p);
  Mat3<double> expect;
  expect << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((T.rotation - expect).lpNorm<Eigen::Infinity>() < 1e-12);

  // independent Rodrigues with the normalized-axis formulation
  Rng rng(109);
  for (int i = 0; i < 20; ++i) {
    Vec3<double> w(rng.normal(), rng.normal(), rng.normal());
    const double theta = w.norm();
    Vec3<double> a = w / theta;
    Mat3<double> Kx;
    Kx << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
    Mat3<double> ref =
        Mat3<double>::Identity() + std::sin(theta) * Kx + (1 - std::cos(theta)) * Kx * Kx;
    CHECK((rodrigues(w) - ref).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("pose_from_params: invert composes to identity") {
  Rng rng(113);
  for (int i = 0; i < 10; ++i) {
    PoseParams<double> p;
    p.axis_angle = Vec3<double>(rng.normal(), rng.normal(), rng.normal()) * 0.5;
    p.translation = Vec3<double>(rng.normal(), rng.normal(), rng.normal());
    auto T = pose_from_params(p, false) * pose_from_params(p, true);
    CHECK((T.rotation - Mat3<double>::Identity()).lpNorm<Eigen::Infinity>() < 1e-6);
    CHECK(T.translation.norm() < 1e-6);
    pose_from_params(p).validate();
  }
}

TEST_CASE("pose_matrix agrees with pose_from_params and differentiates") {
  Rng rng(127);
  for (int i = 0; i < 5; ++i) {
    std::vector<double> pv(6);
    for (auto& v : pv) v = rng.uniform(-0.8, 0.8);
    auto params = Tensor<double>::from(Shape{6}, pv);
    for (bool inv : {false, true}) {
      auto M = pose_matrix(params, inv);
      PoseParams<double> p;
      p.axis_angle = Vec3<double>(pv[0], pv[1], pv[2]);
      p.translation = Vec3<double>(pv[3], pv[4], pv[5]);
      auto T = pose_from_params(p, inv);
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) CHECK(M.at(r, c) == doctest::Approx(T.rotation(r, c)).epsilon(1e-10));
        CHECK(M.at(r, 3) == doctest::Approx(T.translation(r)).epsilon(1e-10));
      }
    }
  }
  // gradient through the full Rodrigues branch and the small-angle branch
  auto params = random_tensor(rng, Shape{6}, -0.5, 0.5);
  CHECK(max_grad_rel_err(params, [&] { return sum(square(pose_matrix(params, true))); }, rng) < 1e-4);
  // linear functional keeps the small-angle branch FD well-conditioned
  auto probe = random_tensor(rng, Shape{3, 4}, -1.0, 1.0);
  auto tiny = random_tensor(rng, Shape{6}, -1e-9, 1e-9);
  CHECK(max_grad_rel_err(tiny, [&] { return sum(pose_matrix(tiny, false) * probe); }, rng,
                         12, 1e-7) < 1e-3);
}

TEST_CASE("warp gradients match finite differences (depth and translation)") {
  Rng rng(131);
  const Index H = 6, W = 8;
  auto K = Intrinsics<double>::from_focal(20, 20, W / 2.0, H / 2.0);
  auto img = random_tensor(rng, Shape{3, H, W}, 0.0, 1.0);
  auto depth = random_tensor(rng, Shape{1, H, W}, 2.0, 6.0);
  auto params = random_tensor(rng, Shape{6}, -0.05, 0.05);

  auto loss = [&] {
    return sum(square(warp_image(img, depth, K, pose_matrix(params, false))));
  };
  CHECK(max_grad_rel_err(depth, loss, rng, 40, 1e-5) < 1e-3);
  CHECK(max_grad_rel_err(params, loss, rng, 12, 1e-6) < 1e-3);
}

TEST_CASE("geometry ops are safe to call concurrently") {
  Rng rng(137);
  auto img = random_tensor(rng, Shape{3, 8, 8}, 0.0, 1.0);
  auto depth = random_tensor(rng, Shape{1, 8, 8}, 1.0, 5.0);
  auto K = Intrinsics<double>::from_focal(10, 10, 4, 4);
  auto T = random_transform(rng, 0.1, 0.2);
  Vec<double> ref = warp_image(img, depth, K, pose_tensor(T)).values();

  std::vector<std::thread> workers;
  std::array<bool, 4> ok{};
  for (int t = 0; t < 4; ++t)
    workers.emplace_back([&, t] {
      auto out = warp_image(img, depth, K, pose_tensor(T));
      ok[static_cast<size_t>(t)] = (out.values() - ref).abs().maxCoeff() == 0.0;
    });
  for (auto& w : workers) w.join();
  for (bool b : ok) CHECK(b);
}
