#include "mism/networks.hpp"

#include "mism/pipeline.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <filesystem>

using namespace mism;
using mism::testing::random_tensor;

namespace {
namespace fs = std::filesystem;

TrainConfig toy_config() {
  TrainConfig c;
  c.height = 32;
  c.width = 64;
  c.variant = "tiny";
  c.groups = 4;
  c.feature_channels = 8;
  c.reg_base = 4;
  c.n_hypotheses = 6;
  return c;
}

}  // namespace

TEST_CASE("s_depthnet: depth range, determinism, finite outputs") {
  Rng rng(501);
  SDepthNet<double> net(NetworkConfig::for_variant(Variant::tiny), rng);
  auto img = random_tensor(rng, Shape{3, 32, 64}, 0.0, 1.0);
  auto depths = net.forward(img);
  CHECK(depths.size() == 1);
  CHECK(depths[0].shape() == Shape{1, 32, 64});
  CHECK(depths[0].values().minCoeff() >= 0.1);
  CHECK(depths[0].values().maxCoeff() <= 100.0);
  CHECK(all_finite(depths[0]));

  // bit-identical reforward
  auto again = net.forward(img);
  CHECK((again[0].values() - depths[0].values()).abs().maxCoeff() == 0.0);

  // same seed, fresh net: identical construction
  Rng rng2(501);
  SDepthNet<double> net2(NetworkConfig::for_variant(Variant::tiny), rng2);
  auto third = net2.forward(img);
  CHECK((third[0].values() - depths[0].values()).abs().maxCoeff() == 0.0);
}

TEST_CASE("s_depthnet: scale counts per variant") {
  Rng rng(503);
  SDepthNet<double> hrnet(NetworkConfig::for_variant(Variant::hrnet_like), rng);
  SDepthNet<double> resnet(NetworkConfig::for_variant(Variant::resnet_like), rng);
  auto img = random_tensor(rng, Shape{3, 32, 64}, 0.0, 1.0);
  CHECK(hrnet.forward(img).size() == 1);
  auto multi = resnet.forward(img);
  CHECK(multi.size() == 4);
  for (const auto& d : multi) {
    CHECK(d.shape() == Shape{1, 32, 64});  // D18: everything upsampled to full
    CHECK(d.values().minCoeff() >= 0.1);
    CHECK(d.values().maxCoeff() <= 100.0);
  }
}

TEST_CASE("posenet: shape, zero-init identity, determinism") {
  Rng rng(509);
  PoseNet<double> net(NetworkConfig::for_variant(Variant::tiny), rng);
  auto a = random_tensor(rng, Shape{3, 32, 64}, 0.0, 1.0);
  auto b = random_tensor(rng, Shape{3, 32, 64}, 0.0, 1.0);
  auto p = net.forward(a, b);
  CHECK(p.shape() == Shape{6});
  // zero-initialized head: identity transform before any training
  CHECK(p.values().abs().maxCoeff() == 0.0);
  auto M = pose_matrix(p, false);
  auto T = transform_from_tensor(M);
  CHECK((T.rotation - Mat3<double>::Identity()).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK(T.translation.norm() == 0.0);

  auto p2 = net.forward(a, b);
  CHECK((p2.values() - p.values()).abs().maxCoeff() == 0.0);
}

TEST_CASE("featnet: shape contract, weight sharing, parameter budget") {
  Rng rng(521);
  NetworkConfig cfg = NetworkConfig::for_variant(Variant::tiny);
  FeatNet<double> net(cfg, rng);
  auto img = random_tensor(rng, Shape{3, 32, 64}, 0.0, 1.0);
  auto f = net.forward(img);
  CHECK(f.shape() == Shape{32, 8, 16});
  CHECK(all_finite(f));
  auto f2 = net.forward(img);
  CHECK((f2.values() - f.values()).abs().maxCoeff() == 0.0);

  ParamRegistry<double> r;
  net.register_params(r, "feat");
  CHECK(r.total_params() < 100000);
}

TEST_CASE("network parameter counts are architecture-deterministic") {
  auto count = [](Variant v) {
    Rng rng(1);
    SDepthNet<double> s(NetworkConfig::for_variant(v), rng);
    PoseNet<double> p(NetworkConfig::for_variant(v), rng);
    ParamRegistry<double> r;
    s.register_params(r, "s");
    p.register_params(r, "p");
    return r.total_params();
  };
  const Index tiny1 = count(Variant::tiny);
  const Index tiny2 = count(Variant::tiny);
  CHECK(tiny1 == tiny2);
  CHECK(tiny1 > 0);
  CHECK(count(Variant::resnet_like) > tiny1);
}

TEST_CASE("checkpoint: save/load/save is byte-identical; contents per stage") {
  TrainConfig cfg = toy_config();
  Rng rng(cfg.seed);
  TeacherModel<double> teacher(cfg, rng);
  teacher.delta.delta.values()[3] = 1.7;  // make delta non-trivial

  auto dir = fs::temp_directory_path() / "mism_ckpt_test";
  fs::create_directories(dir);
  const std::string p1 = (dir / "t1.ckpt").string();
  const std::string p2 = (dir / "t2.ckpt").string();
  save_teacher_checkpoint(teacher, p1);
  auto loaded = load_teacher_checkpoint<double>(p1);
  save_teacher_checkpoint(loaded, p2);
  {
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(!b1.empty());
  }
  CHECK(param_hash(loaded.params()) == param_hash(teacher.params()));
  CHECK((loaded.delta.delta.values() - teacher.delta.delta.values()).abs().maxCoeff() == 0.0);
  CHECK(loaded.delta.h() == cfg.height / 4);

  // teacher checkpoint carries delta; student checkpoint has no matching stack
  CheckpointData draw = read_checkpoint_file(p1);
  CHECK(draw.find("pads.delta") != nullptr);

  StudentModel<double> student(cfg, rng);
  const std::string ps = (dir / "s.ckpt").string();
  save_student_checkpoint(student, ps);
  CheckpointData sraw = read_checkpoint_file(ps);
  CHECK(sraw.stage == "student");
  CHECK(sraw.find("pads.delta") == nullptr);
  for (const auto& a : sraw.arrays) {
    CHECK(a.name.find("feat") == std::string::npos);
    CHECK(a.name.find("reg") == std::string::npos);
    CHECK(a.name.find("up_head") == std::string::npos);
  }

  // loading a student file as a teacher fails; missing delta fails
  CHECK_THROWS(load_teacher_checkpoint<double>(ps));
  CheckpointData no_delta = draw;
  no_delta.arrays.pop_back();  // delta is the last array
  const std::string pnd = (dir / "nd.ckpt").string();
  write_checkpoint_file(pnd, no_delta);
  CHECK_THROWS(load_teacher_checkpoint<double>(pnd));

  // corrupt magic
  {
    std::ofstream bad((dir / "bad.ckpt").string(), std::ios::binary);
    bad << "MISM-CKPT-2 something";
  }
  CHECK_THROWS(read_checkpoint_file((dir / "bad.ckpt").string()));

  // dtype mismatch
  CHECK_THROWS(load_teacher_checkpoint<float>(p1));
  fs::remove_all(dir);
}

TEST_CASE("activation-range audit: forward passes stay finite on [0,1] inputs") {
  Rng rng(547);
  TrainConfig cfg = toy_config();
  TeacherModel<double> m(cfg, rng);
  for (int t = 0; t < 3; ++t) {
    auto img = random_tensor(rng, Shape{3, cfg.height, cfg.width}, 0.0, 1.0);
    auto prev = random_tensor(rng, Shape{3, cfg.height, cfg.width}, 0.0, 1.0);
    CHECK(all_finite(m.s_depth.forward(img)[0]));
    CHECK(all_finite(m.pose.forward(prev, img)));
    CHECK(all_finite(m.feat.forward(img)));
    auto f = m.feat.forward(img);
    CHECK(all_finite(m.up_head.forward(f)));
  }
}
