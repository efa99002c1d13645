#include "mism/pads.hpp"

#include "test_util.hpp"

#include <doctest.h>

using namespace mism;
using mism::testing::random_tensor;

TEST_CASE("downsample_depth: constants, shape, divisibility") {
  auto d = Tensor<double>::filled(Shape{1, 16, 32}, 5.0);
  auto out = downsample_depth(d);
  CHECK(out.shape() == Shape{1, 4, 8});
  CHECK((out.values() - 5.0).abs().maxCoeff() < 1e-12);
  CHECK((out.values() > 0.0).all());
  CHECK_THROWS(downsample_depth(Tensor<double>::filled(Shape{1, 15, 32}, 1.0)));
}

TEST_CASE("downsample_depth tracks an average-pool oracle at region interiors") {
  // uniform field with one 4x4 block of 8.0
  auto d = Tensor<double>::filled(Shape{1, 16, 16}, 2.0);
  for (Index y = 4; y < 8; ++y)
    for (Index x = 4; x < 8; ++x) d.values()[y * 16 + x] = 8.0;
  auto out = downsample_depth(d);
  // average-pool oracle for the coarse pixel covering the block
  double pool = 0.0;
  for (Index y = 4; y < 8; ++y)
    for (Index x = 4; x < 8; ++x) pool += d.at(0, y, x);
  pool /= 16.0;
  CHECK(std::abs(out.at(0, 1, 1) - pool) / pool < 0.10);

  // random smooth fields: bilinear result within 10% of 4x4 average pooling
  Rng rng(211);
  for (int t = 0; t < 5; ++t) {
    auto field = Tensor<double>::filled(Shape{1, 16, 16}, 0.0);
    const double a = rng.uniform(3.0, 6.0), bx = rng.uniform(0.05, 0.2), by = rng.uniform(0.05, 0.2);
    for (Index y = 0; y < 16; ++y)
      for (Index x = 0; x < 16; ++x)
        field.values()[y * 16 + x] = a + std::sin(bx * x) + std::cos(by * y);
    auto coarse = downsample_depth(field);
    for (Index cy = 1; cy < 3; ++cy)
      for (Index cx = 1; cx < 3; ++cx) {
        double avg = 0.0;
        for (Index y = 0; y < 4; ++y)
          for (Index x = 0; x < 4; ++x) avg += field.at(0, cy * 4 + y, cx * 4 + x);
        avg /= 16.0;
        CHECK(std::abs(coarse.at(0, cy, cx) - avg) / avg < 0.10);
      }
  }
}

TEST_CASE("compute_range: direct arithmetic and degenerate width") {
  auto prior = Tensor<double>::filled(Shape{1, 2, 2}, 4.0);
  auto u = UncertaintyMap<double>::fixed(2, 2, 0.3);
  auto r = compute_range(prior, u);
  CHECK(r.d_min.at(0, 0, 0) == doctest::Approx(4.0 / 1.3).epsilon(1e-6));
  CHECK(r.d_max.at(0, 0, 0) == doctest::Approx(5.2).epsilon(1e-9));

  auto u0 = UncertaintyMap<double>::fixed(2, 2, 0.0);
  auto r0 = compute_range(prior, u0);
  CHECK((r0.d_min.values() - r0.d_max.values()).abs().maxCoeff() == 0.0);
}

TEST_CASE("compute_range keeps the prior as the geometric mean") {
  Rng rng(223);
  auto prior = random_tensor(rng, Shape{1, 3, 4}, 0.5, 40.0);
  auto delta = random_tensor(rng, Shape{1, 3, 4}, 0.0, 2.0);
  auto r = compute_range(prior, UncertaintyMap<double>{delta});
  Vec<double> lhs = r.d_min.values() * r.d_max.values();
  Vec<double> rhs = prior.values().square();
  CHECK(((lhs - rhs).abs() / rhs).maxCoeff() < 1e-12);
}

TEST_CASE("sample_hypotheses: hand case 2..8 with N=4") {
  DepthRange<double> r{Tensor<double>::filled(Shape{1, 1, 1}, 2.0),
                       Tensor<double>::filled(Shape{1, 1, 1}, 8.0)};
  auto h = sample_hypotheses(r, 4);
  CHECK(h.shape() == Shape{4, 1, 1});
  CHECK(std::abs(h.at(0, 0, 0) - 8.0) < 1e-6);
  CHECK(std::abs(h.at(1, 0, 0) - 4.0) < 1e-6);
  CHECK(std::abs(h.at(2, 0, 0) - 8.0 / 3.0) < 1e-6);
  CHECK(std::abs(h.at(3, 0, 0) - 2.0) < 1e-6);
}

TEST_CASE("sample_hypotheses: endpoints exact, zero width, N guard") {
  Rng rng(227);
  auto prior = random_tensor(rng, Shape{1, 2, 3}, 1.0, 30.0);
  auto delta = random_tensor(rng, Shape{1, 2, 3}, 0.01, 1.5);
  auto r = compute_range(prior, UncertaintyMap<double>{delta});
  auto h = sample_hypotheses(r, 16);
  for (Index p = 0; p < 6; ++p) {
    CHECK(h.values()[0 * 6 + p] == doctest::Approx(r.d_max.values()[p]).epsilon(1e-12));
    CHECK(h.values()[15 * 6 + p] == doctest::Approx(r.d_min.values()[p]).epsilon(1e-12));
    // strictly decreasing
    for (Index i = 1; i < 16; ++i) CHECK(h.values()[i * 6 + p] < h.values()[(i - 1) * 6 + p]);
  }

  DepthRange<double> flat{Tensor<double>::filled(Shape{1, 1, 1}, 5.0),
                          Tensor<double>::filled(Shape{1, 1, 1}, 5.0)};
  auto hf = sample_hypotheses(flat, 7);
  CHECK((hf.values() - 5.0).abs().maxCoeff() < 1e-12);

  CHECK_THROWS(sample_hypotheses(flat, 1));
}

TEST_CASE("hypothesis inverse depths are uniformly spaced") {
  Rng rng(229);
  auto prior = random_tensor(rng, Shape{1, 4, 4}, 2.0, 50.0);
  auto delta = random_tensor(rng, Shape{1, 4, 4}, 0.05, 1.0);
  auto h = sample_hypotheses(compute_range(prior, UncertaintyMap<double>{delta}), 16);
  for (Index p = 0; p < 16; ++p) {
    const double step0 = 1.0 / h.values()[1 * 16 + p] - 1.0 / h.values()[0 * 16 + p];
    for (Index i = 2; i < 16; ++i) {
      const double step = 1.0 / h.values()[i * 16 + p] - 1.0 / h.values()[(i - 1) * 16 + p];
      CHECK(std::abs(step - step0) < 1e-7);
    }
  }
}

TEST_CASE("update_uncertainty: EMA arithmetic") {
  auto ds = Tensor<double>::filled(Shape{1, 1, 1}, 10.0);
  auto dm = Tensor<double>::filled(Shape{1, 1, 1}, 8.0);
  auto u = UncertaintyMap<double>::ones(1, 1);
  update_uncertainty(u, ds, dm, 1.2);
  CHECK(std::abs(u.delta.at(0, 0, 0) - 0.993) < 1e-9);

  // equal depths decay delta by 0.99
  auto u2 = UncertaintyMap<double>::fixed(1, 1, 0.4);
  update_uncertainty(u2, ds, ds, 1.2);
  CHECK(u2.delta.at(0, 0, 0) == doctest::Approx(0.99 * 0.4).epsilon(1e-12));
}

TEST_CASE("update_uncertainty is symmetric in its depth arguments") {
  Rng rng(233);
  auto a = random_tensor(rng, Shape{1, 3, 3}, 1.0, 20.0);
  auto b = random_tensor(rng, Shape{1, 3, 3}, 1.0, 20.0);
  auto u1 = UncertaintyMap<double>::ones(3, 3);
  auto u2 = UncertaintyMap<double>::ones(3, 3);
  update_uncertainty(u1, a, b);
  update_uncertainty(u2, b, a);
  CHECK((u1.delta.values() - u2.delta.values()).abs().maxCoeff() == 0.0);
}

TEST_CASE("update monotonicity: larger log-ratio magnitude never decreases delta'") {
  auto dm = Tensor<double>::filled(Shape{1, 1, 1}, 5.0);
  double prev = -1.0;
  for (double f : {1.0, 1.1, 1.3, 1.8, 2.5, 4.0}) {
    auto ds = Tensor<double>::filled(Shape{1, 1, 1}, 5.0 * f);
    auto u = UncertaintyMap<double>::fixed(1, 1, 0.0);
    update_uncertainty(u, ds, dm, 1.2);  // delta = 0.01 * delta'
    CHECK(u.delta.at(0, 0, 0) >= prev);
    prev = u.delta.at(0, 0, 0);
    // reciprocal ratio gives the same delta'
    auto ds_inv = Tensor<double>::filled(Shape{1, 1, 1}, 5.0 / f);
    auto u2 = UncertaintyMap<double>::fixed(1, 1, 0.0);
    update_uncertainty(u2, ds_inv, dm, 1.2);
    CHECK(u2.delta.at(0, 0, 0) == doctest::Approx(u.delta.at(0, 0, 0)).epsilon(1e-9));
  }
}

TEST_CASE("EMA keeps delta within [0, max(delta0, bound)]") {
  Rng rng(239);
  auto u = UncertaintyMap<double>::ones(2, 2);
  double bound = 1.2 * (3.0 - 1.0);  // ratios capped at 3 below
  for (int step = 0; step < 500; ++step) {
    auto ds = random_tensor(rng, Shape{1, 2, 2}, 2.0, 6.0);
    auto dm = random_tensor(rng, Shape{1, 2, 2}, 2.0, 6.0);
    update_uncertainty(u, ds, dm);
    CHECK(u.delta.values().minCoeff() >= 0.0);
    CHECK(u.delta.values().maxCoeff() <= std::max(1.0, bound) + 1e-12);
  }
}
