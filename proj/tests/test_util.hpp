#pragma once

#include "mism/random.hpp"
#include "mism/tensor.hpp"

#include <cmath>
#include <functional>

namespace mism::testing {

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

/// Central finite-difference check of d(fn)/d(leaf) at `n_probe` random
/// entries of `leaf`. `fn` must rebuild the scalar loss from the leaf tensor.
inline double max_grad_rel_err(Tensor<double>& leaf,
                               const std::function<Tensor<double>()>& fn, Rng& rng,
                               int n_probe = 16, double step = 1e-4) {
  leaf.set_requires_grad(true);
  leaf.zero_grad();
  Tensor<double> loss = fn();
  loss.backward();
  Vec<double> analytic = leaf.grad();

  double worst = 0.0;
  for (int k = 0; k < n_probe; ++k) {
    const Index i = static_cast<Index>(rng.uniform_int(static_cast<uint64_t>(leaf.numel())));
    const double v0 = leaf.values()[i];
    leaf.values()[i] = v0 + step;
    const double up = fn().value();
    leaf.values()[i] = v0 - step;
    const double dn = fn().value();
    leaf.values()[i] = v0;
    const double fd = (up - dn) / (2.0 * step);
    const double a = analytic[i];
    // ignore joint zeros (flat regions)
    if (std::abs(fd) < 1e-10 && std::abs(a) < 1e-10) continue;
    worst = std::max(worst, rel_err(a, fd));
  }
  return worst;
}

inline Tensor<double> random_tensor(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  Vec<double> v(s.numel());
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(lo, hi);
  return Tensor<double>::from(s, std::move(v));
}

}  // namespace mism::testing
