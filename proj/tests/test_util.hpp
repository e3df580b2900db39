#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "hrsketch/rng.hpp"
#include "hrsketch/tensor.hpp"

namespace testutil {

using namespace hrsketch;

inline Tensor random_tensor(Shape shape, Rng& rng, bool grad = true, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape), 0.0, grad);
  for (double& v : t.mutable_values()) v = uniform(rng, lo, hi);
  return t;
}

// Central differences of a scalar graph w.r.t. every entry of `param`.
inline std::vector<double> central_diff(const std::function<Tensor()>& loss, Tensor param,
                                        double h = 1e-5) {
  NoGradGuard guard;
  auto v = param.mutable_values();
  std::vector<double> g(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double keep = v[i];
    v[i] = keep + h;
    const double up = loss().item();
    v[i] = keep - h;
    const double down = loss().item();
    v[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline std::vector<double> autodiff(const std::function<Tensor()>& loss, Tensor param) {
  param.zero_grad();
  backward(loss());
  auto g = param.grad();
  return {g.begin(), g.end()};
}

// Largest elementwise |a - b| / max(|a|, |b|, floor).
inline double max_rel(const std::vector<double>& a, const std::vector<double>& b,
                      double floor = 1e-3) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double den = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / den);
  }
  return worst;
}

inline std::vector<double> to_vec(const Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

}  // namespace testutil
