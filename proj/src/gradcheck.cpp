#include "hrsketch/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hrsketch {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradient(const std::function<Tensor()>& loss_fn, Tensor param,
                               double step, std::size_t max_probes, Rng* rng) {
  param.set_requires_grad(true);
  param.zero_grad();
  Tensor loss = loss_fn();
  backward(loss);
  const std::size_t n = param.numel();
  std::vector<double> analytic = param.has_grad()
                                     ? std::vector<double>(param.grad().begin(), param.grad().end())
                                     : std::vector<double>(n, 0.0);

  std::vector<std::size_t> probes(n);
  std::iota(probes.begin(), probes.end(), 0);
  if (max_probes != 0 && max_probes < n && rng != nullptr) {
    for (std::size_t i = 0; i < max_probes; ++i) {
      std::swap(probes[i], probes[i + uniform_index(*rng, n - i)]);
    }
    probes.resize(max_probes);
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  auto values = param.mutable_values();
  for (std::size_t idx : probes) {
    const double saved = values[idx];
    values[idx] = saved + step;
    const double up = loss_fn().item();
    values[idx] = saved - step;
    const double down = loss_fn().item();
    values[idx] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double err = relative_error(analytic[idx], numeric);
    if (err >= result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = idx;
      result.worst_analytic = analytic[idx];
      result.worst_numeric = numeric;
    }
    ++result.probes;
  }
  param.zero_grad();
  return result;
}

std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> x, double step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f(x);
    x[i] = saved - step;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

}  // namespace hrsketch
