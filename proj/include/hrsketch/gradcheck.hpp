#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "hrsketch/rng.hpp"
#include "hrsketch/tensor.hpp"

namespace hrsketch {

// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero gradients from
// turning round-off into huge relative errors.
double relative_error(double analytic, double numeric, double floor = 1e-3);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compare the autodiff gradient of `loss_fn` w.r.t. `param` against central
// differences. loss_fn must rebuild the graph on every call and return a
// scalar. If max_probes is nonzero and smaller than numel, a random subset of
// coordinates drawn from `rng` is probed.
GradCheckResult check_gradient(const std::function<Tensor()>& loss_fn, Tensor param,
                               double step = 1e-4, std::size_t max_probes = 0,
                               Rng* rng = nullptr);

// Central-difference gradient of a scalar function of a flat vector.
std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> x, double step = 1e-4);

}  // namespace hrsketch
