#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hrsketch/gradcheck.hpp"

namespace hrsketch {

struct OperatorCheck {
  std::string name;
  GradCheckResult result;
};

// Central-difference checks of every differentiable operator, both block
// kinds and a small end-to-end network.
std::vector<OperatorCheck> operator_gradchecks(std::uint64_t seed);

// Largest relative error between the autodiff feature gradient of the
// compact loss and 2/eta times the closed-form feature step, over n random
// hinge-active instances.
double ctcl_feature_agreement(std::size_t n, std::uint64_t seed);

// Smallest cosine between the center step and the negative autodiff
// gradient w.r.t. each touched center, over n random batches.
double center_rule_min_cosine(std::size_t n, std::uint64_t seed);

}  // namespace hrsketch
