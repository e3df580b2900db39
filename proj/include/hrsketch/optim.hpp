#pragma once

#include <cstddef>
#include <vector>

#include "hrsketch/tensor.hpp"

namespace hrsketch {

// Step schedule: x decay every `decay_every` epochs up to `decay_until`,
// then x late_decay every `late_every` epochs starting from the value
// reached at decay_until.
struct LrSchedule {
  double initial = 0.001;
  double decay = 0.65;
  long decay_every = 10;
  long decay_until = 100;
  double late_decay = 0.95;
  long late_every = 20;

  double at(long epoch) const;
};

double lr_at(long epoch, const LrSchedule& schedule = {});

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions opts = {});

  // Applies one update from the gradients currently held by the parameters;
  // parameters without a gradient are left untouched.
  void step();
  void zero_grad();
  void set_lr(double lr) { opts_.lr = lr; }
  double lr() const { return opts_.lr; }
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamOptions opts_;
  std::size_t t_ = 0;
};

}  // namespace hrsketch
