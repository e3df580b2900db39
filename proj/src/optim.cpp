#include "hrsketch/optim.hpp"

#include <cmath>

namespace hrsketch {

double LrSchedule::at(long epoch) const {
  if (epoch < 0) throw ContractError("epoch must be nonnegative");
  if (epoch <= decay_until) {
    return initial * std::pow(decay, static_cast<double>(epoch / decay_every));
  }
  const double base = initial * std::pow(decay, static_cast<double>(decay_until / decay_every));
  return base * std::pow(late_decay, static_cast<double>((epoch - decay_until) / late_every));
}

double lr_at(long epoch, const LrSchedule& schedule) { return schedule.at(epoch); }

Adam::Adam(std::vector<Tensor> params, AdamOptions opts)
    : params_(std::move(params)), opts_(opts) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g[j];
      v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g[j] * g[j];
      w[j] -= opts_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + opts_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace hrsketch
