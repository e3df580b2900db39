#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hrsketch/network.hpp"
#include "hrsketch/rng.hpp"
#include "hrsketch/tensor.hpp"

namespace hrsketch {

// Triplet-center loss (nearest negative, additive margin) and the compact
// variant (random negative, multiplicative margin on the positive distance).
enum class MetricKind { tcl, ctcl };
enum class NegativeStrategy { random, nearest };

std::string to_string(MetricKind kind);
MetricKind metric_kind_from_string(const std::string& s);
std::string to_string(NegativeStrategy s);
NegativeStrategy negative_strategy_from_string(const std::string& s);

// Per-class centers c_k in R^d. Centers are moved by update_centers only,
// never by the network optimizer.
struct CenterBank {
  Tensor centers;       // [n_classes, d]
  double margin = 4.5;  // m
  double eta = 0.5;     // center learning rate, in [0, 1]

  // N(0, stddev^2) entries drawn from `seed`.
  static CenterBank gaussian(std::size_t n_classes, std::size_t dim, double margin,
                             double eta, std::uint64_t seed, double stddev = 0.01);

  std::size_t num_classes() const { return centers.size(0); }
  std::size_t dim() const { return centers.size(1); }
  std::span<const double> center(std::size_t k) const;
};

struct LossReport {
  double total = 0.0;
  double ce = 0.0;
  double metric = 0.0;
  std::vector<double> d_pos;  // squared distance to own center
  std::vector<double> d_neg;  // squared distance to the selected negative
  std::vector<std::uint8_t> active;
  std::vector<std::size_t> negatives;

  double mean_d_pos() const;
  double mean_d_neg() const;
  double active_fraction() const;
  // {step, total, ce, metric, mean_d_pos, mean_d_neg, active_fraction}
  nlohmann::json to_json(std::size_t step) const;
};

struct MetricLoss {
  Tensor loss;  // scalar: sum of the per-sample hinge terms
  LossReport report;  // report.metric == report.total == loss value
};

// Squared Euclidean distance.
double squared_distance(std::span<const double> a, std::span<const double> b);

// One negative class per sample, uniform over the classes != label.
std::vector<std::size_t> draw_negatives(std::span<const std::size_t> labels,
                                        std::size_t n_classes, Rng& rng);
// Closest other-class center per sample (lowest index on ties).
std::vector<std::size_t> nearest_negatives(const Tensor& features,
                                           std::span<const std::size_t> labels,
                                           const CenterBank& bank);

// sum_i max(D(f_i, c_{y_i}) + m - min_{j != y_i} D(f_i, c_j), 0)
MetricLoss tcl_loss(const Tensor& features, std::span<const std::size_t> labels,
                    const CenterBank& bank);

// sum_i max(m * D(x_i, c_{y_i}) - D(x_i, c_{y_j}), 0), y_j drawn uniformly
// from the other classes. The draws are recorded in report.negatives.
MetricLoss ctcl_loss(const Tensor& features, std::span<const std::size_t> labels,
                     const CenterBank& bank, Rng& rng);
MetricLoss ctcl_loss_with_negatives(const Tensor& features, std::span<const std::size_t> labels,
                                    const CenterBank& bank,
                                    std::span<const std::size_t> negatives);

// Feature step for one hinge-active sample:
//     dx = eta * ((m - 1) x - m c_pos + c_neg)
// which is eta / 2 times the true gradient of the active hinge term.
std::vector<double> ctcl_feature_grad(std::span<const double> x, std::span<const double> c_pos,
                                      std::span<const double> c_neg, double m, double eta);

// Center step over a batch, evaluated at the current centers and applied
// simultaneously. For every hinge-active sample i with drawn negative y_j:
//     c_{y_i} += eta * w * (x_i - c_{y_i})
//     c_{y_j} += eta * (c_{y_j} - x_i)
// with w = m for the compact loss and w = 1 for the plain loss. Like the
// feature step, this is eta / 2 times the negative gradient.
std::vector<double> center_deltas(const CenterBank& bank, std::span<const double> features,
                                  std::span<const std::size_t> labels,
                                  std::span<const std::size_t> negatives, MetricKind kind);
void update_centers(CenterBank& bank, std::span<const double> features,
                    std::span<const std::size_t> labels, std::span<const std::size_t> negatives,
                    MetricKind kind = MetricKind::ctcl);

struct JointLossConfig {
  double lambda = 0.024;
  MetricKind kind = MetricKind::ctcl;
  NegativeStrategy strategy = NegativeStrategy::random;
};

struct JointLoss {
  Tensor total;  // scalar graph root
  LossReport report;
};

// Per-sample joint objective averaged over the batch:
//     mean_i [ CE(logits_i, y_i) + lambda * hinge_i ]
// report.ce and report.metric are the batch means of each term. With
// lambda = 0 the metric term is evaluated for reporting only and stays out
// of the graph.
JointLoss joint_loss(const ForwardOutput& out, std::span<const std::size_t> labels,
                     const CenterBank& bank, const JointLossConfig& cfg, Rng& rng);

}  // namespace hrsketch
