#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hrsketch/data.hpp"
#include "hrsketch/losses.hpp"
#include "hrsketch/rng.hpp"

namespace hrsketch {

// Top-2 principal components of mean-centered features.
struct PcaProjection {
  std::vector<double> coords;                    // [N * 2]
  std::array<std::vector<double>, 2> components;  // unit loading vectors, length d
  std::array<double, 2> variances{};             // eigenvalues, descending
};

// Each component is signed so that its largest-magnitude loading is
// positive. Throws ContractError for fewer than 3 points.
PcaProjection pca_project(std::span<const double> features, std::size_t n, std::size_t d);

struct DistanceRow {
  std::size_t sample = 0;
  std::size_t label = 0;
  std::size_t negative = 0;
  double d_pos = 0.0;
  double d_neg = 0.0;
};

struct DistanceReport {
  std::vector<DistanceRow> rows;  // one sample per distinct class
  std::size_t requested = 0;
  bool clipped = false;
  // over every sample, not just the shown rows
  double mean_d_pos = 0.0, std_d_pos = 0.0;
  double mean_d_neg = 0.0, std_d_neg = 0.0;

  double ratio() const { return mean_d_neg > 0.0 ? mean_d_pos / mean_d_neg : 0.0; }
  std::string csv() const;
  nlohmann::json summary() const;
};

// Squared distances of each feature to its own center and to a negative
// center drawn uniformly from the other classes. Shows the first sample of
// each of the first n_show classes; n_show beyond the number of classes
// present is clipped with a warning on stderr.
DistanceReport distance_report(std::span<const double> features,
                               std::span<const std::size_t> labels, const CenterBank& bank,
                               std::size_t n_show, Rng& rng);

// Geometry of an embedding without a center bank: class means stand in for
// centers, D_neg is the mean distance to the other classes' means.
struct EmbeddingGeometry {
  double mean_d_pos = 0.0;
  double mean_d_neg = 0.0;
  double ratio() const { return mean_d_neg > 0.0 ? mean_d_pos / mean_d_neg : 0.0; }
};
EmbeddingGeometry embedding_geometry(std::span<const double> features,
                                     std::span<const std::size_t> labels, std::size_t n_classes);

// Metric-loss dynamics on a feature cloud: a linear map W (d x d, identity
// at start) is trained by Adam on the hinge loss while the centers follow
// the center rule. The default cloud has 20 classes in 32-d with means
// confined to 8 coordinates and class-independent noise on the other 24.
struct CenterSimConfig {
  FeatureCloudSpec cloud{20, 32, 50, 0.3, 0.5, 8, 3.0, 0};
  MetricKind kind = MetricKind::ctcl;
  double margin = 4.5;
  double center_lr = 0.05;
  double center_init_std = 0.01;
  double embed_lr = 0.001;
  std::size_t steps = 1000;
  std::size_t batch = 28;
  bool learn_embedding = true;
  std::uint64_t seed = 0;
  std::size_t log_every = 50;
};

struct CenterSimStep {
  std::size_t step = 0;
  double loss = 0.0;
  double mean_d_pos = 0.0;
  double mean_d_neg = 0.0;
  double active_fraction = 0.0;
};

struct CenterSimResult {
  std::vector<CenterSimStep> trace;
  CenterBank bank;
  std::vector<double> embedded;  // final W p for every cloud point, [N * d]
  std::vector<std::size_t> labels;
  // Final distances over every point. D_neg follows the loss's own
  // negative choice: nearest other center for the plain loss, the mean over
  // all other centers (the expectation of the uniform draw) for the compact
  // loss.
  double mean_d_pos = 0.0;
  double mean_d_neg = 0.0;
  double ratio() const { return mean_d_neg > 0.0 ? mean_d_pos / mean_d_neg : 0.0; }
};

CenterSimResult run_center_sim(const CenterSimConfig& cfg);

}  // namespace hrsketch
