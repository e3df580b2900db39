#include "hrsketch/losses.hpp"

#include <limits>
#include <numeric>

#include "hrsketch/ops.hpp"

namespace hrsketch {

std::string to_string(MetricKind kind) { return kind == MetricKind::tcl ? "tcl" : "ctcl"; }

MetricKind metric_kind_from_string(const std::string& s) {
  if (s == "tcl") return MetricKind::tcl;
  if (s == "ctcl") return MetricKind::ctcl;
  throw ContractError("unknown loss kind '" + s + "' (expected tcl or ctcl)");
}

std::string to_string(NegativeStrategy s) {
  return s == NegativeStrategy::nearest ? "nearest" : "random";
}

NegativeStrategy negative_strategy_from_string(const std::string& s) {
  if (s == "nearest") return NegativeStrategy::nearest;
  if (s == "random") return NegativeStrategy::random;
  throw ContractError("unknown negative strategy '" + s + "'");
}

CenterBank CenterBank::gaussian(std::size_t n_classes, std::size_t dim, double margin,
                                double eta, std::uint64_t seed, double stddev) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ContractError("center learning rate must be in [0, 1]");
  if (margin < 0.0) throw ContractError("margin must be nonnegative");
  Rng rng(seed);
  CenterBank bank;
  bank.centers = Tensor(Shape{n_classes, dim});
  for (double& v : bank.centers.mutable_values()) v = normal(rng, 0.0, stddev);
  bank.margin = margin;
  bank.eta = eta;
  return bank;
}

std::span<const double> CenterBank::center(std::size_t k) const {
  if (k >= num_classes()) throw IndexError("center " + std::to_string(k) + " out of range");
  return centers.values().subspan(k * dim(), dim());
}

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Tensor as_matrix(const Tensor& features) {
  if (features.dim() == 1) return reshape(features, {1, features.size(0)});
  if (features.dim() != 2) {
    throw DimensionError("features must be [M,d], got " + shape_str(features.shape()));
  }
  return features;
}

void check_batch(const Tensor& f, std::span<const std::size_t> labels, const CenterBank& bank) {
  if (bank.num_classes() < 2) {
    throw ContractError("metric loss needs at least two classes for a negative center");
  }
  if (f.size(0) == 0) throw ContractError("empty batch");
  if (f.size(0) != labels.size()) {
    throw DimensionError(std::to_string(labels.size()) + " labels for " +
                         std::to_string(f.size(0)) + " features");
  }
  if (f.size(1) != bank.dim()) {
    throw DimensionError("feature dim " + std::to_string(f.size(1)) + " vs center dim " +
                         std::to_string(bank.dim()));
  }
  for (std::size_t y : labels) {
    if (y >= bank.num_classes()) throw IndexError("label " + std::to_string(y) + " out of range");
  }
}

// Shared graph for both hinge losses; `kind` selects where the margin goes.
MetricLoss hinge_loss(const Tensor& features, std::span<const std::size_t> labels,
                      const CenterBank& bank, std::span<const std::size_t> negatives,
                      MetricKind kind) {
  Tensor f = as_matrix(features);
  check_batch(f, labels, bank);
  if (negatives.size() != labels.size()) {
    throw DimensionError("one negative per sample required");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (negatives[i] >= bank.num_classes()) throw IndexError("negative class out of range");
    if (negatives[i] == labels[i]) throw ContractError("negative class equals the label");
  }
  const double m = bank.margin;
  Tensor d_pos = sum_last(square(sub(f, gather_rows(bank.centers, labels))));
  Tensor d_neg = sum_last(square(sub(f, gather_rows(bank.centers, negatives))));
  Tensor pre = kind == MetricKind::ctcl ? sub(scale(d_pos, m), d_neg)
                                        : add_scalar(sub(d_pos, d_neg), m);
  Tensor per_sample = relu(pre);
  MetricLoss out;
  out.loss = sum(per_sample);
  auto& r = out.report;
  r.d_pos.assign(d_pos.values().begin(), d_pos.values().end());
  r.d_neg.assign(d_neg.values().begin(), d_neg.values().end());
  r.negatives.assign(negatives.begin(), negatives.end());
  r.active.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) r.active[i] = pre.values()[i] > 0.0 ? 1 : 0;
  r.metric = out.loss.item();
  r.total = r.metric;
  return out;
}

}  // namespace

double LossReport::mean_d_pos() const { return mean_of(d_pos); }
double LossReport::mean_d_neg() const { return mean_of(d_neg); }

double LossReport::active_fraction() const {
  if (active.empty()) return 0.0;
  std::size_t n = 0;
  for (auto a : active) n += a;
  return static_cast<double>(n) / static_cast<double>(active.size());
}

nlohmann::json LossReport::to_json(std::size_t step) const {
  return {{"step", step},
          {"total", total},
          {"ce", ce},
          {"metric", metric},
          {"mean_d_pos", mean_d_pos()},
          {"mean_d_neg", mean_d_neg()},
          {"active_fraction", active_fraction()}};
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("distance between vectors of unequal length");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc;
}

std::vector<std::size_t> draw_negatives(std::span<const std::size_t> labels,
                                        std::size_t n_classes, Rng& rng) {
  if (n_classes < 2) throw ContractError("need at least two classes to draw a negative");
  std::vector<std::size_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) throw IndexError("label out of range");
    // uniform over n_classes - 1 slots, skipping the label
    std::size_t j = uniform_index(rng, n_classes - 1);
    out[i] = j >= labels[i] ? j + 1 : j;
  }
  return out;
}

std::vector<std::size_t> nearest_negatives(const Tensor& features,
                                           std::span<const std::size_t> labels,
                                           const CenterBank& bank) {
  Tensor f = as_matrix(features);
  check_batch(f, labels, bank);
  const std::size_t d = bank.dim();
  std::vector<std::size_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto x = f.values().subspan(i * d, d);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < bank.num_classes(); ++k) {
      if (k == labels[i]) continue;
      const double dist = squared_distance(x, bank.center(k));
      if (dist < best) {
        best = dist;
        out[i] = k;
      }
    }
  }
  return out;
}

MetricLoss tcl_loss(const Tensor& features, std::span<const std::size_t> labels,
                    const CenterBank& bank) {
  auto negatives = nearest_negatives(features, labels, bank);
  return hinge_loss(features, labels, bank, negatives, MetricKind::tcl);
}

MetricLoss ctcl_loss(const Tensor& features, std::span<const std::size_t> labels,
                     const CenterBank& bank, Rng& rng) {
  if (bank.num_classes() < 2) {
    throw ContractError("metric loss needs at least two classes for a negative center");
  }
  auto negatives = draw_negatives(labels, bank.num_classes(), rng);
  return hinge_loss(features, labels, bank, negatives, MetricKind::ctcl);
}

MetricLoss ctcl_loss_with_negatives(const Tensor& features, std::span<const std::size_t> labels,
                                    const CenterBank& bank,
                                    std::span<const std::size_t> negatives) {
  return hinge_loss(features, labels, bank, negatives, MetricKind::ctcl);
}

std::vector<double> ctcl_feature_grad(std::span<const double> x, std::span<const double> c_pos,
                                      std::span<const double> c_neg, double m, double eta) {
  if (x.size() != c_pos.size() || x.size() != c_neg.size()) {
    throw DimensionError("feature and centers must share a dimension");
  }
  if (!(m * squared_distance(x, c_pos) - squared_distance(x, c_neg) > 0.0)) {
    throw ContractError("feature step requested for a hinge-inactive sample");
  }
  std::vector<double> dx(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    dx[i] = eta * ((m - 1.0) * x[i] - m * c_pos[i] + c_neg[i]);
  }
  return dx;
}

std::vector<double> center_deltas(const CenterBank& bank, std::span<const double> features,
                                  std::span<const std::size_t> labels,
                                  std::span<const std::size_t> negatives, MetricKind kind) {
  const std::size_t d = bank.dim(), k = bank.num_classes();
  if (features.size() != labels.size() * d) {
    throw DimensionError("features must hold one d-vector per label");
  }
  if (negatives.size() != labels.size()) throw DimensionError("one negative per sample required");
  const double m = bank.margin;
  const double pull = kind == MetricKind::ctcl ? m : 1.0;
  std::vector<double> delta(k * d, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k) throw IndexError("label " + std::to_string(labels[i]) + " out of range");
    if (negatives[i] >= k) {
      throw IndexError("negative " + std::to_string(negatives[i]) + " out of range");
    }
    auto x = features.subspan(i * d, d);
    auto cp = bank.center(labels[i]);
    auto cn = bank.center(negatives[i]);
    const double dp = squared_distance(x, cp), dn = squared_distance(x, cn);
    const double pre = kind == MetricKind::ctcl ? m * dp - dn : dp + m - dn;
    if (!(pre > 0.0)) continue;
    double* gp = delta.data() + labels[i] * d;
    double* gn = delta.data() + negatives[i] * d;
    for (std::size_t j = 0; j < d; ++j) {
      gp[j] += bank.eta * pull * (x[j] - cp[j]);
      gn[j] += bank.eta * (cn[j] - x[j]);
    }
  }
  return delta;
}

void update_centers(CenterBank& bank, std::span<const double> features,
                    std::span<const std::size_t> labels, std::span<const std::size_t> negatives,
                    MetricKind kind) {
  auto delta = center_deltas(bank, features, labels, negatives, kind);
  auto c = bank.centers.mutable_values();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += delta[i];
}

JointLoss joint_loss(const ForwardOutput& out, std::span<const std::size_t> labels,
                     const CenterBank& bank, const JointLossConfig& cfg, Rng& rng) {
  if (cfg.lambda < 0.0) throw ContractError("lambda must be nonnegative");
  Tensor embedding = as_matrix(out.embedding);
  const std::size_t batch = labels.size();
  Tensor ce = softmax_cross_entropy(out.logits, labels);

  std::vector<std::size_t> negatives =
      cfg.strategy == NegativeStrategy::nearest
          ? nearest_negatives(embedding, labels, bank)
          : draw_negatives(labels, bank.num_classes(), rng);

  JointLoss result;
  MetricLoss metric;
  if (cfg.lambda == 0.0) {
    NoGradGuard no_grad;
    metric = hinge_loss(embedding, labels, bank, negatives, cfg.kind);
    result.total = ce;
  } else {
    metric = hinge_loss(embedding, labels, bank, negatives, cfg.kind);
    result.total =
        add(ce, scale(metric.loss, cfg.lambda / static_cast<double>(batch)));
  }
  result.report = std::move(metric.report);
  result.report.ce = ce.item();
  result.report.metric = metric.loss.item() / static_cast<double>(batch);
  result.report.total = result.total.item();
  return result;
}

}  // namespace hrsketch
