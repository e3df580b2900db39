#include "hrsketch/analysis.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <iostream>
#include <limits>
#include <sstream>

#include "hrsketch/errors.hpp"
#include "hrsketch/ops.hpp"
#include "hrsketch/optim.hpp"

namespace hrsketch {

PcaProjection pca_project(std::span<const double> features, std::size_t n, std::size_t d) {
  if (n < 3) throw ContractError("PCA needs at least 3 points, got " + std::to_string(n));
  if (d < 2) throw ContractError("PCA to 2 components needs d >= 2");
  if (features.size() != n * d) throw DimensionError("features must be [N * d]");
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> x(features.data(), static_cast<Eigen::Index>(n),
                          static_cast<Eigen::Index>(d));
  Mat centered = x.rowwise() - x.colwise().mean();
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw ContractError("eigendecomposition failed");

  PcaProjection out;
  Eigen::MatrixXd basis(d, 2);
  for (int c = 0; c < 2; ++c) {
    // eigenvalues come back ascending
    const Eigen::Index col = static_cast<Eigen::Index>(d) - 1 - c;
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    basis.col(c) = v;
    out.components[static_cast<std::size_t>(c)].assign(v.data(), v.data() + d);
    out.variances[static_cast<std::size_t>(c)] = std::max(0.0, eig.eigenvalues()(col));
  }
  Mat proj = centered * basis;
  out.coords.assign(proj.data(), proj.data() + n * 2);
  return out;
}

namespace {

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  sd = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (double x : v) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / static_cast<double>(v.size()));
}

}  // namespace

std::string DistanceReport::csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "sample,label,negative,d_pos,d_neg\n";
  for (const auto& r : rows) {
    os << r.sample << ',' << r.label << ',' << r.negative << ',' << r.d_pos << ',' << r.d_neg
       << '\n';
  }
  return os.str();
}

nlohmann::json DistanceReport::summary() const {
  return {{"shown", rows.size()},       {"requested", requested}, {"clipped", clipped},
          {"mean_d_pos", mean_d_pos},   {"std_d_pos", std_d_pos}, {"mean_d_neg", mean_d_neg},
          {"std_d_neg", std_d_neg},     {"ratio", ratio()}};
}

DistanceReport distance_report(std::span<const double> features,
                               std::span<const std::size_t> labels, const CenterBank& bank,
                               std::size_t n_show, Rng& rng) {
  const std::size_t d = bank.dim();
  if (features.size() != labels.size() * d) {
    throw DimensionError("features must hold one d-vector per label");
  }
  auto negatives = draw_negatives(labels, bank.num_classes(), rng);
  DistanceReport rep;
  rep.requested = n_show;
  std::vector<double> dp(labels.size()), dn(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto x = features.subspan(i * d, d);
    dp[i] = squared_distance(x, bank.center(labels[i]));
    dn[i] = squared_distance(x, bank.center(negatives[i]));
  }
  mean_std(dp, rep.mean_d_pos, rep.std_d_pos);
  mean_std(dn, rep.mean_d_neg, rep.std_d_neg);

  std::vector<bool> seen(bank.num_classes(), false);
  std::size_t distinct = 0;
  for (std::size_t y : labels) {
    if (!seen[y]) {
      seen[y] = true;
      ++distinct;
    }
  }
  if (n_show > distinct) {
    std::cerr << "warning: " << n_show << " samples requested but only " << distinct
              << " classes present; showing " << distinct << "\n";
    rep.clipped = true;
    n_show = distinct;
  }
  std::fill(seen.begin(), seen.end(), false);
  for (std::size_t i = 0; i < labels.size() && rep.rows.size() < n_show; ++i) {
    if (seen[labels[i]]) continue;
    seen[labels[i]] = true;
    rep.rows.push_back({i, labels[i], negatives[i], dp[i], dn[i]});
  }
  return rep;
}

EmbeddingGeometry embedding_geometry(std::span<const double> features,
                                     std::span<const std::size_t> labels,
                                     std::size_t n_classes) {
  if (labels.empty()) throw ContractError("no samples");
  if (n_classes < 2) throw ContractError("geometry needs at least two classes");
  const std::size_t d = features.size() / labels.size();
  if (features.size() != labels.size() * d) throw DimensionError("ragged features");
  std::vector<double> means(n_classes * d, 0.0);
  std::vector<std::size_t> counts(n_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) throw IndexError("label out of range");
    ++counts[labels[i]];
    for (std::size_t j = 0; j < d; ++j) means[labels[i] * d + j] += features[i * d + j];
  }
  std::vector<std::size_t> present;
  for (std::size_t k = 0; k < n_classes; ++k) {
    if (counts[k] == 0) continue;
    present.push_back(k);
    for (std::size_t j = 0; j < d; ++j) means[k * d + j] /= static_cast<double>(counts[k]);
  }
  if (present.size() < 2) throw ContractError("geometry needs samples from two classes");
  std::span<const double> m(means);
  EmbeddingGeometry g;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto x = features.subspan(i * d, d);
    g.mean_d_pos += squared_distance(x, m.subspan(labels[i] * d, d));
    double neg = 0.0;
    for (std::size_t k : present) {
      if (k != labels[i]) neg += squared_distance(x, m.subspan(k * d, d));
    }
    g.mean_d_neg += neg / static_cast<double>(present.size() - 1);
  }
  g.mean_d_pos /= static_cast<double>(labels.size());
  g.mean_d_neg /= static_cast<double>(labels.size());
  return g;
}

CenterSimResult run_center_sim(const CenterSimConfig& cfg) {
  if (cfg.batch < 1) throw ContractError("batch must be at least 1");
  FeatureCloud cloud = generate_feature_cloud(cfg.cloud);
  const std::size_t dim = cloud.spec.dim, k = cloud.spec.n_classes, n = cloud.size();

  CenterSimResult res;
  res.bank = CenterBank::gaussian(k, dim, cfg.margin, cfg.center_lr,
                                  mix_seed({cfg.seed, 0x63656e74ULL}), cfg.center_init_std);
  Tensor w(Shape{dim, dim}, 0.0, true);
  for (std::size_t i = 0; i < dim; ++i) w.mutable_values()[i * dim + i] = 1.0;
  Adam adam({w}, AdamOptions{cfg.embed_lr});
  Rng batch_rng(mix_seed({cfg.seed, 1}));
  Rng neg_rng(mix_seed({cfg.seed, 2}));

  std::vector<std::size_t> idx(cfg.batch), labels(cfg.batch);
  std::vector<double> pts(cfg.batch * dim);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      idx[b] = uniform_index(batch_rng, n);
      labels[b] = cloud.labels[idx[b]];
      auto p = cloud.point(idx[b]);
      std::copy(p.begin(), p.end(), pts.begin() + static_cast<std::ptrdiff_t>(b * dim));
    }
    Tensor batch(Shape{cfg.batch, dim}, pts);
    Tensor f = matmul(batch, w);
    MetricLoss ml = cfg.kind == MetricKind::tcl ? tcl_loss(f, labels, res.bank)
                                                : ctcl_loss(f, labels, res.bank, neg_rng);
    if (cfg.learn_embedding) {
      adam.zero_grad();
      backward(scale(ml.loss, 1.0 / static_cast<double>(cfg.batch)));
      adam.step();
    }
    update_centers(res.bank, f.values(), labels, ml.report.negatives, cfg.kind);
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      res.trace.push_back({step, ml.report.metric / static_cast<double>(cfg.batch),
                           ml.report.mean_d_pos(), ml.report.mean_d_neg(),
                           ml.report.active_fraction()});
    }
  }

  {
    NoGradGuard no_grad;
    Tensor all(Shape{n, dim}, cloud.points);
    Tensor f = matmul(all, w);
    res.embedded.assign(f.values().begin(), f.values().end());
  }
  res.labels = cloud.labels;
  std::span<const double> e(res.embedded);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = e.subspan(i * dim, dim);
    const std::size_t y = res.labels[i];
    res.mean_d_pos += squared_distance(x, res.bank.center(y));
    double neg = cfg.kind == MetricKind::tcl ? std::numeric_limits<double>::infinity() : 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (c == y) continue;
      const double dist = squared_distance(x, res.bank.center(c));
      if (cfg.kind == MetricKind::tcl) neg = std::min(neg, dist);
      else neg += dist;
    }
    if (cfg.kind == MetricKind::ctcl) neg /= static_cast<double>(k - 1);
    res.mean_d_neg += neg;
  }
  res.mean_d_pos /= static_cast<double>(n);
  res.mean_d_neg /= static_cast<double>(n);
  return res;
}

}  // namespace hrsketch
