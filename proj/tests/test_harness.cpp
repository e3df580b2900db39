#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "hrsketch/analysis.hpp"
#include "hrsketch/config.hpp"
#include "hrsketch/errors.hpp"
#include "hrsketch/harness.hpp"
#include "hrsketch/optim.hpp"
#include "test_util.hpp"

using namespace hrsketch;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(std::size_t epochs = 2) {
  TrainConfig c = TrainConfig::desk();
  c.epochs = epochs;
  c.batch_size = 8;
  return c;
}

const Dataset& tiny_dataset() {
  static const Dataset ds = generate_synthetic_sketches(4, 9, 72, 1);
  return ds;
}

// Cyclic Jacobi eigenvalue iteration for a small symmetric matrix.
void jacobi_eigen(std::vector<std::vector<double>> a, std::vector<double>& values,
                  std::vector<std::vector<double>>& vectors) {
  const std::size_t n = a.size();
  vectors.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) vectors[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vectors[k][p], vkq = vectors[k][q];
          vectors[k][p] = c * vkp - s * vkq;
          vectors[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  values.resize(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a[i][i];
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  CHECK(lr_at(0) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(lr_at(9) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(lr_at(10) == doctest::Approx(6.5e-4).epsilon(1e-12));
  CHECK(lr_at(100) == doctest::Approx(0.001 * std::pow(0.65, 10)).epsilon(1e-12));
  CHECK(lr_at(120) == doctest::Approx(0.001 * std::pow(0.65, 10) * 0.95).epsilon(1e-12));
  double prev = lr_at(0);
  for (long e = 1; e <= 180; ++e) {
    CHECK(lr_at(e) <= prev);
    prev = lr_at(e);
  }
  CHECK_THROWS_AS(lr_at(-1), ContractError);
}

TEST_CASE("config parsing and precedence") {
  auto kv = parse_key_values("# comment\nlambda = 0.1\n\n  epochs=3  # trailing\n");
  CHECK(kv.at("lambda") == "0.1");
  CHECK(kv.at("epochs") == "3");

  TrainConfig base;
  auto cfg = resolve_config(base, {{"scale", "desk"}, {"epochs", "5"}, {"beta", "0.5"}},
                            {{"epochs", "7"}});
  CHECK(cfg.scale == ModelScale::desk);
  CHECK(cfg.image_side == 72);
  CHECK(cfg.epochs == 7);
  CHECK(cfg.beta == 0.5);

  TrainConfig c;
  CHECK_THROWS_AS(c.set("no_such_key", "1"), ContractError);
  CHECK_THROWS_AS(c.set("epochs", "three"), ContractError);
  CHECK_THROWS_AS(c.set("lambda", "0.1x"), ContractError);
  CHECK_THROWS_AS(resolve_config(base, {}, {{"beta", "2"}}), ContractError);
  CHECK_THROWS_AS(read_key_values("/nonexistent/hrsketch.cfg"), LoadError);

  for (const auto& key : TrainConfig::keys()) CHECK(c.to_json().contains(key));
  CHECK(c.negative_strategy() == NegativeStrategy::random);
  c.loss = MetricKind::tcl;
  CHECK(c.negative_strategy() == NegativeStrategy::nearest);
}

TEST_CASE("training is an exact replay of its seed") {
  const auto& ds = tiny_dataset();
  auto cfg = tiny_config();
  auto a = run_experiment(ds, cfg);
  auto b = run_experiment(ds, cfg);
  CHECK(a.record.fingerprint() == b.record.fingerprint());
  CHECK(a.record.steps.size() == b.record.steps.size());
  CHECK(a.record.steps.back().dump() == b.record.steps.back().dump());
  cfg.seed = 1;
  CHECK(run_experiment(ds, cfg).record.fingerprint() != a.record.fingerprint());
}

TEST_CASE("every training sample is visited once per epoch") {
  const auto& ds = tiny_dataset();
  auto cfg = tiny_config(3);
  std::map<std::size_t, std::vector<std::size_t>> seen;
  TrainHooks hooks;
  hooks.on_batch = [&](std::size_t epoch, const std::vector<std::size_t>& idx) {
    CHECK(idx.size() <= cfg.batch_size);
    seen[epoch].insert(seen[epoch].end(), idx.begin(), idx.end());
  };
  auto ex = run_experiment(ds, cfg, hooks);
  REQUIRE(seen.size() == 3);
  for (auto& [epoch, idx] : seen) {
    std::sort(idx.begin(), idx.end());
    CHECK(idx == ex.split.train);
  }
  CHECK(seen[0] == seen[1]);
  CHECK(ex.record.epochs.size() == 3);
  for (const auto& e : ex.record.epochs) CHECK(std::isfinite(e.train_loss));
}

TEST_CASE("lambda toggle keeps the step-0 draws") {
  const auto& ds = tiny_dataset();
  auto cfg = tiny_config(1);
  auto joint = run_experiment(ds, cfg);
  cfg.lambda = 0.0;
  auto plain = run_experiment(ds, cfg);
  const auto& a = joint.record.steps.front();
  const auto& b = plain.record.steps.front();
  CHECK(a.at("ce").get<double>() == b.at("ce").get<double>());
  CHECK(a.at("mean_d_neg").get<double>() == b.at("mean_d_neg").get<double>());
  CHECK(a.at("mean_d_pos").get<double>() == b.at("mean_d_pos").get<double>());
  CHECK(b.at("total").get<double>() == b.at("ce").get<double>());
}

TEST_CASE("non-finite loss aborts with the batch ids") {
  Dataset ds = tiny_dataset();
  for (auto& p : ds.samples[0].image.pixels) p = std::numeric_limits<double>::quiet_NaN();
  auto cfg = tiny_config(1);
  cfg.augment = false;
  cfg.validation_fraction = 0.0;
  Split split;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) split.train.push_back(i);
  Network net(cfg.network_config(4));
  net.init(1);
  auto bank = CenterBank::gaussian(4, net.config().embedding_dim(), 4.5, 0.05, 1);
  try {
    train(net, bank, ds, split, cfg);
    FAIL("expected a TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find(ds.samples[0].id) != std::string::npos);
  }
}

TEST_CASE("small set is memorized") {
  const Dataset ds = generate_synthetic_sketches(4, 6, 72, 2);
  auto cfg = tiny_config(15);
  cfg.augment = false;
  cfg.keep_best = false;
  Split split;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) split.train.push_back(i);
  Network net(cfg.network_config(4));
  net.init(3);
  auto bank = CenterBank::gaussian(4, net.config().embedding_dim(), cfg.margin, cfg.center_lr, 3);
  auto rec = train(net, bank, ds, split, cfg);
  MESSAGE("memorization train accuracy " << rec.final_train_accuracy);
  CHECK(rec.final_train_accuracy == 1.0);
}

TEST_CASE("untrained model sits near chance") {
  const Dataset ds = generate_synthetic_sketches(8, 40, 72, 4);
  auto cfg = tiny_config();
  Network net(cfg.network_config(8));
  net.init(5);
  std::vector<std::size_t> all(ds.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  auto r = evaluate(net, ds, all, cfg.augmentation);
  const double sigma = std::sqrt(0.125 * 0.875 / double(all.size()));
  MESSAGE("untrained accuracy " << r.accuracy);
  CHECK(std::abs(r.accuracy - 0.125) <= 3.0 * sigma);
}

TEST_CASE("evaluation, checkpoints and the class registry") {
  const auto& ds = tiny_dataset();
  auto cfg = tiny_config();
  auto ex = run_experiment(ds, cfg);
  auto e1 = evaluate(*ex.network, ds, ex.split.test, cfg.augmentation);
  auto e2 = evaluate(*ex.network, ds, ex.split.test, cfg.augmentation);
  CHECK(e1.accuracy == e2.accuracy);
  CHECK(e1.mean_loss == e2.mean_loss);
  CHECK(e1.count == ex.split.test.size());
  std::size_t total = 0;
  for (const auto& row : e1.confusion)
    for (auto v : row) total += v;
  CHECK(total == e1.count);
  CHECK(e1.per_class_csv(ds.classes).rfind("class,count,accuracy", 0) == 0);

  const auto path = fs::temp_directory_path() / "hrsketch_harness_model.ckpt";
  save_model(path, *ex.network, ex.bank, ds.classes, cfg);
  auto loaded = load_model(path);
  check_registry(loaded, ds);
  auto e3 = evaluate(*loaded.network, ds, ex.split.test, cfg.augmentation);
  CHECK(e3.accuracy == e1.accuracy);
  CHECK(e3.mean_loss == e1.mean_loss);
  CHECK(testutil::to_vec(loaded.bank.centers) == testutil::to_vec(ex.bank.centers));

  Dataset other = generate_synthetic_sketches(5, 3, 72, 1);
  CHECK_THROWS_AS(check_registry(loaded, other), ContractError);
  std::vector<std::size_t> some{0};
  CHECK_THROWS_AS(evaluate(*loaded.network, other, some, cfg.augmentation), ContractError);
  fs::remove(path);
}

TEST_CASE("distance report") {
  auto bank = CenterBank::gaussian(3, 2, 4.5, 0.5, 1, 1.0);
  std::vector<std::size_t> labels{0, 1, 2, 0, 1, 2};
  std::vector<double> f;
  for (auto y : labels) {
    auto c = bank.center(y);
    f.insert(f.end(), c.begin(), c.end());
  }
  Rng rng(2);
  auto r = distance_report(f, labels, bank, 10, rng);
  CHECK(r.clipped);
  CHECK(r.requested == 10);
  CHECK(r.rows.size() == 3);
  CHECK(r.mean_d_pos == 0.0);
  CHECK(r.mean_d_neg > 0.0);
  for (const auto& row : r.rows) {
    CHECK(row.d_pos == 0.0);
    CHECK(row.negative != row.label);
  }
  auto two = distance_report(f, labels, bank, 2, rng);
  CHECK_FALSE(two.clipped);
  CHECK(two.rows.size() == 2);
  CHECK(two.csv().find("d_pos") != std::string::npos);
}

TEST_CASE("PCA agrees with an independent eigendecomposition") {
  Rng rng(7);
  const std::size_t n = 40, d = 4;
  std::vector<double> x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = normal(rng), u = normal(rng);
    x[i * d + 0] = 3.0 * t + 0.1 * normal(rng);
    x[i * d + 1] = -2.0 * t + u;
    x[i * d + 2] = 0.5 * u + 0.1 * normal(rng);
    x[i * d + 3] = 0.2 * normal(rng) + 5.0;
  }
  auto p = pca_project(x, n, d);

  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += x[i * d + j] / double(n);
  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        cov[a][b] += (x[i * d + a] - mu[a]) * (x[i * d + b] - mu[b]) / double(n - 1);
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;
  jacobi_eigen(cov, values, vectors);
  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] > values[b]; });

  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(p.variances[c] == doctest::Approx(values[order[c]]).epsilon(1e-9));
    std::vector<double> v(d);
    for (std::size_t j = 0; j < d; ++j) v[j] = vectors[j][order[c]];
    std::size_t big = 0;
    for (std::size_t j = 1; j < d; ++j)
      if (std::abs(v[j]) > std::abs(v[big])) big = j;
    const double sign = v[big] < 0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(p.components[c][j] == doctest::Approx(sign * v[j]).epsilon(1e-7));
    }
    for (std::size_t i = 0; i < n; ++i) {
      double proj = 0.0;
      for (std::size_t j = 0; j < d; ++j) proj += (x[i * d + j] - mu[j]) * sign * v[j];
      CHECK(p.coords[i * 2 + c] == doctest::Approx(proj).epsilon(1e-7));
    }
  }
  CHECK(p.variances[0] >= p.variances[1]);
  CHECK_THROWS_AS(pca_project(std::vector<double>(4, 0.0), 2, 2), ContractError);
}

TEST_CASE("embedding geometry uses class means") {
  std::vector<double> f{0, 0, 2, 0, 10, 0, 12, 0};
  std::vector<std::size_t> y{0, 0, 1, 1};
  auto g = embedding_geometry(f, y, 2);
  CHECK(g.mean_d_pos == doctest::Approx(1.0));
  // class means (1,0) and (11,0)
  CHECK(g.mean_d_neg == doctest::Approx((121.0 + 81.0 + 81.0 + 121.0) / 4.0));
}

TEST_CASE("sweeps and ablations") {
  const auto& ds = tiny_dataset();
  auto cfg = tiny_config(1);
  CHECK_THROWS_AS(sweep(ds, cfg, "beta", {}), ContractError);
  CHECK_THROWS_AS(sweep(ds, cfg, "lambda", {0.1}), ContractError);

  auto single = sweep(ds, cfg, "beta", {cfg.beta});
  REQUIRE(single.rows.size() == 1);
  CHECK(single.rows[0].fingerprint == run_experiment(ds, cfg).record.fingerprint());

  auto m = sweep(ds, cfg, "m", {2.0, 4.5});
  CHECK(m.has_band);
  CHECK_FALSE(m.rows[0].in_stable_band);
  CHECK(m.rows[1].in_stable_band);
  CHECK(m.band_spread == 0.0);

  auto rows = ablate(ds, cfg, AblationKind::loss);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].variant == "tcl");
  CHECK(rows[0].config.margin == 5.0);
  CHECK(rows[1].config.margin == 4.5);
  CHECK(rows[0].delta == 0.0);
  CHECK(rows[1].delta == doctest::Approx(rows[1].test_accuracy - rows[0].test_accuracy));
  CHECK(ablation_csv(rows).rfind("variant,test_accuracy,delta", 0) == 0);

  auto levels = ablate(ds, cfg, AblationKind::residual_level);
  REQUIRE(levels.size() == 3);
  CHECK(levels[2].fingerprint == run_experiment(ds, cfg).record.fingerprint());
  CHECK_THROWS_AS(ablation_kind_from_string("width"), ContractError);
}
